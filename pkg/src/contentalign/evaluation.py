"""ZSL / GZSL evaluation and the ablation sweep harness."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import CorpusManifest, DatasetView
from .infer import build_prompt_bank, calibrate, predict, score_early_fusion, score_late_fusion
from .model import ContentAlignModel, ModelConfig
from .splits import SplitSpec
from .train import DEFAULT_TEMPLATE, TrainConfig, fit

log = logging.getLogger(__name__)

FUSIONS = ("late", "early")
GAMMA_POINTS = 41


class ProvenanceWarning(UserWarning):
    pass


class ProvenanceMismatch(RuntimeError):
    """Strict-mode evaluation of a checkpoint trained on another split."""


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ClassAccuracy:
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return 100.0 * self.correct / self.total


def per_class_top1(predictions, labels, class_set) -> tuple[dict[int, ClassAccuracy], float]:
    """Per-class accuracy table and its unweighted mean (percent) over ``class_set``."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    table: dict[int, ClassAccuracy] = {}
    for c in sorted(int(k) for k in class_set):
        sel = labels == c
        total = int(sel.sum())
        if total == 0:
            raise ValueError(f"class {c} has no samples in the evaluated set")
        table[c] = ClassAccuracy(int((predictions[sel] == c).sum()), total)
    if not table:
        raise ValueError("empty class set")
    return table, float(np.mean([a.accuracy for a in table.values()]))


def harmonic_mean(u: float, s: float) -> float:
    if u < 0 or s < 0:
        raise ValueError("accuracies must be non-negative")
    return 0.0 if u + s == 0 else 2.0 * u * s / (u + s)


# ---------------------------------------------------------------------------
# data partitions


def gzsl_holdout(
    manifest: CorpusManifest, split: SplitSpec, fraction: float = 0.2, seed: int = 0
) -> tuple[list[str], list[str]]:
    """(training ids, held-out seen-class ids) for ``split``.

    A seeded ``fraction`` of every seen class is held out for GZSL testing
    and never trained on. The choice per class does not depend on the split.
    """
    by_class: dict[int, list[str]] = {}
    for rid in manifest.ids:
        by_class.setdefault(manifest.label_of(rid), []).append(rid)
    train, held = [], []
    for c in sorted(split.seen):
        ids = by_class.get(c, [])
        rng = np.random.default_rng([seed, c])
        perm = rng.permutation(len(ids))
        n_held = int(round(fraction * len(ids))) if len(ids) > 1 else 0
        n_held = min(max(n_held, 1 if fraction > 0 and len(ids) > 1 else 0), len(ids) - 1)
        held_set = set(perm[:n_held].tolist())
        for k, rid in enumerate(ids):
            (held if k in held_set else train).append(rid)
    return sorted(train), sorted(held)


def training_view(manifest: CorpusManifest, split: SplitSpec, channel: str, fraction: float = 0.2, seed: int = 0) -> DatasetView:
    train, _ = gzsl_holdout(manifest, split, fraction, seed)
    return DatasetView(manifest, channel, train)


def _stratified_halves(ids: Sequence[str], labels: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks (validation, test) splitting each class roughly in half."""
    val = np.zeros(len(ids), bool)
    for c in np.unique(labels):
        pos = np.nonzero(labels == c)[0]
        perm = np.random.default_rng([seed, int(c), 1]).permutation(len(pos))
        val[pos[perm[: len(pos) // 2]]] = True
    return val, ~val


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    setting: str
    split: str
    channel: str
    fusion: str
    t1: float | None = None
    u: float | None = None
    s: float | None = None
    h: float | None = None
    gamma: float | None = None
    per_class: dict[str, dict] = field(default_factory=dict)
    sweep: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def write_sweep_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gamma", "u", "s", "H"])
            for row in self.sweep:
                w.writerow([f"{row['gamma']:.10g}", f"{row['u']:.2f}", f"{row['s']:.2f}", f"{row['H']:.2f}"])
        return path

    def markdown(self) -> str:
        if self.setting == "ZSL":
            body = f"| {self.split} | {self.channel} | {self.fusion} | {self.t1:.2f} |"
            return "| Split | Channel | Fusion | T1 |\n|---|---|---|---|\n" + body + "\n"
        body = f"| {self.split} | {self.channel} | {self.fusion} | {self.u:.2f} | {self.s:.2f} | {self.h:.2f} | {self.gamma:.4g} |"
        return "| Split | Channel | Fusion | u | s | H | gamma |\n|---|---|---|---|---|---|---|\n" + body + "\n"


def _table(manifest: CorpusManifest, table: Mapping[int, ClassAccuracy]) -> dict[str, dict]:
    return {
        manifest.classes[c].name: {"correct": a.correct, "total": a.total, "accuracy": round(a.accuracy, 2)}
        for c, a in table.items()
    }


def _check_provenance(provenance: Mapping | None, split: SplitSpec, manifest: CorpusManifest, strict: bool) -> None:
    if not provenance or provenance.get("seen") is None:
        return
    expected = sorted(manifest.classes[k].name for k in split.seen)
    if sorted(provenance["seen"]) != expected:
        msg = f"checkpoint trained on split {provenance.get('split')!r}, evaluating split {split.name!r}"
        if strict:
            raise ProvenanceMismatch(f"provenance mismatch: {msg}")
        warnings.warn(msg, ProvenanceWarning, stacklevel=3)


def _scores(model, bank, images, contents, fusion, mode):
    temps = model.temperatures
    if fusion == "late":
        return score_late_fusion(images, contents, bank, temps, mode)[2]
    if fusion == "early":
        return score_early_fusion(images, contents, bank, temps, mode)
    raise ValueError(f"fusion must be one of {FUSIONS}")


def embed_records(model: ContentAlignModel, view: DatasetView, ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    return model.embed_images(view.manifest.images(ids)), model.embed_contents(view.texts(ids))


def run_zsl(
    model: ContentAlignModel,
    manifest: CorpusManifest,
    split: SplitSpec,
    channel: str,
    fusion: str = "late",
    template: str = DEFAULT_TEMPLATE,
    provenance: Mapping | None = None,
    strict: bool = False,
    mode: str = "multiply",
) -> EvalReport:
    """Classify every unseen-class record among the unseen classes only."""
    _check_provenance(provenance, split, manifest, strict)
    unseen = sorted(split.unseen)
    bank = build_prompt_bank([manifest.classes[k].name for k in unseen], model, template, unseen)
    view = DatasetView(manifest, channel).where_label(unseen)
    images, contents = embed_records(model, view, view.ids)
    pred = np.asarray(unseen)[predict(_scores(model, bank, images, contents, fusion, mode))]
    table, t1 = per_class_top1(pred, view.labels, unseen)
    return EvalReport(
        "ZSL", split.name, channel, fusion, t1=t1, per_class=_table(manifest, table),
        config={"template": template, "mode": mode, "n_records": len(view)},
    )


def gamma_grid(scores: np.ndarray, points: int = GAMMA_POINTS) -> np.ndarray:
    """``points`` values evenly spaced over ``[0, largest per-record score range]``."""
    span = float(np.max(scores.max(axis=1) - scores.min(axis=1))) if scores.size else 0.0
    return np.linspace(0.0, span, points)


def run_gzsl(
    model: ContentAlignModel,
    manifest: CorpusManifest,
    split: SplitSpec,
    channel: str,
    gammas: Sequence[float] | None = None,
    fusion: str = "late",
    template: str = DEFAULT_TEMPLATE,
    provenance: Mapping | None = None,
    strict: bool = False,
    mode: str = "multiply",
    holdout_fraction: float = 0.2,
    seed: int = 0,
) -> EvalReport:
    """Classify held-out seen and all unseen records among all classes.

    The calibration margin is chosen to maximize H on a stratified half of
    the evaluation pool; (u, s, H) are reported on the other half.
    """
    _check_provenance(provenance, split, manifest, strict)
    if gammas is not None and len(gammas) == 0:
        raise ValueError("empty gamma grid")
    classes = list(range(len(manifest.classes)))
    bank = build_prompt_bank([c.name for c in manifest.classes], model, template, classes)
    _, held = gzsl_holdout(manifest, split, holdout_fraction, seed)
    unseen_ids = [i for i in manifest.ids if manifest.label_of(i) in split.unseen]
    pool = sorted(held + unseen_ids)
    view = DatasetView(manifest, channel, pool)
    labels = view.labels
    images, contents = embed_records(model, view, pool)
    scores = _scores(model, bank, images, contents, fusion, mode)
    grid = np.sort(np.asarray(gamma_grid(scores) if gammas is None else gammas, dtype=np.float64))
    mask = split.seen_mask(len(classes))
    val, test = _stratified_halves(pool, labels, seed)

    def evaluate(sel, gamma):
        pred = predict(calibrate(scores[sel], mask, gamma))
        _, u = per_class_top1(pred[np.isin(labels[sel], list(split.unseen))], labels[sel][np.isin(labels[sel], list(split.unseen))], split.unseen)
        seen_sel = np.isin(labels[sel], list(split.seen))
        _, s = per_class_top1(pred[seen_sel], labels[sel][seen_sel], split.seen)
        return u, s, harmonic_mean(u, s)

    sweep = []
    best = None
    for gamma in grid:
        uv, sv, hv = evaluate(val, gamma)
        ut, st, ht = evaluate(test, gamma)
        sweep.append({"gamma": float(gamma), "u": ut, "s": st, "H": ht, "val_u": uv, "val_s": sv, "val_H": hv})
        if best is None or hv > best[1]:
            best = (float(gamma), hv, ut, st, ht)
    gamma_star, _, u, s, _ = best
    pred = predict(calibrate(scores[test], mask, gamma_star))
    table, _ = per_class_top1(pred, labels[test], classes)
    return EvalReport(
        "GZSL", split.name, channel, fusion,
        u=u, s=s, h=harmonic_mean(u, s), gamma=gamma_star,
        per_class=_table(manifest, table), sweep=sweep,
        config={
            "template": template, "mode": mode, "holdout_fraction": holdout_fraction, "seed": seed,
            "n_validation": int(val.sum()), "n_test": int(test.sum()),
        },
    )


# ---------------------------------------------------------------------------
# ablations


@dataclass
class AblationCell:
    split: str
    alignment: str
    channel: str
    fusion: str
    zsl: EvalReport
    gzsl: EvalReport

    def to_dict(self) -> dict:
        return {
            "split": self.split, "alignment": self.alignment, "channel": self.channel,
            "fusion": self.fusion, "zsl": self.zsl.to_dict(), "gzsl": self.gzsl.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AblationCell":
        return cls(d["split"], d["alignment"], d["channel"], d["fusion"], EvalReport(**d["zsl"]), EvalReport(**d["gzsl"]))


@dataclass(frozen=True)
class AblationMatrix:
    alignments: tuple[str, ...] = ("both", "C2I", "C2T")
    channels: tuple[str, ...] = ("clean", "noisy")
    fusions: tuple[str, ...] = FUSIONS


def _method_name(cell: AblationCell) -> str:
    parts = []
    if cell.alignment != "both":
        parts.append(cell.alignment)
    if cell.channel != "clean":
        parts.append(cell.channel)
    if cell.fusion != "late":
        parts.append("early fusion")
    return "full" if not parts else ", ".join(parts)


def results_table(cells: Sequence[AblationCell], title: str | None = None) -> str:
    """Markdown table with Split / Method / T1 / u / s / H columns."""
    lines = []
    if title:
        lines += [f"### {title}", ""]
    lines += ["| Split | Method | T1 | u | s | H |", "|---|---|---|---|---|---|"]
    for c in cells:
        lines.append(
            f"| {c.split} | {_method_name(c)} | {c.zsl.t1:.2f} | {c.gzsl.u:.2f} | {c.gzsl.s:.2f} | {c.gzsl.h:.2f} |"
        )
    return "\n".join(lines) + "\n"


@dataclass
class AblationResult:
    cells: list[AblationCell]
    tables: dict[str, str]

    def find(self, split: str, alignment: str = "both", channel: str = "clean", fusion: str = "late") -> AblationCell:
        for c in self.cells:
            if (c.split, c.alignment, c.channel, c.fusion) == (split, alignment, channel, fusion):
                return c
        raise KeyError((split, alignment, channel, fusion))

    def metrics_rows(self) -> list[dict]:
        return [
            {
                "split": c.split, "alignment": c.alignment, "channel": c.channel, "fusion": c.fusion,
                "zsl_t1": c.zsl.t1, "gzsl_u": c.gzsl.u, "gzsl_s": c.gzsl.s, "gzsl_h": c.gzsl.h,
                "gamma": c.gzsl.gamma,
            }
            for c in self.cells
        ]

    def write_metrics_csv(self, path: str | Path) -> Path:
        path = Path(path)
        rows = self.metrics_rows()
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["split", "alignment", "channel", "fusion", "zsl_t1", "gzsl_u", "gzsl_s", "gzsl_h", "gamma"])
            for r in rows:
                w.writerow([
                    r["split"], r["alignment"], r["channel"], r["fusion"],
                    f"{r['zsl_t1']:.2f}", f"{r['gzsl_u']:.2f}", f"{r['gzsl_s']:.2f}", f"{r['gzsl_h']:.2f}",
                    f"{r['gamma']:.10g}",
                ])
        return path


def _build_tables(cells: Sequence[AblationCell], splits: Sequence[str]) -> dict[str, str]:
    def pick(pred):
        return [c for s in splits for c in cells if c.split == s and pred(c)]

    return {
        "main": results_table(pick(lambda c: (c.alignment, c.channel, c.fusion) == ("both", "clean", "late")), "Zero-shot results"),
        "alignment": results_table(pick(lambda c: c.channel == "clean" and c.fusion == "late"), "Alignment ablation"),
        "channel": results_table(pick(lambda c: c.alignment == "both" and c.fusion == "late"), "Content channel ablation"),
        "fusion": results_table(pick(lambda c: c.alignment == "both" and c.channel == "clean"), "Fusion ablation"),
    }


def run_ablation_suite(
    manifest: CorpusManifest,
    splits: Sequence[SplitSpec],
    matrix: AblationMatrix,
    model_config: ModelConfig,
    train_config: TrainConfig,
    init_seed: int = 0,
    out_dir: str | Path | None = None,
    gammas: Sequence[float] | None = None,
    holdout_fraction: float = 0.2,
    eval_seed: int = 0,
) -> AblationResult:
    """Train one model per (split, alignment, channel) and evaluate it under each fusion.

    With ``out_dir``, every finished cell is stored as JSON and reused on
    later calls, so an interrupted sweep resumes where it stopped.
    """
    out = Path(out_dir) if out_dir is not None else None
    cells: list[AblationCell] = []
    for split in splits:
        for alignment in matrix.alignments:
            for channel in matrix.channels:
                key = f"{split.name}__{alignment}__{channel}"
                cell_path = out / "cells" / f"{key}.json" if out is not None else None
                if cell_path is not None and cell_path.exists():
                    cached = [AblationCell.from_dict(d) for d in json.loads(cell_path.read_text())]
                    if {c.fusion for c in cached} >= set(matrix.fusions):
                        cells += [c for c in cached if c.fusion in matrix.fusions]
                        continue
                model = ContentAlignModel(model_config, seed=init_seed)
                tcfg = TrainConfig.from_dict({**train_config.to_dict(), "loss": {**train_config.to_dict()["loss"], "alignment": alignment}})
                view = training_view(manifest, split, channel, holdout_fraction, eval_seed)
                log.info("training %s", key)
                fit(view, model, tcfg, split)
                group = []
                for fusion in matrix.fusions:
                    zsl = run_zsl(model, manifest, split, channel, fusion, tcfg.template)
                    gzsl = run_gzsl(
                        model, manifest, split, channel, gammas, fusion, tcfg.template,
                        holdout_fraction=holdout_fraction, seed=eval_seed,
                    )
                    group.append(AblationCell(split.name, alignment, channel, fusion, zsl, gzsl))
                if cell_path is not None:
                    cell_path.parent.mkdir(parents=True, exist_ok=True)
                    tmp = cell_path.with_suffix(".tmp")
                    tmp.write_text(json.dumps([c.to_dict() for c in group], sort_keys=True))
                    tmp.replace(cell_path)
                cells += group
    return AblationResult(cells, _build_tables(cells, [s.name for s in splits]))
