"""Command-line entry point: ``contentalign {gen,splits,train,eval,ablate}``.

Every subcommand reads one run configuration (YAML or JSON), writes its
artifacts under ``<out>/<config hash>/`` and reuses whatever an earlier
invocation with the same configuration already finished. Missing upstream
artifacts (corpus, splits, checkpoints) are produced on demand.

Exit codes: 0 success, 1 runtime failure, 2 configuration or validation failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np
import yaml

from .corpus import CHANNELS, CorpusError, CorpusManifest, DatasetView, SyntheticSpec, generate_synthetic_corpus, load_manifest
from .evaluation import (
    FUSIONS,
    AblationMatrix,
    AblationResult,
    EvalReport,
    ProvenanceMismatch,
    _scores,
    embed_records,
    run_ablation_suite,
    run_gzsl,
    run_zsl,
    training_view,
)
from .infer import build_prompt_bank, predict, score_late_fusion, write_predictions
from .loss import ALIGNMENTS
from .model import ContentAlignModel, ModelConfig
from .splits import (
    RankOrdering,
    SplitError,
    SplitSpec,
    load_rank_ordering,
    load_split,
    make_incremental_split,
    make_sequential_splits,
    validate_split,
)
from .train import TrainConfig, TrainingDiverged, fit

log = logging.getLogger("contentalign")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

# encoder fields a config may set; geometry and vocabulary come from the corpus
ENCODER_FIELDS = ("text_context", "content_context", "d_enc", "layers", "heads", "ff_dim", "joint_dim")


class ConfigError(ValueError):
    pass


class RunLocked(RuntimeError):
    pass


@dataclass(frozen=True)
class SplitsConfig:
    group_size: int = 4
    incremental: tuple[int, int] | None = None
    rank_csv: str | None = None

    def __post_init__(self):
        if self.incremental is not None:
            lo, hi = self.incremental
            if not 1 <= lo <= hi:
                raise ConfigError(f"splits.incremental: bad range {lo}..{hi}")


@dataclass(frozen=True)
class AblationConfig:
    alignments: tuple[str, ...] = ALIGNMENTS
    channels: tuple[str, ...] = CHANNELS
    fusions: tuple[str, ...] = FUSIONS
    splits: tuple[str, ...] | None = None
    incremental_curve: bool = True
    curve_range: tuple[int, int] = (2, 8)

    def __post_init__(self):
        for name, values, allowed in (
            ("alignments", self.alignments, ALIGNMENTS),
            ("channels", self.channels, None),
            ("fusions", self.fusions, FUSIONS),
        ):
            if not values:
                raise ConfigError(f"ablation.{name}: must not be empty")
            if allowed is not None and not set(values) <= set(allowed):
                raise ConfigError(f"ablation.{name}: expected a subset of {allowed}, got {list(values)}")

    @property
    def matrix(self) -> AblationMatrix:
        return AblationMatrix(tuple(self.alignments), tuple(self.channels), tuple(self.fusions))


@dataclass(frozen=True)
class RunConfig:
    corpus: SyntheticSpec = field(default_factory=SyntheticSpec)
    corpus_path: str | None = None
    model: Mapping[str, int] = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    splits: SplitsConfig = field(default_factory=SplitsConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    split: str = "A"
    channel: str = "clean"
    fusion: str = "late"
    gamma_grid: tuple[float, ...] | None = None
    holdout_fraction: float = 0.2
    seed: int = 0
    out: str = "runs"
    checkpoint: str | None = None
    strict: bool = False

    # fields that choose what to run inside a run directory, not what it contains
    SELECTORS = ("out", "split", "channel", "fusion", "checkpoint", "strict")

    def validate(self) -> None:
        try:
            self.corpus.validate()
        except CorpusError as exc:
            raise ConfigError(f"corpus.{exc}") from exc
        unknown = set(self.model) - set(ENCODER_FIELDS)
        if unknown:
            raise ConfigError(f"model: unknown fields {sorted(unknown)} (allowed: {list(ENCODER_FIELDS)})")
        try:
            ModelConfig(**self.encoder_kwargs(self.corpus))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from exc
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion: must be one of {FUSIONS}")
        if self.gamma_grid is not None and len(self.gamma_grid) == 0:
            raise ConfigError("gamma_grid: must not be empty")
        if self.gamma_grid is not None and min(self.gamma_grid) < 0:
            raise ConfigError("gamma_grid: values must be non-negative")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction: must lie in (0, 1)")
        if self.seed < 0:
            raise ConfigError("seed: must be non-negative")

    def encoder_kwargs(self, spec: SyntheticSpec, vocab_size: int | None = None) -> dict:
        g = spec.geometry
        kw = dict(height=g.height, width=g.width, channels=g.channels, patch=g.patch, **dict(self.model))
        if vocab_size is not None:
            kw["vocab_size"] = vocab_size
        return kw

    @property
    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    def to_dict(self) -> dict:
        d = {
            "corpus": self.corpus.to_dict(),
            "corpus_path": self.corpus_path,
            "model": dict(self.model),
            "train": self.train.to_dict(),
            "splits": _plain(dataclasses.asdict(self.splits)),
            "ablation": _plain(dataclasses.asdict(self.ablation)),
        }
        for f in ("split", "channel", "fusion", "holdout_fraction", "seed", "out", "checkpoint", "strict"):
            d[f] = getattr(self, f)
        d["gamma_grid"] = None if self.gamma_grid is None else [float(x) for x in self.gamma_grid]
        return d

    def digest(self) -> str:
        """Hash of everything that determines the run's artifacts."""
        d = {k: v for k, v in self.to_dict().items() if k not in self.SELECTORS}
        if self.corpus_path:
            d["corpus_sha256"] = hashlib.sha256(Path(self.corpus_path).read_bytes()).hexdigest()
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            if "corpus" in d:
                d["corpus"] = SyntheticSpec.from_dict(_section(d, "corpus"))
            if "train" in d:
                d["train"] = TrainConfig.from_dict(_section(d, "train"))
            if "splits" in d:
                s = _section(d, "splits")
                if s.get("incremental") is not None:
                    s["incremental"] = parse_range(s["incremental"])
                d["splits"] = SplitsConfig(**s)
            if "ablation" in d:
                a = _section(d, "ablation")
                for k in ("alignments", "channels", "fusions", "splits"):
                    if a.get(k) is not None:
                        a[k] = tuple(a[k])
                if "curve_range" in a:
                    a["curve_range"] = parse_range(a["curve_range"])
                d["ablation"] = AblationConfig(**a)
            if "model" in d:
                d["model"] = _section(d, "model")
            if d.get("gamma_grid") is not None:
                d["gamma_grid"] = tuple(float(x) for x in d["gamma_grid"])
            cfg = cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg


def _section(d: Mapping, key: str) -> dict:
    v = d[key]
    if not isinstance(v, Mapping):
        raise ConfigError(f"{key}: expected a mapping")
    return dict(v)


def _plain(x):
    if isinstance(x, tuple):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    return x


def parse_range(value) -> tuple[int, int]:
    """``"2..8"``, ``[2, 8]`` or ``5`` to an inclusive ``(lo, hi)``."""
    if isinstance(value, str):
        lo, sep, hi = value.partition("..")
        try:
            out = (int(lo), int(hi)) if sep else (int(lo), int(lo))
        except ValueError:
            raise ConfigError(f"bad range {value!r}, expected LO..HI") from None
    elif isinstance(value, int):
        out = value, value
    elif isinstance(value, Sequence) and len(value) == 2:
        out = int(value[0]), int(value[1])
    else:
        raise ConfigError(f"bad range {value!r}")
    if out[0] > out[1]:
        raise ConfigError(f"empty range {value!r}")
    return out


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({})
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if raw is not None and not isinstance(raw, Mapping):
        raise ConfigError(f"config {path}: top level must be a mapping")
    return RunConfig.from_dict(raw or {})


# ---------------------------------------------------------------------------
# run directory


class Run:
    """Artifact layout and reuse for one configuration."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out) / cfg.digest()
        self._manifest: CorpusManifest | None = None

    @contextmanager
    def locked(self) -> Iterator["Run"]:
        self.dir.mkdir(parents=True, exist_ok=True)
        lock = self.dir / ".lock"
        for _ in range(2):
            try:
                fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                break
            except FileExistsError:
                if _lock_is_stale(lock):
                    lock.unlink(missing_ok=True)
                    continue
                raise RunLocked(f"run directory {self.dir} is locked by another process ({lock})") from None
        else:
            raise RunLocked(f"cannot acquire {lock}")
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            echo = self.dir / "config.json"
            if not echo.exists():
                _atomic_write(echo, json.dumps(self.cfg.to_dict(), indent=2, sort_keys=True) + "\n")
            yield self
        finally:
            lock.unlink(missing_ok=True)

    @property
    def manifest_path(self) -> Path:
        return Path(self.cfg.corpus_path) if self.cfg.corpus_path else self.dir / "corpus" / "manifest.jsonl"

    def manifest(self) -> CorpusManifest:
        if self._manifest is None:
            path = self.manifest_path
            if not path.exists():
                if self.cfg.corpus_path:
                    raise ConfigError(f"corpus_path {path} does not exist")
                log.info("generating corpus into %s", path.parent)
                generate_synthetic_corpus(self.cfg.corpus, path.parent)
            self._manifest = load_manifest(path)
        return self._manifest

    def model_config(self) -> ModelConfig:
        m = self.manifest()
        spec = SyntheticSpec(geometry=m.geometry)
        return ModelConfig(**self.cfg.encoder_kwargs(spec, m.tokenizer_vocab))

    def split_path(self, name: str) -> Path:
        return self.dir / "splits" / f"{name}.json"

    def sequential(self) -> list[SplitSpec]:
        return make_sequential_splits(self.manifest().classes, self.cfg.splits.group_size)

    def split(self, name: str) -> SplitSpec:
        path = self.split_path(name)
        m = self.manifest()
        if path.exists():
            return load_split(path, m.classes)
        for s in self.sequential():
            if s.name == name:
                return s
        known = [s.name for s in self.sequential()]
        raise ConfigError(f"unknown split {name!r}; sequential splits are {known}, run 'splits' for incremental ones")

    def checkpoint_dir(self, split: str, channel: str) -> Path:
        return self.dir / "train" / f"{split}__{channel}"


def _lock_is_stale(lock: Path) -> bool:
    try:
        pid = int(lock.read_text().strip() or "0")
    except (OSError, ValueError):
        return False
    if pid <= 0:
        return False
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return True
    except PermissionError:
        return False
    return False


def _atomic_write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(run: Run) -> int:
    m = run.manifest()
    counts = np.bincount(m.labels(), minlength=len(m.classes))
    print(f"manifest: {run.manifest_path}")
    print(f"records: {len(m)}  classes: {len(m.classes)}  channels: {','.join(m.channels)}  "
          f"per-class: {counts.min()}..{counts.max()}  tokenizer vocab: {m.tokenizer_vocab}")
    return EXIT_OK


def _incremental_splits(run: Run, rank: RankOrdering, lo: int, hi: int) -> list[SplitSpec]:
    return [make_incremental_split(rank, i, min_unseen=lo, max_unseen=hi) for i in range(lo, hi + 1)]


def cmd_splits(run: Run, incremental: tuple[int, int] | None = None, rank_csv: str | None = None) -> int:
    m = run.manifest()
    cfg = run.cfg.splits
    incremental = incremental or cfg.incremental
    rank_csv = rank_csv or cfg.rank_csv
    splits = run.sequential()
    if incremental is not None:
        if rank_csv is None:
            raise ConfigError("incremental splits need a rank ordering CSV (--rank or splits.rank_csv)")
        try:
            rank = load_rank_ordering(rank_csv, m.classes)
        except OSError as exc:
            raise ConfigError(f"cannot read rank ordering {rank_csv}: {exc}") from exc
        splits += _incremental_splits(run, rank, *incremental)
    problems = []
    for s in splits:
        problems += [f"{s.name}: {p}" for p in validate_split(s, m)]
    if problems:
        raise SplitError("invalid splits:\n  " + "\n  ".join(problems))
    for s in splits:
        s.save(run.split_path(s.name), m.classes)
        unseen = ", ".join(m.classes[k].name for k in sorted(s.unseen))
        print(f"{run.split_path(s.name)}  unseen: {unseen}")
    return EXIT_OK


def ensure_checkpoint(run: Run, split: SplitSpec, channel: str) -> Path:
    out = run.checkpoint_dir(split.name, channel)
    ckpt = out / "model.json"
    if ckpt.exists():
        log.info("reusing checkpoint %s", ckpt)
        return ckpt
    m = run.manifest()
    view = training_view(m, split, channel, run.cfg.holdout_fraction, run.cfg.seed)
    model = ContentAlignModel(run.model_config(), seed=run.cfg.seed)
    report = fit(view, model, run.cfg.train_config, split)
    report.write(out)
    # the checkpoint is written last: its presence marks the step complete
    model.save(ckpt, {
        "split": split.name,
        "seen": sorted(m.classes[k].name for k in split.seen),
        "channel": channel,
        "train_config": run.cfg.train_config.to_dict(),
        "config_hash": run.cfg.digest(),
    })
    return ckpt


def cmd_train(run: Run) -> int:
    split = run.split(run.cfg.split)
    ckpt = ensure_checkpoint(run, split, run.cfg.channel)
    rep = json.loads((ckpt.parent / "train_report.json").read_text())
    print(f"checkpoint: {ckpt}")
    print(f"final epoch loss: {rep['epoch_losses'][-1]:.4f}  temperatures: {rep['temperatures']}")
    return EXIT_OK


METRIC_COLUMNS = ["setting", "split", "channel", "fusion", "t1", "u", "s", "H", "gamma"]


def _fmt(x: float | None, spec: str = ".2f") -> str:
    return "" if x is None else format(x, spec)


def write_metrics_csv(path: Path, reports: Sequence[EvalReport]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in reports:
            w.writerow([r.setting, r.split, r.channel, r.fusion, _fmt(r.t1), _fmt(r.u), _fmt(r.s), _fmt(r.h), _fmt(r.gamma, ".10g")])
    return path


def cmd_eval(run: Run) -> int:
    cfg = run.cfg
    m = run.manifest()
    split = run.split(cfg.split)
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else ensure_checkpoint(run, split, cfg.channel)
    model, provenance = ContentAlignModel.load(ckpt)
    template = cfg.train.template
    out = run.dir / "eval" / f"{split.name}__{cfg.channel}__{cfg.fusion}"
    if cfg.checkpoint:
        out = out.with_name(out.name + "__" + hashlib.sha256(str(ckpt.resolve()).encode()).hexdigest()[:8])
    zsl = run_zsl(model, m, split, cfg.channel, cfg.fusion, template, provenance, cfg.strict)
    gzsl = run_gzsl(
        model, m, split, cfg.channel, cfg.gamma_grid, cfg.fusion, template, provenance, cfg.strict,
        holdout_fraction=cfg.holdout_fraction, seed=cfg.seed,
    )
    out.mkdir(parents=True, exist_ok=True)
    for r in (zsl, gzsl):
        r.config["checkpoint"] = str(ckpt)
        r.config["run"] = cfg.to_dict()
    zsl.write(out / "zsl.json")
    gzsl.write(out / "gzsl.json")
    gzsl.write_sweep_csv(out / "sweep.csv")
    _atomic_write(out / "report.md", zsl.markdown() + "\n" + gzsl.markdown())
    _write_zsl_predictions(out / "predictions.csv", model, m, split, cfg)
    write_metrics_csv(out / "metrics.csv", [zsl, gzsl])
    print(f"ZSL  T1 {zsl.t1:.2f}")
    print(f"GZSL u {gzsl.u:.2f}  s {gzsl.s:.2f}  H {gzsl.h:.2f}  gamma {gzsl.gamma:.4g}")
    print(f"reports: {out}")
    return EXIT_OK


def _write_zsl_predictions(path: Path, model, m: CorpusManifest, split: SplitSpec, cfg: RunConfig) -> None:
    unseen = sorted(split.unseen)
    names = [m.classes[k].name for k in unseen]
    bank = build_prompt_bank(names, model, cfg.train.template, unseen)
    view = DatasetView(m, cfg.channel).where_label(unseen)
    images, contents = embed_records(model, view, view.ids)
    s_ti, s_tc, _ = score_late_fusion(images, contents, bank, model.temperatures)
    s = _scores(model, bank, images, contents, cfg.fusion, "multiply")
    pred = predict(s)
    write_predictions(
        path, view.ids, [m.classes[k].name for k in view.labels], [names[k] for k in pred], names, s_ti, s_tc, s,
    )


def _derived_rank(result: AblationResult, m: CorpusManifest, channel: str) -> RankOrdering:
    """Per-class ZSL accuracy of the full model, each class taken from the split that holds it out."""
    acc = {}
    for c in result.cells:
        if (c.alignment, c.channel, c.fusion) == ("both", channel, "late"):
            for name, row in c.zsl.per_class.items():
                acc[m.class_by_name(name)] = row["accuracy"]
    if len(acc) != len(m.classes):
        raise ConfigError("deriving a rank ordering needs every class held out once by the ablation splits")
    return RankOrdering.from_accuracies(acc)


def cmd_ablate(run: Run) -> int:
    cfg = run.cfg
    m = run.manifest()
    acfg = cfg.ablation
    names = acfg.splits or tuple(s.name for s in run.sequential())
    splits = [run.split(n) for n in names]
    out = run.dir / "ablate"
    result = run_ablation_suite(
        m, splits, acfg.matrix, run.model_config(), cfg.train_config, init_seed=cfg.seed, out_dir=out,
        gammas=cfg.gamma_grid, holdout_fraction=cfg.holdout_fraction, eval_seed=cfg.seed,
    )
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    for c in result.cells:
        key = f"{c.split}__{c.alignment}__{c.channel}__{c.fusion}"
        c.zsl.write(reports / f"{key}.zsl.json")
        c.gzsl.write(reports / f"{key}.gzsl.json")
        c.gzsl.write_sweep_csv(reports / f"{key}.sweep.csv")
    _atomic_write(out / "tables.md", "\n".join(result.tables.values()))
    result.write_metrics_csv(out / "metrics.csv")
    print(result.tables["main"])
    if acfg.incremental_curve:
        _incremental_curve(run, result, out)
    print(f"ablation artifacts: {out}")
    return EXIT_OK


def _incremental_curve(run: Run, result: AblationResult, out: Path) -> Path:
    cfg, m = run.cfg, run.manifest()
    channel = "clean" if "clean" in cfg.ablation.channels else cfg.ablation.channels[0]
    if cfg.splits.rank_csv:
        rank = load_rank_ordering(cfg.splits.rank_csv, m.classes)
    else:
        rank = _derived_rank(result, m, channel)
        with (out / "rank.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "accuracy"])
            for c, a in rank.entries:
                w.writerow([c.name, f"{a:.2f}"])
    lo, hi = cfg.ablation.curve_range
    splits = _incremental_splits(run, rank, lo, hi)
    curve = run_ablation_suite(
        m, splits, AblationMatrix(("both",), (channel,), ("late",)), run.model_config(), cfg.train_config,
        init_seed=cfg.seed, out_dir=out / "incremental", gammas=cfg.gamma_grid,
        holdout_fraction=cfg.holdout_fraction, eval_seed=cfg.seed,
    )
    path = out / "incremental_curve.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split_index", "zsl_t1", "gzsl_h"])
        for i, c in zip(range(lo, hi + 1), curve.cells):
            w.writerow([i, f"{c.zsl.t1:.2f}", f"{c.gzsl.h:.2f}"])
    return path


# ---------------------------------------------------------------------------
# argument parsing


COMMANDS = {"gen": cmd_gen, "splits": cmd_splits, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run configuration (YAML or JSON)")
    common.add_argument("--out", metavar="DIR", help="root for run directories (default: runs)")
    common.add_argument("--seed", type=int, metavar="N", help="model init, shuffling and evaluation seed")
    common.add_argument("--split", metavar="NAME", help="split to train or evaluate (default: A)")
    common.add_argument("--channel", metavar="NAME", help="content channel (default: clean)")
    common.add_argument("--strict", action="store_true", help="fail on checkpoint provenance mismatch")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="contentalign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate the synthetic corpus")
    sp = sub.add_parser("splits", parents=[common], help="write sequential and incremental split files")
    sp.add_argument("--incremental", metavar="LO..HI", help="also write incremental splits S_I_LO..S_I_HI")
    sp.add_argument("--rank", metavar="PATH", help="rank ordering CSV (class,accuracy) for incremental splits")
    sub.add_parser("train", parents=[common], help="train a model on a split's seen classes")
    ev = sub.add_parser("eval", parents=[common], help="ZSL and GZSL evaluation of a checkpoint")
    ev.add_argument("--checkpoint", metavar="PATH", help="evaluate this checkpoint instead of the run's own")
    ev.add_argument("--fusion", choices=FUSIONS)
    sub.add_parser("ablate", parents=[common], help="alignment x channel x fusion sweep plus incremental curve")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {k: getattr(args, k, None) for k in ("out", "seed", "split", "channel", "checkpoint", "fusion")}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.strict:
        overrides["strict"] = True
    if not overrides:
        return cfg
    return RunConfig.from_dict({**cfg.to_dict(), **overrides})


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        with Run(cfg).locked() as run:
            if args.command == "splits":
                incremental = parse_range(args.incremental) if args.incremental else None
                return cmd_splits(run, incremental, args.rank)
            if args.command == "eval":
                with warnings.catch_warnings():
                    warnings.simplefilter("always")
                    return cmd_eval(run)
            return COMMANDS[args.command](run)
    except (ConfigError, CorpusError, SplitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, ProvenanceMismatch, RunLocked) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime failure
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
