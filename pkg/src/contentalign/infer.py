"""Zero-shot classifiers from class-name prompts, logit fusion and calibrated stacking."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ContentAlignModel
from .train import DEFAULT_TEMPLATE

LOGIT_MODES = ("multiply", "divide")


class DegenerateFusion(ArithmeticError):
    pass


@dataclass(frozen=True)
class PromptBank:
    template: str
    names: tuple[str, ...]
    embeddings: np.ndarray  # (n_classes, d), unit rows
    class_indices: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.names)


def build_prompt_bank(
    labels: Sequence[str],
    model: ContentAlignModel,
    template: str = DEFAULT_TEMPLATE,
    class_indices: Sequence[int] | None = None,
) -> PromptBank:
    """Embed ``template`` instantiated with each class name."""
    labels = list(labels)
    if "{label}" not in template:
        raise ValueError("template must contain the '{label}' placeholder")
    if len(labels) < 2:
        raise ValueError("a prompt bank needs at least two classes")
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate label names in prompt bank")
    emb = model.embed_texts([template.format(label=n) for n in labels])
    emb.setflags(write=False)
    idx = tuple(range(len(labels))) if class_indices is None else tuple(int(i) for i in class_indices)
    return PromptBank(template, tuple(labels), emb, idx)


def _scale(sims: np.ndarray, tau: float, mode: str) -> np.ndarray:
    if mode == "multiply":
        return tau * sims
    if mode == "divide":
        return sims / tau
    raise ValueError(f"logit mode must be one of {LOGIT_MODES}")


def score_late_fusion(
    image: np.ndarray,
    content: np.ndarray,
    bank: PromptBank | np.ndarray,
    temps: tuple[float, float],
    mode: str = "multiply",
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Text-to-image, text-to-content and averaged logits.

    Temperatures multiply the similarities by default; ``mode="divide"``
    divides instead. Works on single embeddings or row batches.
    """
    if content is None:
        raise ValueError("content is required at inference time")
    t = bank.embeddings if isinstance(bank, PromptBank) else np.asarray(bank)
    tau_ic, tau_tc = temps
    s_ti = _scale(np.asarray(image) @ t.T, tau_ic, mode)
    s_tc = _scale(np.asarray(content) @ t.T, tau_tc, mode)
    return s_ti, s_tc, (s_ti + s_tc) / 2


def score_early_fusion(
    image: np.ndarray,
    content: np.ndarray,
    bank: PromptBank | np.ndarray,
    temps: tuple[float, float],
    mode: str = "multiply",
) -> np.ndarray:
    """Score the renormalized sum of image and content embeddings with the mean temperature."""
    if content is None:
        raise ValueError("content is required at inference time")
    t = bank.embeddings if isinstance(bank, PromptBank) else np.asarray(bank)
    fused = np.asarray(image, dtype=np.float64) + np.asarray(content, dtype=np.float64)
    norm = np.linalg.norm(fused, axis=-1, keepdims=True)
    if np.any(norm <= 1e-12):
        raise DegenerateFusion("degenerate fusion: image and content embeddings cancel")
    return _scale((fused / norm) @ t.T, (temps[0] + temps[1]) / 2, mode)


def predict(scores: np.ndarray) -> np.ndarray | int:
    """Argmax over the last axis; ties go to the lowest index."""
    scores = np.asarray(scores)
    out = np.argmax(scores, axis=-1)
    return int(out) if scores.ndim == 1 else out


def calibrate(scores: np.ndarray, seen_mask: Sequence[bool], gamma: float) -> np.ndarray:
    """Subtract ``gamma`` from the scores of seen classes."""
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(seen_mask, dtype=bool)
    if mask.shape[-1] != scores.shape[-1]:
        raise ValueError("seen mask length does not match the number of classes")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return scores - gamma * mask


def write_predictions(
    path: str | Path,
    record_ids: Sequence[str],
    true_labels: Sequence[str],
    pred_labels: Sequence[str],
    class_names: Sequence[str],
    s_ti: np.ndarray,
    s_tc: np.ndarray,
    s: np.ndarray,
) -> Path:
    path = Path(path)
    header = ["record_id", "true_label", "pred_label"]
    for tag in ("S_TI", "S_TC", "S"):
        header += [f"{tag}:{n}" for n in class_names]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, rid in enumerate(record_ids):
            row = [rid, true_labels[k], pred_labels[k]]
            for arr in (s_ti, s_tc, s):
                row += [repr(float(x)) for x in arr[k]]
            w.writerow(row)
    return path
