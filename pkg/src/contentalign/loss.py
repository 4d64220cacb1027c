"""Coupled contrastive loss between content and the image/text embeddings.

For anchors ``A`` (images or texts) and contents ``C`` with temperature
``tau``, row ``i`` of one component is

    -log( exp(<A_i, C_i>/tau) / sum_{j in D_i} exp(<A_i, C_j>/tau) )

where ``D_i`` excludes ``j = i`` unless ``include_positive`` is set. The
total is ``sum_i 0.5 * (L_ic + L_tc)``; an alignment ablation drops one of
the two terms but keeps the 0.5 weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TAU_MIN, TAU_MAX = 1e-3, 10.0
LOG_TAU_MIN, LOG_TAU_MAX = float(np.log(TAU_MIN)), float(np.log(TAU_MAX))

ALIGNMENTS = ("both", "C2I", "C2T")


class EmptyDenominator(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    alignment: str = "both"
    include_positive: bool = False

    def __post_init__(self):
        if self.alignment not in ALIGNMENTS:
            raise ValueError(f"alignment must be one of {ALIGNMENTS}, got {self.alignment!r}")

    @property
    def weights(self) -> tuple[float, float]:
        """(image-content weight, text-content weight)."""
        return {"both": (0.5, 0.5), "C2I": (0.5, 0.0), "C2T": (0.0, 0.5)}[self.alignment]


def clamp_log_tau(x):
    return np.clip(x, LOG_TAU_MIN, LOG_TAU_MAX)


def similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity of unit vectors, i.e. ``a @ b.T``."""
    return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64).T


def _denominator_mask(n: int, include_positive: bool) -> np.ndarray:
    if n < 2 and not include_positive:
        raise EmptyDenominator("empty denominator: batch needs N >= 2 when the positive is excluded")
    return np.ones((n, n), bool) if include_positive else ~np.eye(n, dtype=bool)


def contrastive_rows(sims: np.ndarray, tau: float, include_positive: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Per-row losses and the row-softmax over each denominator set.

    Computed in log space with max subtraction.
    """
    sims = np.asarray(sims, dtype=np.float64)
    n = sims.shape[0]
    mask = _denominator_mask(n, include_positive)
    z = sims / tau
    zm = np.where(mask, z, -np.inf)
    mx = zm.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(zm - mx), 0.0)
    s = e.sum(axis=1, keepdims=True)
    lse = (mx + np.log(s))[:, 0]
    rows = lse - np.diag(z)
    return rows, e / s


def image_content_loss_row(i: int, sims: np.ndarray, tau_ic: float, cfg: LossConfig = LossConfig()) -> float:
    """``L_{i,ic}`` from an image-by-content similarity matrix."""
    return float(contrastive_rows(sims, tau_ic, cfg.include_positive)[0][i])


def text_content_loss_row(i: int, sims: np.ndarray, tau_tc: float, cfg: LossConfig = LossConfig()) -> float:
    """``L_{i,tc}`` from a text-by-content similarity matrix."""
    return float(contrastive_rows(sims, tau_tc, cfg.include_positive)[0][i])


@dataclass
class LossResult:
    total: float
    rows_ic: np.ndarray
    rows_tc: np.ndarray
    grad_image: np.ndarray
    grad_text: np.ndarray
    grad_content: np.ndarray
    grad_log_tau_ic: float
    grad_log_tau_tc: float

    @property
    def per_sample(self) -> float:
        return self.total / len(self.rows_ic)


def _component(anchor, content, log_tau, weight, include_positive):
    tau = float(np.exp(log_tau))
    sims = similarity(anchor, content)
    rows, prob = contrastive_rows(sims, tau, include_positive)
    n = len(rows)
    # dL/dZ for Z = sims / tau
    g = weight * (prob - np.eye(n))
    grad_anchor = g @ content / tau
    grad_content = g.T @ anchor / tau
    grad_log_tau = -float(np.sum(g * sims)) / tau
    return rows, grad_anchor, grad_content, grad_log_tau


def coupled_loss(
    image: np.ndarray,
    text: np.ndarray,
    content: np.ndarray,
    log_tau_ic: float,
    log_tau_tc: float,
    cfg: LossConfig = LossConfig(),
) -> LossResult:
    """Total loss and exact gradients w.r.t. the three embedding batches and both log-temperatures."""
    image, text, content = (np.asarray(x, dtype=np.float64) for x in (image, text, content))
    if not image.shape == text.shape == content.shape or image.ndim != 2:
        raise ValueError("image, text and content batches must share shape (N, d)")
    n = image.shape[0]
    _denominator_mask(n, cfg.include_positive)
    w_ic, w_tc = cfg.weights
    rows_ic, g_i, g_c1, g_tic = _component(image, content, float(log_tau_ic), w_ic, cfg.include_positive)
    rows_tc, g_t, g_c2, g_ttc = _component(text, content, float(log_tau_tc), w_tc, cfg.include_positive)
    total = float(np.sum(w_ic * rows_ic + w_tc * rows_tc))
    return LossResult(
        total=total,
        rows_ic=rows_ic,
        rows_tc=rows_tc,
        grad_image=g_i,
        grad_text=g_t,
        grad_content=g_c1 + g_c2,
        grad_log_tau_ic=g_tic,
        grad_log_tau_tc=g_ttc,
    )
