"""Image, text and content encoders with projections into a shared unit-norm space."""

from __future__ import annotations

import base64
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .tokenize import CONTENT_CONTEXT, PAD, TEXT_CONTEXT, Vocabulary, patchify, tokenize_batch, trim_padding

CHECKPOINT_FORMAT = "contentalign-checkpoint/1"
MODALITIES = ("image", "text", "content")
TAU_INIT = 0.07


class DegenerateEmbedding(ArithmeticError):
    """Projection produced a zero vector, which cannot be normalized."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 4096
    height: int = 32
    width: int = 32
    channels: int = 1
    patch: int = 8
    text_context: int = TEXT_CONTEXT
    content_context: int = CONTENT_CONTEXT
    d_enc: int = 64
    layers: int = 1
    heads: int = 4
    ff_dim: int = 256
    joint_dim: int = 64

    def __post_init__(self):
        if self.d_enc % self.heads:
            raise ValueError(f"d_enc={self.d_enc} not divisible by heads={self.heads}")
        if self.joint_dim < 1 or self.d_enc < 1:
            raise ValueError("embedding dimensions must be positive")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.height % self.patch or self.width % self.patch:
            raise ValueError("image size not divisible by patch size")

    @property
    def n_patches(self) -> int:
        return (self.height * self.width) // (self.patch**2)

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def context(self, modality: str) -> int:
        return {"image": self.n_patches + 1, "text": self.text_context, "content": self.content_context}[modality]


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Embeddings ~ N(0, 0.02); positions ~ N(0, 0.01); projections ~ N(0, d_enc^-1/2)."""
    rng = np.random.default_rng(seed)
    d = cfg.d_enc
    p: dict[str, np.ndarray] = {}
    for m in MODALITIES:
        if m == "image":
            p["image.patch"] = rng.normal(0.0, 0.02, (cfg.patch_dim, d))
        else:
            p[f"{m}.tok"] = rng.normal(0.0, 0.02, (cfg.vocab_size, d))
        p[f"{m}.cls"] = rng.normal(0.0, 0.02, (d,))
        p[f"{m}.pos"] = rng.normal(0.0, 0.01, (cfg.context(m), d))
        for layer in range(cfg.layers):
            b = f"{m}.block{layer}"
            for ln in ("ln1", "ln2"):
                p[f"{b}.{ln}.g"] = np.ones(d)
                p[f"{b}.{ln}.b"] = np.zeros(d)
            for w in ("wq", "wk", "wv", "wo"):
                p[f"{b}.attn.{w}"] = rng.normal(0.0, d**-0.5, (d, d))
            for bias in ("bq", "bk", "bv", "bo"):
                p[f"{b}.attn.{bias}"] = np.zeros(d)
            p[f"{b}.mlp.w1"] = rng.normal(0.0, d**-0.5, (d, cfg.ff_dim))
            p[f"{b}.mlp.b1"] = np.zeros(cfg.ff_dim)
            p[f"{b}.mlp.w2"] = rng.normal(0.0, cfg.ff_dim**-0.5, (cfg.ff_dim, d))
            p[f"{b}.mlp.b2"] = np.zeros(d)
        if cfg.layers > 0:
            p[f"{m}.ln_post.g"] = np.ones(d)
            p[f"{m}.ln_post.b"] = np.zeros(d)
        p[f"proj.{m}"] = rng.normal(0.0, d**-0.5, (d, cfg.joint_dim))
    p["log_tau_ic"] = np.array(np.log(TAU_INIT))
    p["log_tau_tc"] = np.array(np.log(TAU_INIT))
    return p


def _attention(h: Tensor, kv: Tensor, mask: np.ndarray, p, b: str, heads: int) -> Tensor:
    bsz, lq, d = h.shape
    lk = kv.shape[1]
    dh = d // heads

    def split(x: Tensor, n: int) -> Tensor:
        return x.reshape(bsz, n, heads, dh).transpose(0, 2, 1, 3)

    q = split(h @ p[f"{b}.attn.wq"] + p[f"{b}.attn.bq"], lq)
    k = split(kv @ p[f"{b}.attn.wk"] + p[f"{b}.attn.bk"], lk)
    v = split(kv @ p[f"{b}.attn.wv"] + p[f"{b}.attn.bv"], lk)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (dh**-0.5)
    att = ag.masked_softmax(scores, mask[:, None, None, :])
    out = (att @ v).transpose(0, 2, 1, 3).reshape(bsz, lq, d)
    return out @ p[f"{b}.attn.wo"] + p[f"{b}.attn.bo"]


def _block(x: Tensor, mask: np.ndarray, p, b: str, heads: int, cls_only: bool) -> Tensor:
    h = ag.layer_norm(x, p[f"{b}.ln1.g"], p[f"{b}.ln1.b"])
    if cls_only:
        # the last block only needs the CLS row; keys/values still span the sequence
        x = x[:, :1] + _attention(h[:, :1], h, mask, p, b, heads)
    else:
        x = x + _attention(h, h, mask, p, b, heads)
    h = ag.layer_norm(x, p[f"{b}.ln2.g"], p[f"{b}.ln2.b"])
    h = ag.gelu(h @ p[f"{b}.mlp.w1"] + p[f"{b}.mlp.b1"]) @ p[f"{b}.mlp.w2"] + p[f"{b}.mlp.b2"]
    return x + h


class ContentAlignModel:
    """Three encoders, their projections and the two learned log-temperatures.

    ``params`` maps flat tensor names to float64 arrays. Forward passes build
    an autograd graph over whatever mapping of names to ``Tensor`` is passed
    as ``p``; by default non-differentiable leaves are used.
    """

    def __init__(self, config: ModelConfig, params: Mapping[str, np.ndarray] | None = None, seed: int = 0):
        self.config = config
        self.params = dict(params) if params is not None else init_params(config, seed)
        expected = init_params(config, 0) if params is not None else self.params
        for name, arr in expected.items():
            if name not in self.params:
                raise ValueError(f"missing parameter {name}")
            if np.shape(self.params[name]) != np.shape(arr):
                raise ValueError(f"parameter {name} has shape {np.shape(self.params[name])}, expected {np.shape(arr)}")
        self.vocab = Vocabulary(config.vocab_size)

    # -- parameters --------------------------------------------------------

    def leaves(self, trainable=None) -> dict[str, Tensor]:
        """Tensor leaves; names in ``trainable`` (default: all) track gradients."""
        return {
            k: Tensor(v, requires_grad=trainable is None or k in trainable)
            for k, v in self.params.items()
        }

    def _constants(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.params.items()}

    @property
    def temperatures(self) -> tuple[float, float]:
        return float(np.exp(self.params["log_tau_ic"])), float(np.exp(self.params["log_tau_tc"]))

    def n_parameters(self) -> int:
        return int(sum(np.size(v) for v in self.params.values()))

    # -- encoders ----------------------------------------------------------

    def _encode(self, m: str, tokens: Tensor, mask: np.ndarray, p) -> Tensor:
        """Prepend CLS to embedded ``tokens`` (B, L, d) and return the CLS output."""
        bsz, n, d = tokens.shape
        cls = p[f"{m}.cls"].reshape(1, 1, d) + np.zeros((bsz, 1, d))
        x = ag.concat([cls, tokens], axis=1)
        full_mask = np.concatenate([np.ones((bsz, 1), bool), mask], axis=1)
        cfg = self.config
        if cfg.layers == 0:
            # permutation-invariant fallback: masked mean, no positions
            w = full_mask / full_mask.sum(axis=1, keepdims=True)
            return (x * w[:, :, None]).sum(axis=1)
        if n + 1 > cfg.context(m):
            raise ValueError(f"{m} sequence of length {n + 1} exceeds context {cfg.context(m)}")
        x = x + p[f"{m}.pos"][: n + 1]
        for layer in range(cfg.layers):
            x = _block(x, full_mask, p, f"{m}.block{layer}", cfg.heads, cls_only=layer == cfg.layers - 1)
        return ag.layer_norm(x[:, 0], p[f"{m}.ln_post.g"], p[f"{m}.ln_post.b"])

    def image_cls(self, patches: np.ndarray, p=None) -> Tensor:
        """Raw CLS output for a batch of patch sequences (B, M, P*P*Ch)."""
        p = self._constants() if p is None else p
        patches = np.asarray(patches, dtype=np.float64)
        cfg = self.config
        if patches.ndim != 3 or patches.shape[1:] != (cfg.n_patches, cfg.patch_dim):
            raise ValueError(
                f"patch batch shape {patches.shape} does not match (B, {cfg.n_patches}, {cfg.patch_dim})"
            )
        emb = Tensor(patches) @ p["image.patch"]
        return self._encode("image", emb, np.ones(patches.shape[:2], bool), p)

    def _token_cls(self, m: str, ids: np.ndarray, p=None) -> Tensor:
        p = self._constants() if p is None else p
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ValueError(f"token batch must be 2-D, got shape {ids.shape}")
        if ids.shape[1] > self.config.context(m):
            raise ValueError(f"{m} sequence longer than context {self.config.context(m)}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError("token id outside vocabulary")
        ids = trim_padding(ids)
        body = ids[:, 1:]
        emb = ag.getitem(p[f"{m}.tok"], body)
        return self._encode(m, emb, body != PAD, p)

    def text_cls(self, ids: np.ndarray, p=None) -> Tensor:
        return self._token_cls("text", ids, p)

    def content_cls(self, ids: np.ndarray, p=None) -> Tensor:
        return self._token_cls("content", ids, p)

    def encode_image(self, image_or_patches: np.ndarray) -> np.ndarray:
        """Raw CLS vector(s); accepts H x W x Ch image(s) or patch sequence(s)."""
        x = np.asarray(image_or_patches, dtype=np.float64)
        cfg = self.config
        single = True
        if x.ndim == 4:
            x, single = patchify(x, cfg.patch), False
        elif x.ndim == 3 and x.shape == (cfg.height, cfg.width, cfg.channels):
            x = patchify(x, cfg.patch)[None]
        elif x.ndim == 3:
            single = False
        elif x.ndim == 2:
            x = x[None]
        out = self.image_cls(x).data
        return out[0] if single else out

    def encode_text(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        out = self.text_cls(np.atleast_2d(ids)).data
        return out[0] if ids.ndim == 1 else out

    def encode_content(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        out = self.content_cls(np.atleast_2d(ids)).data
        return out[0] if ids.ndim == 1 else out

    # -- projection --------------------------------------------------------

    def project_normalize_t(self, raw: Tensor, which: str, p=None) -> Tensor:
        p = self._constants() if p is None else p
        name = {"I": "image", "T": "text", "C": "content"}.get(which, which)
        y = raw @ p[f"proj.{name}"]
        sq = (y * y).sum(axis=-1, keepdims=True)
        if np.any(sq.data == 0.0):
            raise DegenerateEmbedding("degenerate embedding: projection output has zero norm")
        return y * ag.power(sq, -0.5)

    def project_normalize(self, raw: np.ndarray, which: str) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if not np.all(np.isfinite(raw)):
            raise ValueError("raw encoder output is not finite")
        out = self.project_normalize_t(Tensor(np.atleast_2d(raw)), which).data
        return out[0] if raw.ndim == 1 else out

    # -- convenience embeddings -------------------------------------------

    def embed_images(self, images: np.ndarray, chunk: int = 256) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        outs = [
            self.project_normalize_t(self.image_cls(patchify(images[s:s + chunk], self.config.patch)), "I").data
            for s in range(0, len(images), chunk)
        ]
        return np.concatenate(outs) if outs else np.zeros((0, self.config.joint_dim))

    def _embed_strings(self, m: str, texts, chunk: int) -> np.ndarray:
        length = self.config.context(m)
        outs = []
        for s in range(0, len(texts), chunk):
            ids = tokenize_batch(list(texts[s:s + chunk]), self.vocab, length)
            outs.append(self.project_normalize_t(self._token_cls(m, ids), m).data)
        return np.concatenate(outs) if outs else np.zeros((0, self.config.joint_dim))

    def embed_texts(self, texts, chunk: int = 256) -> np.ndarray:
        return self._embed_strings("text", texts, chunk)

    def embed_contents(self, texts, chunk: int = 256) -> np.ndarray:
        return self._embed_strings("content", texts, chunk)

    # -- checkpoints -------------------------------------------------------

    def save(self, path: str | Path, provenance: Mapping | None = None) -> Path:
        """Write config and tensors (little-endian float64, base64) as one JSON file, atomically."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.config),
            "provenance": dict(provenance or {}),
            "tensors": {
                name: {
                    "shape": list(np.shape(arr)),
                    "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii"),
                }
                for name, arr in sorted(self.params.items())
            },
        }
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> tuple["ContentAlignModel", dict]:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
        params = {
            name: np.frombuffer(base64.b64decode(t["data"]), dtype="<f8").astype(np.float64).reshape(t["shape"])
            for name, t in doc["tensors"].items()
        }
        return cls(ModelConfig(**doc["config"]), params), doc.get("provenance", {})
