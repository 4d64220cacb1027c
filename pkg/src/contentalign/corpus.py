"""Document corpus data model, JSONL manifests and the synthetic generator."""

from __future__ import annotations

import base64
import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .tokenize import Vocabulary, split_words

CHANNELS = ("clean", "noisy")
DEFAULT_TEMPLATE_WORDS = ("an", "image", "of", "a", ".")


class CorpusError(ValueError):
    """Invalid corpus spec or manifest."""


@dataclass(frozen=True)
class ClassLabel:
    index: int
    name: str


@dataclass(frozen=True)
class Geometry:
    height: int = 32
    width: int = 32
    channels: int = 1
    patch: int = 8

    def __post_init__(self):
        for k in ("height", "width", "channels", "patch"):
            if getattr(self, k) < 1:
                raise CorpusError(f"{k} must be positive")
        if self.height % self.patch or self.width % self.patch:
            raise CorpusError(
                f"patch: image {self.height}x{self.width} not divisible by patch size {self.patch}"
            )

    @property
    def n_patches(self) -> int:
        return (self.height * self.width) // (self.patch * self.patch)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)


@dataclass(frozen=True)
class DocumentRecord:
    id: str
    image: np.ndarray
    label: ClassLabel
    content: Mapping[str, str]


# ---------------------------------------------------------------------------
# image rendering


def glyph(token: str, patch: int, channels: int) -> np.ndarray:
    """Fixed ``P x P x Ch`` pattern for a token, seeded by a hash of its text."""
    seed = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    return np.random.default_rng(seed).random((patch, patch, channels))


def render_document_image(tokens: Sequence[str], geometry: Geometry) -> np.ndarray:
    """Draw one glyph per token into the patch grid, row-major; the rest stays blank (0).

    Tokens beyond the ``HW / P^2`` available patches are dropped.
    """
    g = geometry
    image = np.zeros(g.shape, dtype=np.float64)
    per_row = g.width // g.patch
    for j, tok in enumerate(list(tokens)[: g.n_patches]):
        r, c = divmod(j, per_row)
        image[r * g.patch:(r + 1) * g.patch, c * g.patch:(c + 1) * g.patch, :] = glyph(
            tok, g.patch, g.channels
        )
    return image


# ---------------------------------------------------------------------------
# manifest


class CorpusManifest:
    """Immutable collection of document records sharing one geometry.

    Images are decoded from their manifest entry on first access.
    """

    def __init__(
        self,
        classes: Sequence[ClassLabel],
        channels: Sequence[str],
        geometry: Geometry,
        entries: Sequence[dict],
        root: Path | None = None,
        tokenizer_vocab: int | None = None,
        meta: Mapping | None = None,
    ):
        self.classes = tuple(classes)
        self.channels = tuple(channels)
        self.geometry = geometry
        self.root = root
        self.tokenizer_vocab = tokenizer_vocab
        self.meta = dict(meta or {})
        self._entries = list(entries)
        self._index = {e["id"]: k for k, e in enumerate(self._entries)}
        self._by_name = {c.name: c for c in self.classes}
        self._images: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[DocumentRecord]:
        for e in self._entries:
            yield self.record(e["id"])

    @property
    def ids(self) -> list[str]:
        return [e["id"] for e in self._entries]

    def class_by_name(self, name: str) -> ClassLabel:
        return self._by_name[name]

    def label_of(self, record_id: str) -> int:
        return self._entries[self._index[record_id]]["label"]

    def labels(self, ids: Sequence[str] | None = None) -> np.ndarray:
        ids = self.ids if ids is None else ids
        return np.array([self.label_of(i) for i in ids], dtype=np.int64)

    def text(self, record_id: str, channel: str) -> str:
        return self._entries[self._index[record_id]]["content"][channel]

    def image(self, record_id: str) -> np.ndarray:
        if record_id not in self._images:
            entry = self._entries[self._index[record_id]]
            img = entry.get("image_array")
            if img is None:
                img = _decode_image(entry["image"], self.geometry, self.root)
            img.setflags(write=False)
            self._images[record_id] = img
        return self._images[record_id]

    def images(self, ids: Sequence[str]) -> np.ndarray:
        return np.stack([self.image(i) for i in ids]) if ids else np.zeros((0, *self.geometry.shape))

    def record(self, record_id: str) -> DocumentRecord:
        e = self._entries[self._index[record_id]]
        return DocumentRecord(
            id=record_id,
            image=self.image(record_id),
            label=self.classes[e["label"]],
            content=dict(e["content"]),
        )

    def header(self) -> dict:
        g = self.geometry
        h = {
            "classes": [c.name for c in self.classes],
            "channels": list(self.channels),
            "H": g.height,
            "W": g.width,
            "Ch": g.channels,
            "P": g.patch,
        }
        if self.tokenizer_vocab is not None:
            h["tokenizer_vocab"] = self.tokenizer_vocab
        h.update(self.meta)
        return h

    def write(self, path: str | Path) -> Path:
        """Write the JSONL manifest with images inline as base64 float32."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(self.header(), sort_keys=True)]
        for e in self._entries:
            rid = e["id"]
            lines.append(
                json.dumps(
                    {
                        "id": rid,
                        "label": self.classes[e["label"]].name,
                        "image": _encode_image(self.image(rid)),
                        "content": e["content"],
                    },
                    sort_keys=True,
                )
            )
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        tmp.replace(path)
        return path


def _encode_image(img: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(img, dtype="<f4").tobytes()).decode("ascii")


def _decode_image(src: str, geometry: Geometry, root: Path | None) -> np.ndarray:
    n = geometry.height * geometry.width * geometry.channels
    candidate = (root / src) if root is not None else Path(src)
    try:
        is_file = len(src) < 4096 and candidate.is_file()
    except OSError:
        is_file = False
    if is_file:
        if candidate.suffix == ".npy":
            arr = np.load(candidate).astype(np.float64)
        else:
            arr = np.frombuffer(candidate.read_bytes(), dtype="<f4").astype(np.float64)
    else:
        arr = np.frombuffer(base64.b64decode(src, validate=True), dtype="<f4").astype(np.float64)
    if arr.size != n:
        raise CorpusError(f"image has {arr.size} values, expected {n}")
    arr = arr.reshape(geometry.shape)
    if not np.all(np.isfinite(arr)):
        raise CorpusError("image contains non-finite values")
    return arr


def load_manifest(path: str | Path) -> CorpusManifest:
    """Parse and validate a JSONL corpus manifest.

    Errors name the offending 1-based line number.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        raw_lines = [ln for ln in fh.read().splitlines()]
    numbered = [(k + 1, ln) for k, ln in enumerate(raw_lines) if ln.strip()]
    if not numbered:
        raise CorpusError("no records")
    first_no, first = numbered[0]
    try:
        header = json.loads(first)
        classes = [ClassLabel(k, str(n)) for k, n in enumerate(header["classes"])]
        channels = [str(c) for c in header["channels"]]
        geometry = Geometry(int(header["H"]), int(header["W"]), int(header["Ch"]), int(header["P"]))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorpusError(f"line {first_no}: malformed header ({exc})") from exc
    if len({c.name for c in classes}) != len(classes):
        raise CorpusError(f"line {first_no}: duplicate class names")
    if not channels:
        raise CorpusError(f"line {first_no}: at least one content channel required")
    name_to_idx = {c.name: c.index for c in classes}
    extra = {k: v for k, v in header.items() if k not in {"classes", "channels", "H", "W", "Ch", "P", "tokenizer_vocab"}}

    entries = []
    seen_ids: set[str] = set()
    for line_no, ln in numbered[1:]:
        try:
            obj = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
        if not isinstance(obj, dict) or not {"id", "label", "image", "content"} <= obj.keys():
            raise CorpusError(f"line {line_no}: record needs id, label, image, content")
        rid = str(obj["id"])
        if rid in seen_ids:
            raise CorpusError(f"line {line_no}: duplicate record id {rid!r}")
        if obj["label"] not in name_to_idx:
            raise CorpusError(f"line {line_no}: unknown label {obj['label']!r}")
        content = obj["content"]
        if not isinstance(content, dict):
            raise CorpusError(f"line {line_no}: content must be an object")
        missing = [c for c in channels if c not in content]
        if missing:
            raise CorpusError(f"line {line_no}: missing channel(s) {missing}")
        seen_ids.add(rid)
        entries.append(
            {
                "id": rid,
                "label": name_to_idx[obj["label"]],
                "image": obj["image"],
                "content": {c: str(content[c]) for c in channels},
            }
        )
    if not entries:
        raise CorpusError("no records")
    return CorpusManifest(
        classes, channels, geometry, entries, root=path.parent,
        tokenizer_vocab=header.get("tokenizer_vocab"), meta=extra,
    )


# ---------------------------------------------------------------------------
# channel views


class DatasetView:
    """Records of a manifest exposing a single content channel."""

    def __init__(self, manifest: CorpusManifest, channel: str, ids: Sequence[str] | None = None):
        if channel not in manifest.channels:
            raise CorpusError(
                f"unknown channel {channel!r}; available: {', '.join(manifest.channels)}"
            )
        self.manifest = manifest
        self.channel = channel
        self.ids = list(manifest.ids if ids is None else ids)

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, ids: Sequence[str]) -> "DatasetView":
        return DatasetView(self.manifest, self.channel, ids)

    def where_label(self, labels) -> "DatasetView":
        keep = set(int(k) for k in labels)
        return self.subset([i for i in self.ids if self.manifest.label_of(i) in keep])

    @property
    def labels(self) -> np.ndarray:
        return self.manifest.labels(self.ids)

    def content(self, record_id: str) -> str:
        return self.manifest.text(record_id, self.channel)

    def texts(self, ids: Sequence[str] | None = None) -> list[str]:
        return [self.content(i) for i in (self.ids if ids is None else ids)]

    def images(self, ids: Sequence[str] | None = None) -> np.ndarray:
        return self.manifest.images(self.ids if ids is None else ids)


def select_channel(manifest: CorpusManifest, channel: str) -> DatasetView:
    return DatasetView(manifest, channel)


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic corpus.

    The ``keyword_pool`` words are cut into ``keywords_per_class`` slots and
    each class is named by one word per slot, so classes own distinct
    keyword combinations over a shared vocabulary and any two classes share
    at most one keyword. Remaining vocabulary words are fillers that only
    appear as noise.
    """

    n_classes: int = 16
    docs_per_class: int = 50
    vocab_size: int = 64
    keywords_per_class: int = 3
    keyword_pool: int = 12
    noise_rate: float = 0.1
    seed: int = 7
    geometry: Geometry = field(default_factory=Geometry)
    tokens_per_doc: int | None = None
    split_group: int = 4

    def validate(self) -> None:
        if self.n_classes < 2:
            raise CorpusError("n_classes: need at least 2 classes")
        if self.docs_per_class < 2:
            raise CorpusError("docs_per_class: must be >= 2")
        if self.keywords_per_class < 1:
            raise CorpusError("keywords_per_class: must be >= 1")
        if self.keywords_per_class * self.n_classes > self.vocab_size:
            raise CorpusError("vocab_size: keywords_per_class * n_classes exceeds vocab_size")
        if not self.keywords_per_class <= self.keyword_pool <= self.vocab_size:
            raise CorpusError("keyword_pool: must lie in [keywords_per_class, vocab_size]")
        if self.keyword_pool % self.keywords_per_class:
            raise CorpusError("keyword_pool: must be a multiple of keywords_per_class")
        if not 0.0 <= self.noise_rate < 1.0:
            raise CorpusError("noise_rate: must lie in [0, 1)")
        if 2 * self.noise_rate > 1.0:
            raise CorpusError("noise_rate: noisy channel corrupts at 2x noise_rate, must be <= 0.5")
        if not 0 <= self.seed < 2**64:
            raise CorpusError("seed: must be a 64-bit unsigned integer")
        if self.tokens_per_doc is not None and self.tokens_per_doc < 1:
            raise CorpusError("tokens_per_doc: must be positive")
        n_combos = (self.keyword_pool // self.keywords_per_class) ** self.keywords_per_class
        if n_combos < self.n_classes:
            raise CorpusError("keyword_pool: too few distinct keyword combinations for n_classes")

    @property
    def doc_length(self) -> int:
        return self.tokens_per_doc or self.geometry.n_patches

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = asdict(self.geometry)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSpec":
        d = dict(d)
        if isinstance(d.get("geometry"), Mapping):
            d["geometry"] = Geometry(**d["geometry"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise CorpusError(f"synthetic spec: {exc}") from exc


_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _make_words(rng: np.random.Generator, n: int) -> list[str]:
    words: list[str] = []
    taken = set(DEFAULT_TEMPLATE_WORDS)
    while len(words) < n:
        syl = rng.integers(2, 4)
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syl))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _keyword_sets(spec: SyntheticSpec, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Pick one keyword per slot for every class.

    The pool is cut into ``keywords_per_class`` slots, so a keyword always
    sits at the same position inside class names. Constraints: two classes
    agree in at most one slot when achievable, every pool word is used, and
    every pool word stays covered by the seen classes when any consecutive
    block of ``split_group`` classes is held out.
    """
    k, pool, n = spec.keywords_per_class, spec.keyword_pool, spec.n_classes
    per_slot = pool // k
    g = spec.split_group
    blocks = [range(b, b + g) for b in range(0, n, g)] if g and n % g == 0 and g < n else []
    slots = [range(s * per_slot, (s + 1) * per_slot) for s in range(k)]
    candidates = list(itertools.product(*slots))
    used_words = set(range(per_slot * k))
    for max_overlap in range(1, k + 1):
        for _ in range(400):
            chosen: list[tuple[int, ...]] = []
            for idx in rng.permutation(len(candidates)):
                combo = candidates[int(idx)]
                if all(sum(a == b for a, b in zip(combo, c)) <= max_overlap for c in chosen):
                    chosen.append(combo)
                    if len(chosen) == n:
                        break
            if len(chosen) < n:
                continue
            if set(itertools.chain(*chosen)) != used_words:
                continue
            if all(
                set(itertools.chain(*(c for j, c in enumerate(chosen) if j not in blk))) == used_words
                for blk in blocks
            ):
                return chosen
    raise CorpusError("keyword_pool: could not find keyword combinations satisfying coverage")


def _corrupt(word: str, rng: np.random.Generator) -> str:
    pos = int(rng.integers(len(word)))
    letters = [ch for ch in "abcdefghijklmnopqrstuvwxyz" if ch != word[pos]]
    return word[:pos] + letters[int(rng.integers(len(letters)))] + word[pos + 1:]


def choose_tokenizer_vocab(words, start: int) -> int:
    """Smallest power-of-two multiple of ``start`` with no bucket collisions among ``words``."""
    size = start
    while Vocabulary(size).collisions(words):
        size *= 2
    return size


def generate_synthetic_corpus(spec: SyntheticSpec, out_dir: str | Path | None = None) -> CorpusManifest:
    """Deterministically build a synthetic corpus; optionally write it to ``out_dir/manifest.jsonl``.

    Content of a document mixes its class keywords with uniform noise
    words at ``noise_rate``; its image renders those same tokens. The
    "noisy" channel corrupts one character of each token with probability
    ``2 * noise_rate``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    words = _make_words(rng, spec.vocab_size)
    pool = words[: spec.keyword_pool]
    combos = _keyword_sets(spec, rng)
    keywords = [[pool[i] for i in combo] for combo in combos]
    classes = [ClassLabel(k, " ".join(kw)) for k, kw in enumerate(keywords)]

    tokenizer_vocab = choose_tokenizer_vocab(
        list(words) + list(DEFAULT_TEMPLATE_WORDS), 4 * spec.vocab_size
    )
    width = len(str(spec.n_classes * spec.docs_per_class - 1))
    entries = []
    for k in range(spec.n_classes):
        for d in range(spec.docs_per_class):
            toks = []
            for _ in range(spec.doc_length):
                if rng.random() < spec.noise_rate:
                    toks.append(words[int(rng.integers(len(words)))])
                else:
                    toks.append(keywords[k][int(rng.integers(len(keywords[k])))])
            noisy = [_corrupt(t, rng) if rng.random() < 2 * spec.noise_rate else t for t in toks]
            idx = k * spec.docs_per_class + d
            entries.append(
                {
                    "id": f"doc{idx:0{width}d}",
                    "label": k,
                    "image": None,
                    "image_array": render_document_image(toks, spec.geometry).astype(np.float32).astype(np.float64),
                    "content": {"clean": " ".join(toks), "noisy": " ".join(noisy)},
                }
            )
    manifest = CorpusManifest(
        classes, CHANNELS, spec.geometry, entries,
        root=Path(out_dir) if out_dir is not None else None,
        tokenizer_vocab=tokenizer_vocab,
        meta={"synthetic_spec": spec.to_dict()},
    )
    if out_dir is not None:
        manifest.write(Path(out_dir) / "manifest.jsonl")
    return manifest


def class_keywords(manifest: CorpusManifest) -> dict[int, list[str]]:
    """Keywords of each synthetic class (its name words)."""
    return {c.index: split_words(c.name) for c in manifest.classes}
