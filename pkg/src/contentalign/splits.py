"""Seen/unseen class partitions: sequential and rank-ordered incremental splits."""

from __future__ import annotations

import csv
import json
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import ClassLabel, CorpusManifest

# Order under which the published sequential splits are consecutive blocks of four.
RVL_CDIP_CLASSES = (
    "letter",
    "form",
    "email",
    "handwritten",
    "advertisement",
    "scientific report",
    "scientific publication",
    "specification",
    "file folder",
    "news article",
    "budget",
    "invoice",
    "presentation",
    "questionnaire",
    "resume",
    "memo",
)


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    name: str
    seen: frozenset[int]
    unseen: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "seen", frozenset(int(i) for i in self.seen))
        object.__setattr__(self, "unseen", frozenset(int(i) for i in self.unseen))

    def seen_mask(self, n_classes: int) -> list[bool]:
        return [i in self.seen for i in range(n_classes)]

    def to_json(self, classes: Sequence[ClassLabel]) -> dict:
        return {
            "name": self.name,
            "seen": [classes[i].name for i in sorted(self.seen)],
            "unseen": [classes[i].name for i in sorted(self.unseen)],
        }

    def save(self, path: str | Path, classes: Sequence[ClassLabel]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(classes), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_json(cls, obj: dict, classes: Sequence[ClassLabel]) -> "SplitSpec":
        by_name = {c.name: c.index for c in classes}
        try:
            seen = [by_name[n] for n in obj["seen"]]
            unseen = [by_name[n] for n in obj["unseen"]]
        except KeyError as exc:
            raise SplitError(f"split {obj.get('name')!r}: unknown class {exc.args[0]!r}") from exc
        return cls(str(obj["name"]), frozenset(seen), frozenset(unseen))


def load_split(path: str | Path, classes: Sequence[ClassLabel]) -> SplitSpec:
    return SplitSpec.from_json(json.loads(Path(path).read_text(encoding="utf-8")), classes)


def _block_name(i: int) -> str:
    letters = string.ascii_uppercase
    name = ""
    i += 1
    while i:
        i, r = divmod(i - 1, 26)
        name = letters[r] + name
    return name


def make_sequential_splits(classes: Sequence[ClassLabel], group_size: int = 4) -> list[SplitSpec]:
    """Split ``i`` (named A, B, ...) holds out the ``i``-th consecutive block of ``group_size`` classes."""
    n = len(classes)
    if group_size < 1 or n % group_size:
        raise SplitError(f"{n} classes not divisible into groups of {group_size}")
    all_idx = {c.index for c in classes}
    splits = []
    for b in range(n // group_size):
        unseen = {c.index for c in classes[b * group_size:(b + 1) * group_size]}
        splits.append(SplitSpec(_block_name(b), frozenset(all_idx - unseen), frozenset(unseen)))
    return splits


@dataclass(frozen=True)
class RankOrdering:
    """Classes ascending by accuracy; ties broken by ascending class index."""

    entries: tuple[tuple[ClassLabel, float], ...]

    @classmethod
    def from_accuracies(cls, acc: dict[ClassLabel, float] | Sequence[tuple[ClassLabel, float]]) -> "RankOrdering":
        items = list(acc.items()) if isinstance(acc, dict) else list(acc)
        for c, a in items:
            if not 0.0 <= a <= 100.0:
                raise SplitError(f"accuracy for {c.name!r} outside [0, 100]: {a}")
        items.sort(key=lambda ca: (ca[1], ca[0].index))
        return cls(tuple(items))

    @property
    def classes(self) -> list[ClassLabel]:
        return [c for c, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def make_incremental_split(
    ranking: RankOrdering, i: int, min_unseen: int = 2, max_unseen: int = 8
) -> SplitSpec:
    """The ``i`` worst-ranked classes become unseen; the rest stay seen."""
    k = len(ranking)
    lo, hi = max(1, min_unseen), min(max_unseen, k - 1)
    if not lo <= i <= hi:
        raise SplitError(f"incremental split index {i} outside [{lo}, {hi}]")
    order = [c.index for c in ranking.classes]
    return SplitSpec(f"S_I_{i}", frozenset(order[i:]), frozenset(order[:i]))


def load_rank_ordering(path: str | Path, classes: Sequence[ClassLabel]) -> RankOrdering:
    """Read a ``class,accuracy`` CSV (with header) and sort it."""
    by_name = {c.name: c for c in classes}
    seen: dict[str, float] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"class", "accuracy"} <= set(reader.fieldnames):
            raise SplitError("rank ordering CSV needs a 'class,accuracy' header")
        for row in reader:
            name = row["class"].strip()
            if name not in by_name:
                raise SplitError(f"rank ordering: unknown class {name!r}")
            if name in seen:
                raise SplitError(f"rank ordering: duplicate class {name!r}")
            try:
                seen[name] = float(row["accuracy"])
            except ValueError as exc:
                raise SplitError(f"rank ordering: bad accuracy for {name!r}") from exc
    missing = [c.name for c in classes if c.name not in seen]
    if missing:
        raise SplitError(f"rank ordering: missing classes {missing}")
    return RankOrdering.from_accuracies([(by_name[n], a) for n, a in seen.items()])


def validate_split(split: SplitSpec, manifest: CorpusManifest) -> list[str]:
    """Itemized violations; an empty list means the split is usable."""
    problems = []
    all_idx = {c.index for c in manifest.classes}
    overlap = split.seen & split.unseen
    if overlap:
        problems.append(f"disjointness: classes in both sets: {sorted(overlap)}")
    missing = all_idx - (split.seen | split.unseen)
    if missing:
        problems.append(f"exhaustiveness: classes in neither set: {sorted(missing)}")
    unknown = (split.seen | split.unseen) - all_idx
    if unknown:
        problems.append(f"unknown class indices: {sorted(unknown)}")
    counts = {i: 0 for i in all_idx}
    for lab in manifest.labels():
        counts[int(lab)] += 1
    empty = [manifest.classes[i].name for i in sorted(all_idx) if counts[i] == 0]
    if empty:
        problems.append(f"coverage: classes without records: {empty}")
    return problems
