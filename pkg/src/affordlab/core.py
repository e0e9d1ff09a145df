"""Pages, candidates, the four-level taxonomy and their on-disk formats.

Pages are stored one JSON object per line. Floats go through ``json``'s
``repr``-based encoder, so a save/load cycle is bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class NumericError(ArithmeticError):
    """A numerical contract was violated (non-finite value, degenerate norm)."""


class FunctionalLevel(IntEnum):
    UNRELATED = 0
    DISTRACTOR = 1
    SUBOPTIMAL = 2
    OPTIMAL = 3

    @property
    def gain(self) -> float:
        return float(2 ** int(self) - 1)

    @property
    def short(self) -> str:
        return _SHORT_NAMES[self]


_SHORT_NAMES = {
    FunctionalLevel.OPTIMAL: "opt",
    FunctionalLevel.SUBOPTIMAL: "sub",
    FunctionalLevel.DISTRACTOR: "dis",
    FunctionalLevel.UNRELATED: "unr",
}


def classify_level(advances_task: bool, efficient: bool, related: bool) -> FunctionalLevel:
    """Two-level annotation decision tree.

    The first question is whether the action moves the task forward. Within
    the advancing group ``efficient`` splits Optimal from Suboptimal; within
    the non-advancing group ``related`` splits Distractor from Unrelated.
    """
    if advances_task:
        return FunctionalLevel.OPTIMAL if efficient else FunctionalLevel.SUBOPTIMAL
    return FunctionalLevel.DISTRACTOR if related else FunctionalLevel.UNRELATED


@dataclass(frozen=True)
class Candidate:
    action_id: str
    features: tuple[float, ...]
    level: FunctionalLevel
    is_ground_truth: bool = False
    train_label: bool = False

    def to_dict(self) -> dict:
        return {
            "action_id": self.action_id,
            "features": list(self.features),
            "level": int(self.level),
            "is_ground_truth": self.is_ground_truth,
            "train_label": self.train_label,
        }


@dataclass(frozen=True)
class Page:
    page_id: str
    instruction_features: tuple[float, ...]
    candidates: tuple[Candidate, ...]

    @cached_property
    def feature_matrix(self) -> np.ndarray:
        m = np.array([c.features for c in self.candidates], dtype=np.float64)
        m.setflags(write=False)
        return m

    @cached_property
    def instruction_vector(self) -> np.ndarray:
        v = np.array(self.instruction_features, dtype=np.float64)
        v.setflags(write=False)
        return v

    @cached_property
    def levels(self) -> np.ndarray:
        return np.array([int(c.level) for c in self.candidates], dtype=np.int64)

    @property
    def action_ids(self) -> list[str]:
        return [c.action_id for c in self.candidates]

    def to_dict(self) -> dict:
        return {
            "page_id": self.page_id,
            "instruction_features": list(self.instruction_features),
            "candidates": [c.to_dict() for c in self.candidates],
        }

    def validate(self, training: bool = False) -> None:
        """Raise DataError naming this page and the broken rule."""
        if not self.candidates:
            raise DataError(f"page {self.page_id!r}: no candidates")
        dim = len(self.instruction_features)
        if dim == 0:
            raise DataError(f"page {self.page_id!r}: empty instruction_features")
        if not all(math.isfinite(x) for x in self.instruction_features):
            raise DataError(f"page {self.page_id!r}: non-finite instruction feature")
        seen: set[str] = set()
        for c in self.candidates:
            if c.action_id in seen:
                raise DataError(f"page {self.page_id!r}: duplicate action_id {c.action_id!r}")
            seen.add(c.action_id)
            if len(c.features) != dim:
                raise DataError(
                    f"page {self.page_id!r}: candidate {c.action_id!r} has "
                    f"{len(c.features)} features, expected {dim}"
                )
            if not all(math.isfinite(x) for x in c.features):
                raise DataError(f"page {self.page_id!r}: candidate {c.action_id!r} has non-finite features")
        if training and not any(c.train_label for c in self.candidates):
            raise DataError(f"page {self.page_id!r}: training page without a positive train_label")


@dataclass(frozen=True)
class Dataset:
    pages: tuple[Page, ...]
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        ids = [p.page_id for p in self.pages]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise DataError(f"duplicate page_id {dup!r}")

    def __len__(self) -> int:
        return len(self.pages)

    def __iter__(self):
        return iter(self.pages)

    @property
    def feature_dim(self) -> int | None:
        return len(self.pages[0].instruction_features) if self.pages else None

    def validate(self, training: bool = False) -> None:
        dims = {len(p.instruction_features) for p in self.pages}
        if len(dims) > 1:
            raise DataError(f"inconsistent feature dimensions across pages: {sorted(dims)}")
        for p in self.pages:
            p.validate(training=training)

    def page(self, page_id: str) -> Page:
        return self._index[page_id]

    @cached_property
    def _index(self) -> dict[str, Page]:
        return {p.page_id: p for p in self.pages}

    def level_counts(self) -> dict[FunctionalLevel, int]:
        counts = {lv: 0 for lv in FunctionalLevel}
        for p in self.pages:
            for c in p.candidates:
                counts[c.level] += 1
        return counts


@dataclass(frozen=True)
class ScoreRecord:
    page_id: str
    action_id: str
    score: float


# ---------------------------------------------------------------------------
# (de)serialization

def candidate_from_dict(d: Mapping) -> Candidate:
    level = int(d["level"])
    if level not in (0, 1, 2, 3):
        raise DataError(f"level must be an integer 0-3, got {d['level']!r}")
    return Candidate(
        action_id=str(d["action_id"]),
        features=tuple(float(x) for x in d["features"]),
        level=FunctionalLevel(level),
        is_ground_truth=bool(d.get("is_ground_truth", False)),
        train_label=bool(d.get("train_label", False)),
    )


def page_from_dict(d: Mapping) -> Page:
    return Page(
        page_id=str(d["page_id"]),
        instruction_features=tuple(float(x) for x in d["instruction_features"]),
        candidates=tuple(candidate_from_dict(c) for c in d["candidates"]),
    )


def _read_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: parse error: {exc.msg}") from exc


def load_dataset(path: str | Path, training: bool = False) -> Dataset:
    """Read a page file. A leading ``{"meta": ...}`` line, if present, fills ``Dataset.meta``."""
    pages: list[Page] = []
    meta: dict = {}
    for lineno, rec in _read_jsonl(path):
        if lineno == 1 and set(rec) == {"meta"}:
            meta = rec["meta"]
            continue
        try:
            pages.append(page_from_dict(rec))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            raise DataError(f"{path}:{lineno}: malformed page record ({exc!r})") from exc
    ds = Dataset(tuple(pages), meta)
    ds.validate(training=training)
    return ds


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    lines = []
    if dataset.meta:
        lines.append(json.dumps({"meta": dict(dataset.meta)}, sort_keys=True))
    lines.extend(json.dumps(p.to_dict()) for p in dataset.pages)
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_scores(path: str | Path) -> list[ScoreRecord]:
    out = []
    for lineno, rec in _read_jsonl(path):
        try:
            score = float(rec["score"])
            out.append(ScoreRecord(str(rec["page_id"]), str(rec["action_id"]), score))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: malformed score record ({exc!r})") from exc
        if not math.isfinite(score):
            raise DataError(f"{path}:{lineno}: non-finite score")
    return out


def save_scores(records: Sequence[ScoreRecord], path: str | Path) -> None:
    text = "".join(
        json.dumps({"page_id": r.page_id, "action_id": r.action_id, "score": r.score}) + "\n"
        for r in records
    )
    Path(path).write_text(text, encoding="utf-8")


def scores_by_page(dataset: Dataset, records: Iterable[ScoreRecord]) -> dict[str, dict[str, float]]:
    """Cross-validate score records against a dataset and group them per page.

    Every record must resolve to a candidate, no candidate may be scored twice,
    and every candidate must be scored.
    """
    grouped: dict[str, dict[str, float]] = {p.page_id: {} for p in dataset.pages}
    for r in records:
        if r.page_id not in grouped:
            raise DataError(f"score for unknown page ({r.page_id}, {r.action_id})")
        page = dataset.page(r.page_id)
        if r.action_id not in {c.action_id for c in page.candidates}:
            raise DataError(f"score for unknown action ({r.page_id}, {r.action_id})")
        if r.action_id in grouped[r.page_id]:
            raise DataError(f"duplicate score for ({r.page_id}, {r.action_id})")
        grouped[r.page_id][r.action_id] = r.score
    for p in dataset.pages:
        for c in p.candidates:
            if c.action_id not in grouped[p.page_id]:
                raise DataError(f"missing score for ({p.page_id}, {c.action_id})")
    return grouped


def score_records(scores: Mapping[str, Mapping[str, float]], dataset: Dataset) -> list[ScoreRecord]:
    """Flatten per-page score maps in dataset order."""
    return [
        ScoreRecord(p.page_id, c.action_id, float(scores[p.page_id][c.action_id]))
        for p in dataset.pages
        for c in p.candidates
    ]
