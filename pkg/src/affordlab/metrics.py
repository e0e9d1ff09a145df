"""Ranking metrics over scored pages: NDCG, pairwise preference accuracy,
decision margin and Recall@K.

Scores are passed as ``{page_id: {action_id: score}}``. Rankings sort by
descending score and break ties by ascending ``action_id``. Undefined values
(no ideal gain, no pairs, empty pool) come back as ``None``, never as 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .core import Candidate, DataError, Dataset, FunctionalLevel, Page

ALL = "all"
K = Union[int, str]

TIER_PAIRS = {
    "opt-sub": (FunctionalLevel.OPTIMAL, FunctionalLevel.SUBOPTIMAL),
    "sub-dis": (FunctionalLevel.SUBOPTIMAL, FunctionalLevel.DISTRACTOR),
    "dis-unr": (FunctionalLevel.DISTRACTOR, FunctionalLevel.UNRELATED),
}

PageScores = Mapping[str, float]
Scores = Mapping[str, PageScores]


def positive_group(c: Candidate) -> bool:
    return c.level >= FunctionalLevel.SUBOPTIMAL


def ground_truth(c: Candidate) -> bool:
    return c.is_ground_truth


MARGIN_PREDICATES: dict[str, Callable[[Candidate], bool]] = {
    "positive-group": positive_group,
    "ground-truth": ground_truth,
}


def dcg(levels: Sequence[int]) -> float:
    """Discounted cumulative gain with gain 2**level - 1 and log2(rank + 1) discount."""
    if len(levels) == 0:
        raise ValueError("dcg of an empty ranking")
    total = 0.0
    for rank, lv in enumerate(levels, start=1):
        total += (2.0 ** int(lv) - 1.0) / math.log2(rank + 1)
    return total


def rank_candidates(page: Page, scores: PageScores) -> list[Candidate]:
    for c in page.candidates:
        if c.action_id not in scores:
            raise DataError(f"missing score for ({page.page_id}, {c.action_id})")
    return sorted(page.candidates, key=lambda c: (-scores[c.action_id], c.action_id))


def _cutoff(k: K, n: int) -> int:
    if isinstance(k, str):
        if k.lower() != ALL:
            raise ValueError(f"k must be a positive integer or 'all', got {k!r}")
        return n
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    return min(k, n)


def ndcg_at_k(page: Page, scores: PageScores, k: K = ALL) -> float | None:
    """NDCG of one page at cutoff ``k``; ``None`` when the ideal DCG is zero."""
    ranked = rank_candidates(page, scores)
    cut = _cutoff(k, len(ranked))
    ideal = sorted((int(c.level) for c in page.candidates), reverse=True)[:cut]
    idcg = dcg(ideal)
    if idcg == 0.0:
        return None
    return dcg([int(c.level) for c in ranked[:cut]]) / idcg


def ppa_pair(scores_u: Sequence[float], scores_v: Sequence[float]) -> float | None:
    """Fraction of (u, v) pairs with s_u > s_v, ties credited one half."""
    wins, n = _pair_counts(scores_u, scores_v)
    return wins / n if n else None


def _pair_counts(scores_u: Sequence[float], scores_v: Sequence[float]) -> tuple[float, int]:
    u = np.asarray(scores_u, dtype=np.float64)
    v = np.asarray(scores_v, dtype=np.float64)
    if u.size == 0 or v.size == 0:
        return 0.0, 0
    diff = u[:, None] - v[None, :]
    wins = float(np.count_nonzero(diff > 0)) + 0.5 * float(np.count_nonzero(diff == 0))
    return wins, int(diff.size)


def ppa_adjacent(dataset: Dataset, scores: Scores, upper: FunctionalLevel,
                 lower: FunctionalLevel) -> float | None:
    """Micro-averaged PPA over same-page pairs from two adjacent tiers."""
    if int(upper) != int(lower) + 1:
        raise ValueError(f"tiers {upper!r} and {lower!r} are not adjacent")
    wins, total = 0.0, 0
    for page in dataset.pages:
        ps = scores[page.page_id]
        su = [ps[c.action_id] for c in page.candidates if c.level == upper]
        sv = [ps[c.action_id] for c in page.candidates if c.level == lower]
        w, n = _pair_counts(su, sv)
        wins += w
        total += n
    return wins / total if total else None


def decision_margin(dataset: Dataset, scores: Scores,
                    correct: Callable[[Candidate], bool] = positive_group) -> float | None:
    """Mean score over correct candidates minus mean over the rest, pooled dataset-wide."""
    good, bad = [], []
    for page in dataset.pages:
        ps = scores[page.page_id]
        for c in page.candidates:
            (good if correct(c) else bad).append(ps[c.action_id])
    if not good or not bad:
        return None
    return math.fsum(good) / len(good) - math.fsum(bad) / len(bad)


def recall_at_k(dataset: Dataset, scores: Scores, k: int) -> float | None:
    """Share of Optimal-bearing pages with an Optimal candidate in the top ``k``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    hits = eligible = 0
    for page in dataset.pages:
        if not any(c.level == FunctionalLevel.OPTIMAL for c in page.candidates):
            continue
        eligible += 1
        top = rank_candidates(page, scores[page.page_id])[:k]
        hits += any(c.level == FunctionalLevel.OPTIMAL for c in top)
    return hits / eligible if eligible else None


def level_means(dataset: Dataset, scores: Scores) -> dict[str, float | None]:
    """Mean score per tier, keyed by short tier name."""
    pools: dict[FunctionalLevel, list[float]] = {lv: [] for lv in FunctionalLevel}
    for page in dataset.pages:
        ps = scores[page.page_id]
        for c in page.candidates:
            pools[c.level].append(ps[c.action_id])
    return {lv.short: (math.fsum(v) / len(v) if v else None)
            for lv, v in sorted(pools.items(), reverse=True)}


@dataclass
class EvalReport:
    ndcg_at: dict[str, float | None]
    ppa: dict[str, float | None]
    margin: float | None
    recall_at: dict[str, float | None]
    pages_evaluated: int
    pages_skipped: int
    level_means: dict[str, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ndcg_at": self.ndcg_at,
            "ppa": self.ppa,
            "margin": self.margin,
            "recall_at": self.recall_at,
            "pages_evaluated": self.pages_evaluated,
            "pages_skipped": self.pages_skipped,
            "level_means": self.level_means,
        }


def _k_key(k: K) -> str:
    return ALL if isinstance(k, str) else str(k)


def page_rows(dataset: Dataset, scores: Scores, k_list: Sequence[K] = (8, 16, ALL)) -> list[dict]:
    """Per-page NDCG values, for CSV output."""
    rows = []
    for page in dataset.pages:
        row = {"page_id": page.page_id, "n_candidates": len(page.candidates)}
        for k in k_list:
            v = ndcg_at_k(page, scores[page.page_id], k)
            row[f"ndcg@{_k_key(k)}"] = "" if v is None else v
        rows.append(row)
    return rows


def aggregate_report(dataset: Dataset, scores: Scores, k_list: Sequence[K] = (8, 16, ALL),
                     recall_k: Sequence[int] = (1, 5),
                     correct: Callable[[Candidate], bool] = positive_group) -> EvalReport:
    ndcg_sums = {_k_key(k): 0.0 for k in k_list}
    evaluated = skipped = 0
    for page in dataset.pages:
        ps = scores[page.page_id]
        vals = {_k_key(k): ndcg_at_k(page, ps, k) for k in k_list}
        # the ideal gain is zero at every cutoff or at none
        if any(v is None for v in vals.values()):
            skipped += 1
            continue
        evaluated += 1
        for key, v in vals.items():
            ndcg_sums[key] += v
    ndcg = {key: (s / evaluated if evaluated else None) for key, s in ndcg_sums.items()}
    ppa = {name: ppa_adjacent(dataset, scores, hi, lo) for name, (hi, lo) in TIER_PAIRS.items()}
    return EvalReport(
        ndcg_at=ndcg,
        ppa=ppa,
        margin=decision_margin(dataset, scores, correct),
        recall_at={str(k): recall_at_k(dataset, scores, k) for k in recall_k},
        pages_evaluated=evaluated,
        pages_skipped=skipped,
        level_means=level_means(dataset, scores),
    )
