import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affordlab.core import Dataset, FunctionalLevel
from affordlab.experiments import brute_ndcg, brute_ppa, check_metric_oracles
from affordlab.metrics import (ALL, aggregate_report, dcg, decision_margin, ndcg_at_k,
                               ppa_adjacent, ppa_pair, rank_candidates, recall_at_k)
from affordlab.synthworld import WorldConfig, generate_dataset

from conftest import make_page, oracle_scores

L = FunctionalLevel


# ---------------------------------------------------------------------------
# dcg / ndcg

def test_dcg_examples():
    assert dcg([L.OPTIMAL]) == 7.0
    assert dcg([L.UNRELATED, L.UNRELATED]) == 0.0
    # 3 + 7 / log2(3), evaluated in 30-digit arithmetic
    assert dcg([L.SUBOPTIMAL, L.OPTIMAL]) == pytest.approx(7.4165082750002020597, rel=1e-14)


def test_ndcg_worked_example():
    page = make_page("p", [L.DISTRACTOR, L.OPTIMAL, L.UNRELATED, L.SUBOPTIMAL])
    scores = dict(zip(page.action_ids, [0.9, 0.7, 0.5, 0.3]))
    # DCG 6.7085379492 / IDCG 9.3927892607, evaluated in 30-digit arithmetic
    assert ndcg_at_k(page, scores, ALL) == pytest.approx(0.71422212965844404542, rel=1e-13)


def test_ndcg_perfect_and_skipped():
    page = make_page("p", [L.SUBOPTIMAL, L.OPTIMAL, L.DISTRACTOR])
    scores = {c.action_id: float(c.level) for c in page.candidates}
    for k in (1, 2, 3, ALL):
        assert ndcg_at_k(page, scores, k) == 1.0
    junk = make_page("j", [L.UNRELATED, L.UNRELATED])
    assert ndcg_at_k(junk, {"a0": 1.0, "a1": 0.0}) is None


def test_ndcg_rejects_bad_k():
    page = make_page("p", [L.OPTIMAL])
    with pytest.raises(ValueError):
        ndcg_at_k(page, {"a0": 0.0}, 0)
    with pytest.raises(ValueError):
        ndcg_at_k(page, {"a0": 0.0}, "most")


def test_ties_break_by_action_id():
    page = make_page("p", [L.UNRELATED, L.OPTIMAL, L.SUBOPTIMAL])
    ranked = rank_candidates(page, {"a0": 1.0, "a1": 1.0, "a2": 1.0})
    assert [c.action_id for c in ranked] == ["a0", "a1", "a2"]


def test_exhaustive_oracle_equivalence():
    crit = check_metric_oracles()
    assert crit.passed, crit.values


def test_brute_ndcg_agrees_on_sample():
    # the brute reference enumerates every ideal ordering; spot-check it against the library
    page = make_page("p", [L.DISTRACTOR, L.OPTIMAL, L.UNRELATED, L.SUBOPTIMAL])
    s = [0.9, 0.7, 0.5, 0.3]
    lv = [int(c.level) for c in page.candidates]
    for k in (1, 2, 3, 4):
        assert brute_ndcg(lv, s, page.action_ids, k) == ndcg_at_k(page, dict(zip(page.action_ids, s)), k)


# ---------------------------------------------------------------------------
# ppa

def test_ppa_pair_examples():
    assert ppa_pair([0.9, 0.5], [0.7, 0.5]) == 0.625
    assert ppa_pair([0.3, 0.3], [0.3]) == 0.5
    assert ppa_pair([2, 3], [0, 1]) == 1.0
    assert ppa_pair([], [1.0]) is None


def test_ppa_dataset_oracle_constant_and_brute(small_dataset):
    sc = oracle_scores(small_dataset)
    for hi, lo in ((L.OPTIMAL, L.SUBOPTIMAL), (L.SUBOPTIMAL, L.DISTRACTOR), (L.DISTRACTOR, L.UNRELATED)):
        assert ppa_adjacent(small_dataset, sc, hi, lo) == 1.0
    const = {p.page_id: {c.action_id: 0.0 for c in p.candidates} for p in small_dataset.pages}
    assert ppa_adjacent(small_dataset, const, L.SUBOPTIMAL, L.DISTRACTOR) == 0.5

    # two-page toy set, hand-enumerated pairs
    # p0: sub a3=0.2 vs dis a0=0.4 -> 0 ; p1: sub a4=0.1 vs dis a2=0.1, a3=0.0 -> 0.5 + 1
    sc = {"p0": {"a0": 0.4, "a1": 0.9, "a2": 0.0, "a3": 0.2},
          "p1": {"a0": 1.0, "a1": 0.3, "a2": 0.1, "a3": 0.0, "a4": 0.1}}
    assert ppa_adjacent(small_dataset, sc, L.SUBOPTIMAL, L.DISTRACTOR) == pytest.approx(1.5 / 3)
    with pytest.raises(ValueError):
        ppa_adjacent(small_dataset, sc, L.OPTIMAL, L.DISTRACTOR)


def test_ppa_absent_when_no_pairs():
    ds = Dataset((make_page("p", [L.OPTIMAL, L.UNRELATED]),))
    assert ppa_adjacent(ds, oracle_scores(ds), L.SUBOPTIMAL, L.DISTRACTOR) is None


def test_brute_ppa_reference():
    levels = [3, 2, 1, 1, 0]
    scores = [0.5, 0.5, 0.5, 0.9, 0.1]
    # sub (0.5) vs dis (0.5, 0.9): 0.5 + 0
    assert brute_ppa(levels, scores, 2) == 0.25


# ---------------------------------------------------------------------------
# margin and recall

def test_margin_examples():
    ds = Dataset((make_page("p", [L.OPTIMAL, L.SUBOPTIMAL, L.DISTRACTOR, L.UNRELATED]),))
    sc = {"p": {"a0": 2.0, "a1": 4.0, "a2": 1.0, "a3": 3.0}}
    assert decision_margin(ds, sc) == 1.0
    assert decision_margin(ds, {"p": dict.fromkeys(sc["p"], 0.7)}) == 0.0
    shifted = {"p": {"a0": 5.5, "a1": 5.5, "a2": 0.25, "a3": 0.25}}
    assert decision_margin(ds, shifted) == 5.25
    only_good = Dataset((make_page("q", [L.OPTIMAL, L.SUBOPTIMAL]),))
    assert decision_margin(only_good, oracle_scores(only_good)) is None


def test_recall_examples():
    ds = generate_dataset(WorldConfig(seed=5), 6)
    sc = oracle_scores(ds)
    assert recall_at_k(ds, sc, 1) == 1.0
    anti = {p.page_id: {c.action_id: -float(c.level) for c in p.candidates} for p in ds.pages}
    assert recall_at_k(ds, anti, 1) == 0.0
    no_opt = Dataset((make_page("q", [L.SUBOPTIMAL, L.UNRELATED]),))
    assert recall_at_k(no_opt, oracle_scores(no_opt), 1) is None


def test_recall_toy_exhaustive():
    pages = tuple(make_page(f"p{i}", lv, seed=i) for i, lv in enumerate(
        [[3, 0, 1, 2], [0, 3, 3, 1], [1, 2, 0, 0], [0, 0, 1, 3]]))
    ds = Dataset(pages)
    rng = np.random.default_rng(3)
    sc = {p.page_id: {c.action_id: float(rng.normal()) for c in p.candidates} for p in pages}
    for k in (1, 2, 3, 4):
        hits = eligible = 0
        for p in pages:
            if 3 not in [int(c.level) for c in p.candidates]:
                continue
            eligible += 1
            order = sorted(p.candidates, key=lambda c: -sc[p.page_id][c.action_id])
            hits += any(int(c.level) == 3 for c in order[:k])
        assert recall_at_k(ds, sc, k) == hits / eligible


# ---------------------------------------------------------------------------
# aggregate report

def test_report_oracle_and_anti_oracle():
    ds = generate_dataset(WorldConfig(seed=6), 10)
    rep = aggregate_report(ds, oracle_scores(ds))
    assert rep.ndcg_at[ALL] == 1.0
    assert all(v == 1.0 for v in rep.ppa.values())
    anti = {p.page_id: {c.action_id: -float(c.level) for c in p.candidates} for p in ds.pages}
    assert all(v == 0.0 for v in aggregate_report(ds, anti).ppa.values())


def _independent_report(ds, sc, k):
    """Straight-line re-implementation used as an oracle for the aggregated report."""
    ndcgs = []
    for p in ds.pages:
        ids = [c.action_id for c in p.candidates]
        lv = {c.action_id: int(c.level) for c in p.candidates}
        order = sorted(ids, key=lambda a: (-sc[p.page_id][a], a))
        cut = len(ids) if k == ALL else min(k, len(ids))
        gain = sum((2 ** lv[a] - 1) / math.log2(r + 2) for r, a in enumerate(order[:cut]))
        ideal = sorted(lv.values(), reverse=True)[:cut]
        igain = sum((2 ** v - 1) / math.log2(r + 2) for r, v in enumerate(ideal))
        if igain > 0:
            ndcgs.append(gain / igain)
    pairs = {}
    for name, (hi, lo) in {"sub-dis": (2, 1), "dis-unr": (1, 0), "opt-sub": (3, 2)}.items():
        w = n = 0.0
        for p in ds.pages:
            u = [sc[p.page_id][c.action_id] for c in p.candidates if int(c.level) == hi]
            v = [sc[p.page_id][c.action_id] for c in p.candidates if int(c.level) == lo]
            for a, b in itertools.product(u, v):
                w += 1.0 if a > b else 0.5 if a == b else 0.0
                n += 1
        pairs[name] = w / n if n else None
    good = [sc[p.page_id][c.action_id] for p in ds.pages for c in p.candidates if int(c.level) >= 2]
    bad = [sc[p.page_id][c.action_id] for p in ds.pages for c in p.candidates if int(c.level) < 2]
    return sum(ndcgs) / len(ndcgs), pairs, sum(good) / len(good) - sum(bad) / len(bad)


def test_report_random_scorer_matches_independent_implementation():
    ds = generate_dataset(WorldConfig(seed=7, candidates_per_page=12), 25)
    rng = np.random.default_rng(12)
    # coarse rounding forces plenty of ties
    sc = {p.page_id: {c.action_id: float(np.round(rng.normal(), 1)) for c in p.candidates}
          for p in ds.pages}
    rep = aggregate_report(ds, sc, k_list=(8, ALL))
    for k in (8, ALL):
        nd, pairs, margin = _independent_report(ds, sc, k)
        assert rep.ndcg_at[str(k) if k != ALL else ALL] == pytest.approx(nd, abs=1e-12)
    for name, v in pairs.items():
        assert rep.ppa[name] == pytest.approx(v, abs=1e-12)
    assert rep.margin == pytest.approx(margin, abs=1e-12)


# ---------------------------------------------------------------------------
# properties

levels_st = st.lists(st.integers(0, 3), min_size=1, max_size=8)


@settings(max_examples=60, deadline=None)
@given(levels_st, st.data())
def test_ndcg_invariant_under_increasing_transform(levels, data):
    page = make_page("p", levels)
    raw = data.draw(st.lists(st.floats(-5, 5), min_size=len(levels), max_size=len(levels)))
    s1 = dict(zip(page.action_ids, raw))
    # rank map and exact doubling are strictly increasing even in binary64
    rank = {v: i ** 3 - 40.0 for i, v in enumerate(sorted(set(raw)))}
    s2 = {a: rank[v] for a, v in s1.items()}
    s3 = {a: 2.0 * v for a, v in s1.items()}
    for k in (1, 3, ALL):
        assert ndcg_at_k(page, s1, k) == ndcg_at_k(page, s2, k) == ndcg_at_k(page, s3, k)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.5, 1.0, 2.0]), min_size=1, max_size=6),
       st.lists(st.sampled_from([0.0, 0.5, 1.0, 2.0]), min_size=1, max_size=6))
def test_ppa_pair_complement(u, v):
    assert ppa_pair(u, v) + ppa_pair(v, u) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(-10, 10), st.floats(0.1, 10))
def test_margin_shift_and_scale(raw, c, a):
    ds = Dataset((make_page("p", [L.OPTIMAL, L.SUBOPTIMAL, L.DISTRACTOR, L.UNRELATED]),))
    base = {"p": dict(zip(ds.pages[0].action_ids, raw))}
    m = decision_margin(ds, base)
    shifted = {"p": {k: v + c for k, v in base["p"].items()}}
    scaled = {"p": {k: v * a for k, v in base["p"].items()}}
    assert decision_margin(ds, shifted) == pytest.approx(m, abs=1e-9)
    assert decision_margin(ds, scaled) == pytest.approx(a * m, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_recall_monotone_in_k(seed):
    ds = generate_dataset(WorldConfig(seed=seed % 7, candidates_per_page=8), 4)
    rng = np.random.default_rng(seed)
    sc = {p.page_id: {c.action_id: float(rng.normal()) for c in p.candidates} for p in ds.pages}
    vals = [recall_at_k(ds, sc, k) for k in range(1, 9)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == 1.0
