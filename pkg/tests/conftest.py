import sys

import numpy as np
import pytest

from affordlab.core import Candidate, Dataset, FunctionalLevel, Page

L = FunctionalLevel


def make_page(page_id, levels, dim=3, seed=0, labels=None):
    """Tiny page with random features; the first Optimal carries the ground-truth flag."""
    rng = np.random.default_rng(seed)
    first_opt = next((i for i, lv in enumerate(levels) if lv == L.OPTIMAL), None)
    cands = []
    for i, lv in enumerate(levels):
        gt = i == first_opt
        cands.append(Candidate(f"a{i}", tuple(rng.normal(size=dim).tolist()), L(lv),
                               is_ground_truth=gt,
                               train_label=gt if labels is None else labels[i]))
    return Page(page_id, tuple(rng.normal(size=dim).tolist()), tuple(cands))


def oracle_scores(ds):
    return {p.page_id: {c.action_id: float(int(c.level)) for c in p.candidates} for p in ds.pages}


@pytest.fixture
def small_dataset():
    return Dataset((
        make_page("p0", [L.DISTRACTOR, L.OPTIMAL, L.UNRELATED, L.SUBOPTIMAL], seed=1),
        make_page("p1", [L.OPTIMAL, L.UNRELATED, L.DISTRACTOR, L.DISTRACTOR, L.SUBOPTIMAL], seed=2),
    ))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "SUMMARY", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
