import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affordlab.core import (Candidate, DataError, Dataset, FunctionalLevel, Page, ScoreRecord,
                            classify_level, load_dataset, load_scores, save_dataset, save_scores,
                            score_records, scores_by_page)
from affordlab.synthworld import WorldConfig, generate_dataset

from conftest import make_page

L = FunctionalLevel


def test_classify_level_truth_table_is_exhaustive():
    expected = {
        (True, True): L.OPTIMAL,
        (True, False): L.SUBOPTIMAL,
    }
    for adv, eff, rel in itertools.product((False, True), repeat=3):
        got = classify_level(adv, eff, rel)
        if adv:
            assert got == expected[(adv, eff)]
        else:
            assert got == (L.DISTRACTOR if rel else L.UNRELATED)


def test_level_gain_and_names():
    assert [lv.gain for lv in sorted(L)] == [0.0, 1.0, 3.0, 7.0]
    assert L.OPTIMAL.short == "opt" and L.UNRELATED.short == "unr"


def test_round_trip_two_pages(tmp_path, small_dataset):
    path = tmp_path / "d.jsonl"
    save_dataset(small_dataset, path)
    back = load_dataset(path)
    assert len(back) == 2
    assert back.pages == small_dataset.pages


def test_empty_file_gives_empty_dataset(tmp_path):
    path = tmp_path / "e.jsonl"
    path.write_text("")
    assert len(load_dataset(path)) == 0


def test_duplicate_action_id_names_page(tmp_path, small_dataset):
    page = small_dataset.pages[0].to_dict()
    page["candidates"][1]["action_id"] = page["candidates"][0]["action_id"]
    path = tmp_path / "dup.jsonl"
    path.write_text(json.dumps(page) + "\n")
    with pytest.raises(DataError, match="'p0'.*duplicate action_id"):
        load_dataset(path)


def test_duplicate_page_id_rejected(small_dataset):
    with pytest.raises(DataError, match="duplicate page_id"):
        Dataset((small_dataset.pages[0], small_dataset.pages[0]))


def test_parse_error_reports_line(tmp_path, small_dataset):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(small_dataset.pages[0].to_dict()) + "\n{not json\n")
    with pytest.raises(DataError, match=":2: parse error"):
        load_dataset(path)


def test_training_page_needs_positive():
    page = make_page("q", [L.DISTRACTOR, L.UNRELATED])
    page.validate()
    with pytest.raises(DataError, match="without a positive"):
        page.validate(training=True)


def test_feature_dimension_mismatch():
    page = make_page("q", [L.OPTIMAL, L.UNRELATED])
    bad = Page("q", page.instruction_features,
               (page.candidates[0], Candidate("x", (1.0,), L.UNRELATED, False, False)))
    with pytest.raises(DataError, match="expected 3"):
        bad.validate()


def test_unwritable_path_raises_oserror(tmp_path, small_dataset):
    with pytest.raises(OSError):
        save_dataset(small_dataset, tmp_path / "missing-dir" / "d.jsonl")


def test_one_line_per_page(tmp_path):
    ds = generate_dataset(WorldConfig(seed=4), 5)
    path = tmp_path / "g.jsonl"
    save_dataset(ds, path)
    lines = path.read_text().splitlines()
    # a meta header line plus one line per page
    assert json.loads(lines[0]).keys() == {"meta"}
    assert len(lines) == 1 + 5
    assert all(len(json.loads(x)["candidates"]) == 30 for x in lines[1:])
    assert load_dataset(path).pages == ds.pages


def test_score_records_round_trip(tmp_path):
    pages = tuple(make_page(f"p{i}", [L.OPTIMAL, L.SUBOPTIMAL, L.DISTRACTOR, L.UNRELATED], seed=i)
                  for i in range(3))
    ds = Dataset(pages)
    scores = {p.page_id: {c.action_id: 0.1 * j for j, c in enumerate(p.candidates)} for p in pages}
    recs = score_records(scores, ds)
    assert len(recs) == 12
    path = tmp_path / "s.jsonl"
    save_scores(recs, path)
    back = load_scores(path)
    assert back == recs
    assert scores_by_page(ds, back) == scores


def test_unknown_missing_and_duplicate_scores(small_dataset):
    recs = score_records({p.page_id: {c.action_id: 0.0 for c in p.candidates}
                          for p in small_dataset.pages}, small_dataset)
    with pytest.raises(DataError, match=r"unknown action \(p0, zz\)"):
        scores_by_page(small_dataset, recs + [ScoreRecord("p0", "zz", 1.0)])
    with pytest.raises(DataError, match=r"missing score for \(p1, a4\)"):
        scores_by_page(small_dataset, recs[:-1])
    with pytest.raises(DataError, match="duplicate score"):
        scores_by_page(small_dataset, recs + recs[:1])


def test_every_level_present_in_default_data():
    counts = generate_dataset(WorldConfig(seed=9), 50).level_counts()
    assert all(counts[lv] > 0 for lv in L)


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.lists(finite, min_size=2, max_size=2), st.integers(0, 3), st.booleans()),
                min_size=1, max_size=5),
       st.lists(finite, min_size=2, max_size=2))
def test_round_trip_identity_property(tmp_path_factory, cands, instr):
    page = Page("h", tuple(instr), tuple(
        Candidate(f"c{i}", tuple(f), L(lv), is_ground_truth=False, train_label=lab)
        for i, (f, lv, lab) in enumerate(cands)))
    ds = Dataset((page,), {"note": "x"})
    path = tmp_path_factory.mktemp("rt") / "d.jsonl"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.pages == ds.pages and dict(back.meta) == {"note": "x"}
