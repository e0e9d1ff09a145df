import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affordlab.core import DataError, NumericError
from affordlab.encoder import (EncoderConfig, backward, encode, encode_batch, init_params,
                               load_checkpoint, save_checkpoint, score, score_page)
from affordlab.gradcheck import check_encoder_backward
from affordlab.synthworld import WorldConfig, generate_dataset

CFG = EncoderConfig(input_dim=4, hidden_dim=8, embed_dim=3)


def test_init_deterministic_and_seed_sensitive():
    a, b, c = init_params(CFG, 7), init_params(CFG, 7), init_params(CFG, 8)
    assert a.equal(b)
    assert not a.equal(c)


def test_weight_shapes():
    p = init_params(CFG, 0)
    assert [w.shape for w in p.weights] == [(8, 4), (3, 8)]
    assert [b.shape for b in p.biases] == [(8,), (3,)]
    deep = init_params(EncoderConfig(input_dim=4, hidden_dim=5, embed_dim=2, hidden_layers=3), 0)
    assert [w.shape for w in deep.weights] == [(5, 4), (5, 5), (5, 5), (2, 5)]


def test_bad_config():
    with pytest.raises(ValueError):
        EncoderConfig(input_dim=0)


def test_degenerate_direction_is_an_error():
    p = init_params(CFG, 0)
    for w in p.weights:
        w[:] = 0.0
    with pytest.raises(NumericError, match="degenerate"):
        encode(p, [1.0, 2.0, 3.0, 4.0])


def test_bad_inputs():
    p = init_params(CFG, 0)
    with pytest.raises(NumericError):
        encode(p, [1.0, 2.0])
    with pytest.raises(NumericError):
        encode(p, [1.0, np.nan, 0.0, 0.0])


def test_purity():
    p = init_params(CFG, 3)
    x = [0.3, -1.2, 2.0, 0.1]
    a, _ = encode(p, x)
    b, _ = encode(p, x)
    assert np.array_equal(a, b)


def test_score_identity_and_pairs():
    p = init_params(CFG, 5)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=4), rng.normal(size=4)
    assert score(p, x, x) == pytest.approx(1.0, abs=1e-12)
    u, _ = encode(p, x)
    v, _ = encode(p, y)
    assert score(p, x, y) == pytest.approx(float(np.dot(u, v)), abs=1e-15)
    assert score(p, x, y) == score(p, y, x)
    assert -1.0 <= score(p, x, y) <= 1.0


def test_score_page_cardinality_and_caching():
    ds = generate_dataset(WorldConfig(seed=2), 3)
    p = init_params(EncoderConfig(input_dim=32, hidden_dim=16, embed_dim=8), 1)
    for page in ds.pages:
        sp = score_page(p, page)
        assert len(sp) == 30
        for c in page.candidates:
            assert sp[c.action_id] == score(p, page.instruction_features, c.features)


def test_zero_upstream_gives_zero_gradient():
    p = init_params(CFG, 0)
    _, tr = encode_batch(p, np.ones((2, 4)))
    g = backward(p, [tr], [np.zeros((2, 3))])
    assert all(not np.any(a) for a in g.arrays())


def test_backward_finite_differences():
    res = check_encoder_backward(cases=100)[0]
    assert res.passed, res.line()


def test_checkpoint_round_trip(tmp_path):
    p = init_params(CFG, 4)
    path = tmp_path / "ck.json"
    save_checkpoint(p, path, seed=4, meta={"loss": "infonce"})
    q, info = load_checkpoint(path)
    assert q.equal(p)
    assert info["seed"] == 4 and info["meta"] == {"loss": "infonce"}


def test_malformed_checkpoint(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{}")
    with pytest.raises(DataError):
        load_checkpoint(path)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4), st.integers(0, 100))
def test_unit_norm_property(x, seed):
    p = init_params(EncoderConfig(input_dim=4, hidden_dim=6, embed_dim=3, hidden_layers=2), seed)
    try:
        e, _ = encode(p, x)
    except NumericError:
        return
    assert abs(np.linalg.norm(e) - 1.0) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 1000))
def test_batch_equals_single_rows_bitwise(n, seed):
    p = init_params(CFG, seed)
    x = np.random.default_rng(seed).normal(size=(n, 4))
    batch, _ = encode_batch(p, x)
    for i in range(n):
        single, _ = encode(p, x[i])
        assert np.array_equal(batch[i], single)
