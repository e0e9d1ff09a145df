"""Shared-weight (Siamese) tanh encoder with unit-norm output and a hand-written
backward pass.

The same parameters embed both the instruction vector and each candidate's
feature vector; a candidate's score is the cosine between the two embeddings.

Forward products are computed as explicit multiply-and-sum over the input
axis instead of BLAS ``matmul`` so that encoding a row alone and inside a
batch give bitwise-identical results.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import DataError, NumericError, Page

NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_dim: int = 64
    embed_dim: int = 16
    hidden_layers: int = 1

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "embed_dim", "hidden_layers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_dim] * self.hidden_layers + [self.embed_dim]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


@dataclass
class EncoderParams:
    config: EncoderConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, [w.copy() for w in self.weights],
                             [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        """Weights and biases interleaved: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams(self.config, [np.zeros_like(w) for w in self.weights],
                             [np.zeros_like(b) for b in self.biases])

    def allclose(self, other: "EncoderParams", **kw) -> bool:
        return all(np.allclose(a, b, **kw) for a, b in zip(self.arrays(), other.arrays()))

    def equal(self, other: "EncoderParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass
class ForwardTrace:
    """Cache for one batch of rows pushed through :func:`encode_batch`."""

    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    raw: np.ndarray | None = None
    norms: np.ndarray | None = None
    embedding: np.ndarray | None = None


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_out, fan_in in config.layer_shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(config, weights, biases)


def _affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (x[:, None, :] * w[None, :, :]).sum(axis=-1) + b


def encode_batch(params: EncoderParams, features: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.config.input_dim:
        raise NumericError(
            f"expected feature rows of length {params.config.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite encoder input")
    trace = ForwardTrace(inputs=x)
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = _affine(h, w, b)
        trace.pre.append(z)
        h = z if i == last else np.tanh(z)
        trace.post.append(h)
    norms = np.sqrt((h * h).sum(axis=-1))
    if np.any(norms < NORM_FLOOR):
        raise NumericError("degenerate embedding: pre-normalization norm below 1e-12")
    trace.raw = h
    trace.norms = norms
    trace.embedding = h / norms[:, None]
    return trace.embedding, trace


def encode(params: EncoderParams, features: Sequence[float]) -> tuple[np.ndarray, ForwardTrace]:
    emb, trace = encode_batch(params, np.asarray(features, dtype=np.float64)[None, :])
    return emb[0], trace


def _dot_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a * b).sum(axis=-1)


def score(params: EncoderParams, intent_features: Sequence[float],
          action_features: Sequence[float]) -> float:
    u, _ = encode(params, intent_features)
    v, _ = encode(params, action_features)
    return float(_dot_rows(u, v))


def score_matrix(params: EncoderParams, intent: np.ndarray, actions: np.ndarray) -> np.ndarray:
    u, _ = encode(params, intent)
    v, _ = encode_batch(params, actions)
    return _dot_rows(v, u[None, :])


def score_page(params: EncoderParams, page: Page) -> dict[str, float]:
    s = score_matrix(params, page.instruction_vector, page.feature_matrix)
    return {c.action_id: float(x) for c, x in zip(page.candidates, s)}


def backward(params: EncoderParams, traces: Sequence[ForwardTrace],
             upstream: Sequence[np.ndarray]) -> EncoderParams:
    """Accumulate dL/dparams given dL/d(normalized embedding) for each trace row."""
    grads = params.zeros_like()
    last = len(params.weights) - 1
    for trace, g in zip(traces, upstream):
        g = np.asarray(g, dtype=np.float64).reshape(trace.embedding.shape)
        if len(trace.pre) != len(params.weights):
            raise ValueError("trace depth does not match params")
        yhat = trace.embedding
        # Jacobian of y/|y| is (I - yhat yhat^T)/|y|
        delta = (g - yhat * _dot_rows(g, yhat)[:, None]) / trace.norms[:, None]
        for i in range(last, -1, -1):
            if i != last:
                delta = delta * (1.0 - trace.post[i] ** 2)
            h_in = trace.inputs if i == 0 else trace.post[i - 1]
            if delta.shape[1] != params.weights[i].shape[0]:
                raise ValueError("trace shape does not match params")
            grads.weights[i] += delta.T @ h_in
            grads.biases[i] += delta.sum(axis=0)
            if i:
                delta = delta @ params.weights[i]
    return grads


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(params: EncoderParams, path: str | Path, seed: int | None = None,
                    meta: Mapping | None = None) -> None:
    doc = {
        "config": asdict(params.config),
        "seed": seed,
        "meta": dict(meta or {}),
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[EncoderParams, dict]:
    """Return the parameters and the rest of the document (seed, meta)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        config = EncoderConfig(**doc["config"])
        weights = [np.array(w, dtype=np.float64) for w in doc["weights"]]
        biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed checkpoint ({exc!r})") from exc
    expected = config.layer_shapes
    if [w.shape for w in weights] != expected or [b.shape for b in biases] != [(o,) for o, _ in expected]:
        raise DataError(f"{path}: weight shapes do not match config")
    return EncoderParams(config, weights, biases), {"seed": doc.get("seed"), "meta": doc.get("meta", {})}
