"""Finite-difference and equivalence checks for the losses and the encoder.

Each check returns the worst-case error it saw; :func:`run_all` bundles them
into pass/fail lines for the ``gradcheck`` command.

Oracles are kept independent of the paths they check: softmax probabilities
come from ``scipy.special.softmax``, sigmoids from ``scipy.special.expit``,
and loss-level finite differences of InfoNCE are taken in 160-digit
``mpmath`` arithmetic so tiny softmax tails are still resolved.
"""

from __future__ import annotations

from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.special import expit
from scipy.special import softmax as sp_softmax

from . import losses
from .core import Candidate, FunctionalLevel, Page
from .encoder import EncoderConfig, EncoderParams, backward, encode_batch, init_params
from .trainer import LOSS_KINDS, TrainConfig, instance_loss, train_instance

FD_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name}: worst {self.worst:.3e} (tol {self.tolerance:.0e}, {self.cases} cases)"


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-300) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / den))


def _mp_infonce(scores: list, tau) -> mpmath.mpf:
    logits = [s / tau for s in scores]
    return -logits[0] + mpmath.log(mpmath.fsum(mpmath.exp(x) for x in logits))


def infonce_fd(s_pos: float, s_negs: np.ndarray, tau: float) -> np.ndarray:
    """Central differences of the InfoNCE loss in 160-digit arithmetic.

    Softmax tails down to ~1e-90 must survive subtraction from an O(100) loss.
    """
    with mpmath.workdps(160):
        base = [mpmath.mpf(float(s_pos))] + [mpmath.mpf(float(x)) for x in s_negs]
        t = mpmath.mpf(tau)
        h = mpmath.mpf("1e-40")
        out = []
        for i in range(len(base)):
            up = list(base)
            dn = list(base)
            up[i] += h
            dn[i] -= h
            out.append(float((_mp_infonce(up, t) - _mp_infonce(dn, t)) / (2 * h)))
    return np.array(out)


def random_infonce_case(rng: np.random.Generator) -> tuple[float, np.ndarray, float]:
    n = int(rng.integers(1, 33))
    tau = float(rng.uniform(0.01, 1.0))
    return float(rng.uniform(-1, 1)), rng.uniform(-1, 1, size=n), tau


def check_infonce(cases: int = 1000, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    closed = fd = zero_sum = 0.0
    for _ in range(cases):
        s_pos, s_negs, tau = random_infonce_case(rng)
        r = losses.infonce(s_pos, s_negs, tau)
        p = sp_softmax(np.concatenate(([s_pos], s_negs)) / tau)
        closed = max(closed, float(np.max(np.abs(r.grad_negs - p[1:] / tau))))
        analytic = np.concatenate(([r.grad_pos], r.grad_negs))
        fd = max(fd, rel_err(analytic, infonce_fd(s_pos, s_negs, tau)))
        zero_sum = max(zero_sum, abs(r.grad_pos + float(np.sum(r.grad_negs))))
    return [
        CheckResult("infonce grad_neg == P(neg)/tau", closed, 1e-12, cases),
        CheckResult("infonce grad vs finite differences (relative)", fd, 1e-6, cases),
        CheckResult("infonce gradient components sum to zero", zero_sum, 1e-12, cases),
    ]


def check_bce(cases: int = 1000, seed: int = 1) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        s = float(rng.uniform(-30, 30))
        y = bool(rng.integers(2))
        r = losses.bce(s, y)
        worst = max(worst, abs(r.grad_pos - (float(expit(s)) - float(y))))
    return [CheckResult("bce grad == sigmoid(s) - y", worst, 1e-12, cases)]


def check_bce_independence(pages: int = 20, seed: int = 2) -> list[CheckResult]:
    """Changing other candidates' features must leave a candidate's dL/ds bitwise unchanged."""
    rng = np.random.default_rng(seed)
    cfg = TrainConfig(loss_kind="bce")
    params = init_params(EncoderConfig(input_dim=6, hidden_dim=8, embed_dim=4), seed)
    mismatches = 0
    for _ in range(pages):
        page = toy_page(rng, n=6, dim=6)
        rows = np.vstack([page.instruction_vector[None, :], page.feature_matrix])
        cos = _cosines(params, rows)
        _, g = instance_loss(cos, cfg)
        k = int(rng.integers(1, len(cos)))
        perturbed = rows.copy()
        others = [i for i in range(1, rows.shape[0]) if i != k + 1]
        perturbed[others] += rng.normal(size=(len(others), rows.shape[1]))
        _, g2 = instance_loss(_cosines(params, perturbed), cfg)
        mismatches += int(g[k] != g2[k])
    return [CheckResult("bce per-candidate gradient independent of other candidates",
                        float(mismatches), 0.0, pages)]


def _cosines(params: EncoderParams, rows: np.ndarray) -> np.ndarray:
    emb, _ = encode_batch(params, rows)
    return (emb[1:] * emb[0][None, :]).sum(axis=-1)


def check_listwise(cases: int = 1000, seed: int = 3) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    loss_err = grad_err = 0.0
    for _ in range(cases):
        s_pos, s_negs, tau = random_infonce_case(rng)
        a = losses.infonce(s_pos, s_negs, tau)
        logits = np.concatenate(([s_pos], s_negs)) / tau
        target = np.zeros(logits.size)
        target[0] = 1.0
        b = losses.listwise(logits, target)
        loss_err = max(loss_err, abs(a.loss - b.loss))
        ga = np.concatenate(([a.grad_pos], a.grad_negs))
        grad_err = max(grad_err, float(np.max(np.abs(ga - b.grad_negs / tau))))
    return [
        CheckResult("listwise == infonce (loss)", loss_err, 1e-9, cases),
        CheckResult("listwise == infonce (gradient)", grad_err, 1e-9, cases),
    ]


# ---------------------------------------------------------------------------
# encoder and end-to-end

def toy_page(rng: np.random.Generator, n: int = 4, dim: int = 5) -> Page:
    """Small random page; candidate 0 is the labelled positive."""
    levels = [FunctionalLevel.OPTIMAL] + [FunctionalLevel(int(x)) for x in rng.integers(0, 4, n - 1)]
    cands = tuple(
        Candidate(f"a{i}", tuple(rng.normal(size=dim).tolist()), levels[i],
                  is_ground_truth=(i == 0), train_label=(i == 0))
        for i in range(n)
    )
    return Page("toy", tuple(rng.normal(size=dim).tolist()), cands)


def numeric_param_grad(params: EncoderParams, loss_fn, h: float = FD_STEP) -> EncoderParams:
    grads = params.zeros_like()
    for p, g in zip(params.arrays(), grads.arrays()):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = loss_fn(params)
            p[idx] = old - h
            dn = loss_fn(params)
            p[idx] = old
            g[idx] = (up - dn) / (2 * h)
    return grads


def grad_rel_err(analytic: EncoderParams, numeric: EncoderParams) -> float:
    """Largest elementwise relative error.

    Entries smaller than 1e-4 of the gradient's largest magnitude are measured
    against that floor: binary64 central differences at h=1e-6 carry ~1e-10
    absolute roundoff, which would swamp near-zero components.
    """
    a = np.concatenate([x.ravel() for x in analytic.arrays()])
    n = np.concatenate([x.ravel() for x in numeric.arrays()])
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))), 1e-300)
    return rel_err(a, n, floor=1e-4 * scale)


def check_encoder_backward(cases: int = 100, seed: int = 4) -> list[CheckResult]:
    """Random net, random input rows, random linear functional of the embedding."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(cases):
        cfg = EncoderConfig(input_dim=int(rng.integers(2, 6)), hidden_dim=int(rng.integers(2, 7)),
                            embed_dim=int(rng.integers(2, 5)), hidden_layers=int(rng.integers(1, 3)))
        params = init_params(cfg, seed * 1000 + i)
        x = rng.normal(size=(int(rng.integers(1, 4)), cfg.input_dim))
        up = rng.normal(size=(x.shape[0], cfg.embed_dim))

        def loss_fn(p, x=x, up=up):
            emb, _ = encode_batch(p, x)
            return float(np.sum(emb * up))

        _, trace = encode_batch(params, x)
        analytic = backward(params, [trace], [up])
        worst = max(worst, grad_rel_err(analytic, numeric_param_grad(params, loss_fn)))
    return [CheckResult("encoder backward vs finite differences (relative)", worst, 1e-5, cases)]


def check_end_to_end(pages: int = 20, seed: int = 5) -> list[CheckResult]:
    """features -> encoder -> normalization -> cosine -> loss, for every loss kind."""
    out = []
    for kind in LOSS_KINDS:
        rng = np.random.default_rng([seed, LOSS_KINDS.index(kind)])
        # a mild temperature keeps hinge kinks away from the finite-difference stencil
        cfg = TrainConfig(loss_kind=kind, tau=0.5 if kind == "pairwise" else 0.1)
        worst = 0.0
        for i in range(pages):
            page = toy_page(rng, n=4, dim=5)
            params = init_params(EncoderConfig(input_dim=5, hidden_dim=6, embed_dim=3), 100 * seed + i)
            pos, negs = page.candidates[0], list(page.candidates[1:])

            def loss_fn(p, page=page, pos=pos, negs=negs):
                return train_instance(p, page, pos, negs, cfg)[0]

            _, analytic = train_instance(params, page, pos, negs, cfg)
            worst = max(worst, grad_rel_err(analytic, numeric_param_grad(params, loss_fn)))
        out.append(CheckResult(f"end-to-end {kind} gradient vs finite differences (relative)",
                               worst, 1e-5, pages))
    return out


def run_all(fast: bool = False) -> list[CheckResult]:
    n = 200 if fast else 1000
    return (check_infonce(n) + check_bce(n) + check_bce_independence() + check_listwise(n)
            + check_encoder_backward(20 if fast else 100) + check_end_to_end())
