"""Two-stage curriculum training of the shared encoder.

One training instance is (page, positive, sampled negatives). Every loss is
evaluated on the cosine scores of that instance: InfoNCE takes raw cosines and
the temperature; BCE, pairwise hinge and listwise take temperature-scaled
logits ``cos / tau``, so all four objectives see the same score scale.
Updates are per instance with Adam; serial training is bitwise deterministic.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import losses
from .core import Candidate, Dataset, FunctionalLevel, Page
from .encoder import EncoderParams, backward, encode_batch, score_page
from .metrics import ALL, aggregate_report
from .synthworld import flip_labels
from .tts import Critic, SimConfig, run_simulation

log = logging.getLogger(__name__)

LOSS_KINDS = ("infonce", "bce", "pairwise", "listwise")
NEGATIVE_STRATEGIES = ("uniform", "hard_band")

HARD_BAND_WEIGHTS = {
    FunctionalLevel.DISTRACTOR: 4.0,
    FunctionalLevel.SUBOPTIMAL: 2.0,
    FunctionalLevel.OPTIMAL: 2.0,
    FunctionalLevel.UNRELATED: 1.0,
}


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "infonce"
    tau: float = losses.DEFAULT_TAU
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs_stage1: int = 1
    epochs_stage2: int = 2
    negatives: int = 16
    negative_strategy: str = "uniform"
    label_noise: float = 0.0
    hinge_margin: float = losses.DEFAULT_MARGIN
    seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.negative_strategy not in NEGATIVE_STRATEGIES:
            raise ValueError(f"negative_strategy must be one of {NEGATIVE_STRATEGIES}")
        if not self.tau > 0 or not self.learning_rate > 0:
            raise ValueError("tau and learning_rate must be > 0")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValueError("label_noise must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    mean_loss: float
    instances: int
    heldout_margin: float | None
    heldout_ndcg_all: float | None
    wall_clock_s: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def extend(self, other: "TrainLog") -> None:
        self.records.extend(other.records)

    def rows(self, with_time: bool = True) -> list[dict]:
        rows = [asdict(r) for r in self.records]
        if not with_time:
            for r in rows:
                r.pop("wall_clock_s")
        return rows


class Adam:
    def __init__(self, params: EncoderParams, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, params: EncoderParams, grads: EncoderParams) -> None:
        """In-place update of ``params``."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params.arrays(), grads.arrays(), self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def sample_negatives(page: Page, k: int, strategy: str, rng: np.random.Generator) -> list[Candidate]:
    pool = [c for c in page.candidates if not c.train_label]
    if not pool:
        raise ValueError(f"page {page.page_id!r} has no negatives")
    if k >= len(pool):
        return pool
    if strategy == "uniform":
        idx = rng.choice(len(pool), size=k, replace=False)
    elif strategy == "hard_band":
        w = np.array([HARD_BAND_WEIGHTS[c.level] for c in pool])
        idx = rng.choice(len(pool), size=k, replace=False, p=w / w.sum())
    else:
        raise ValueError(f"unknown negative strategy {strategy!r}")
    return [pool[i] for i in sorted(idx)]


def instance_loss(cos: np.ndarray, config: TrainConfig) -> tuple[float, np.ndarray]:
    """Loss and dL/dcos for scores ordered [positive, negatives...]."""
    tau = config.tau
    kind = config.loss_kind
    n_neg = cos.size - 1
    if kind == "infonce":
        r = losses.infonce(cos[0], cos[1:], tau)
        return r.loss, np.concatenate(([r.grad_pos], r.grad_negs))
    logits = cos / tau
    if kind == "listwise":
        target = np.zeros(cos.size)
        target[0] = 1.0
        r = losses.listwise(logits, target)
        return r.loss, r.grad_negs / tau
    if kind == "bce":
        terms = [losses.bce(logits[0], True)] + [losses.bce(s, False) for s in logits[1:]]
        n = len(terms)
        return (sum(t.loss for t in terms) / n,
                np.array([t.grad_pos for t in terms]) / (n * tau))
    if kind == "pairwise":
        if n_neg == 0:
            return 0.0, np.zeros(1)
        grad = np.zeros(cos.size)
        total = 0.0
        for k in range(1, cos.size):
            r = losses.pairwise_hinge(logits[0], logits[k], config.hinge_margin)
            total += r.loss
            grad[0] += r.grad_pos
            grad[k] += r.grad_negs[0]
        return total / n_neg, grad / (n_neg * tau)
    raise ValueError(f"unknown loss kind {kind!r}")


def train_instance(params: EncoderParams, page: Page, positive: Candidate,
                   negatives: Sequence[Candidate], config: TrainConfig,
                   score_bias: float = 0.0) -> tuple[float, EncoderParams]:
    """Loss and parameter gradient for one (positive, negatives) instance.

    ``score_bias`` adds a constant to every candidate score before the loss;
    it exists for translation-invariance probes.
    """
    if not positive.train_label:
        raise ValueError("positive candidate must carry train_label = true")
    rows = np.vstack([page.instruction_vector[None, :],
                      np.array([positive.features] + [c.features for c in negatives])])
    emb, trace = encode_batch(params, rows)
    intent, acts = emb[0], emb[1:]
    cos = (acts * intent[None, :]).sum(axis=-1) + score_bias
    loss, g = instance_loss(cos, config)
    upstream = np.empty_like(emb)
    upstream[0] = g @ acts
    upstream[1:] = g[:, None] * intent[None, :]
    return loss, backward(params, [trace], [upstream])


def _instances(page: Page) -> list[Candidate]:
    return [c for c in page.candidates if c.train_label]


def _evaluate(params: EncoderParams, heldout: Dataset | None) -> tuple[float | None, float | None]:
    if heldout is None:
        return None, None
    scores = {p.page_id: score_page(params, p) for p in heldout.pages}
    rep = aggregate_report(heldout, scores, k_list=(ALL,), recall_k=())
    return rep.margin, rep.ndcg_at[ALL]


def train_stage(params: EncoderParams, dataset: Dataset, config: TrainConfig, stage: int,
                heldout: Dataset | None = None) -> tuple[EncoderParams, TrainLog]:
    """Run ``epochs_stage{stage}`` epochs over ``dataset``; returns updated copy of params."""
    epochs = config.epochs_stage1 if stage == 1 else config.epochs_stage2
    params = params.copy()
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    out = TrainLog()
    for epoch in range(epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng([config.seed, stage, epoch])
        order = rng.permutation(len(dataset.pages))
        total, count = 0.0, 0
        for pi in order:
            page = dataset.pages[pi]
            if all(c.train_label for c in page.candidates):
                continue
            for pos in _instances(page):
                negs = sample_negatives(page, config.negatives, config.negative_strategy, rng)
                loss, grads = train_instance(params, page, pos, negs, config)
                opt.step(params, grads)
                total += loss
                count += 1
        margin, ndcg = _evaluate(params, heldout)
        rec = EpochRecord(stage, epoch, total / count if count else 0.0, count, margin, ndcg,
                          time.perf_counter() - t0)
        log.info("stage %d epoch %d: loss %.4f over %d instances, margin %s, ndcg %s",
                 stage, epoch, rec.mean_loss, count, margin, ndcg)
        out.records.append(rec)
    return params, out


def apply_label_noise(dataset: Dataset, config: TrainConfig, stage: int) -> Dataset:
    if config.label_noise == 0.0:
        return dataset
    return flip_labels(dataset, config.label_noise, np.random.default_rng([config.seed, stage, 7919]))


def two_stage(params: EncoderParams, ds_stage1: Dataset | None, ds_stage2: Dataset | None,
              config: TrainConfig, heldout: Dataset | None = None) -> tuple[EncoderParams, TrainLog]:
    """Stage 1 then stage 2, each with a fresh optimizer.

    ``config.label_noise`` is applied here, to the training sets only.
    """
    full = TrainLog()
    if ds_stage1 is not None:
        ds_stage1 = apply_label_noise(ds_stage1, config, 1)
    if ds_stage2 is not None:
        ds_stage2 = apply_label_noise(ds_stage2, config, 2)
    if ds_stage1 is not None and config.epochs_stage1:
        params, lg = train_stage(params, ds_stage1, config, 1, heldout)
        full.extend(lg)
    if ds_stage2 is not None and config.epochs_stage2:
        params, lg = train_stage(params, ds_stage2, config, 2, heldout)
        full.extend(lg)
    return params, full


ABLATION_KINDS = {
    "noise": "label_noise",
    "negdensity": "negatives",
    "datascale": "data_fraction",
}


def _subset(ds: Dataset, fraction: float) -> Dataset:
    n = max(1, int(round(len(ds.pages) * fraction)))
    return Dataset(ds.pages[:n], {**ds.meta, "fraction": fraction})


def evaluate_critic(params: EncoderParams, heldout: Dataset, loss_kind: str, tau: float,
                    sim: SimConfig) -> dict:
    """Held-out metrics plus ranking-mode TTS success for one trained encoder."""
    scores = {p.page_id: score_page(params, p) for p in heldout.pages}
    rep = aggregate_report(heldout, scores)
    critic = Critic.from_params(params, binary=(loss_kind == "bce"), tau=tau)
    sr = run_simulation(heldout, critic, sim).success_rate
    return {"margin": rep.margin, "sr": sr, "ndcg_all": rep.ndcg_at[ALL],
            "ppa_sub_dis": rep.ppa["sub-dis"], "report": rep}


def ablate(kind: str, values: Sequence, base: TrainConfig, init: EncoderParams,
           ds_stage1: Dataset, ds_stage2: Dataset, heldout: Dataset,
           loss_kinds: Sequence[str] = ("infonce", "bce"),
           sim: SimConfig | None = None) -> list[dict]:
    """One train + eval per (loss, grid value), all from the same initial params and seed."""
    if kind not in ABLATION_KINDS:
        raise ValueError(f"ablation kind must be one of {sorted(ABLATION_KINDS)}")
    if not values:
        raise ValueError("empty ablation grid")
    sim = sim or SimConfig(seed=base.seed)
    rows = []
    for loss_kind in loss_kinds:
        for v in values:
            cfg = replace(base, loss_kind=loss_kind)
            a, b = ds_stage1, ds_stage2
            if kind == "noise":
                cfg = replace(cfg, label_noise=float(v))
            elif kind == "negdensity":
                cfg = replace(cfg, negatives=int(v))
            else:
                a, b = _subset(a, float(v)), _subset(b, float(v))
            params, _ = two_stage(init, a, b, cfg)
            ev = evaluate_critic(params, heldout, loss_kind, cfg.tau, sim)
            rows.append({"loss": loss_kind, ABLATION_KINDS[kind]: v, "margin": ev["margin"],
                         "sr": ev["sr"], "ndcg_all": ev["ndcg_all"], "ppa_sub_dis": ev["ppa_sub_dis"]})
            log.info("ablate %s=%s %s: %s", kind, v, loss_kind, rows[-1])
    return rows
