"""Offline test-time-scaling simulator.

Per page, a synthetic policy proposes N candidates, then a selector picks
one: critic argmax (``ranking``), sequential accept/reject over the policy's
own order (``rejection``), the policy's top choice (``policy_first``), or a
uniform pick (``random``).

The policy's utility is the true level plus Gaussian noise; sampling without
replacement uses the Gumbel top-N trick, which is equivalent to drawing from
``softmax(utility / temperature)`` without replacement.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Candidate, Dataset, FunctionalLevel, Page
from .encoder import EncoderParams, score_page
from .losses import DEFAULT_TAU, sigmoid

SELECTIONS = ("ranking", "rejection", "policy_first", "random")
SUCCESS_RULES = ("strict", "advance")


@dataclass(frozen=True)
class SimConfig:
    n_rollouts: int = 8
    selection: str = "ranking"
    policy_noise: float = 1.0
    policy_temperature: float = 1.0
    rejection_threshold: float | None = None
    max_rejection_turns: int = 8
    success_rule: str = "strict"
    deterministic_policy: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_rollouts < 1 or self.max_rejection_turns < 1:
            raise ValueError("n_rollouts and max_rejection_turns must be >= 1")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")
        if self.success_rule not in SUCCESS_RULES:
            raise ValueError(f"success_rule must be one of {SUCCESS_RULES}")
        if self.policy_noise < 0 or not self.policy_temperature > 0:
            raise ValueError("policy_noise must be >= 0 and policy_temperature > 0")

    def to_dict(self) -> dict:
        return asdict(self)


class Critic:
    """Scores every candidate on a page.

    ``binary`` critics report ``sigmoid(cos / tau)`` (a probability of the
    action being correct) and accept at 0.5; metric critics report the cosine
    and accept at 0.0.
    """

    def __init__(self, scorer: Callable[[Page], dict[str, float]], binary: bool = False,
                 name: str = "critic"):
        self._scorer = scorer
        self.binary = binary
        self.name = name

    def __call__(self, page: Page) -> dict[str, float]:
        return self._scorer(page)

    @property
    def default_threshold(self) -> float:
        return 0.5 if self.binary else 0.0

    @classmethod
    def from_params(cls, params: EncoderParams, binary: bool = False,
                    tau: float = DEFAULT_TAU) -> "Critic":
        if not binary:
            return cls(lambda page: score_page(params, page), False, "metric")

        def scorer(page: Page) -> dict[str, float]:
            return {a: sigmoid(s / tau) for a, s in score_page(params, page).items()}

        return cls(scorer, True, "binary")

    @classmethod
    def oracle(cls) -> "Critic":
        return cls(lambda page: {c.action_id: float(int(c.level)) for c in page.candidates},
                   False, "oracle")


@dataclass
class SimReport:
    success_rate: float
    selection_histogram: dict[str, int]
    fallback_count: int
    pages: int
    rows: list[dict] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "success_rate": self.success_rate,
            "selection_histogram": self.selection_histogram,
            "fallback_count": self.fallback_count,
            "pages": self.pages,
        }


def policy_sample(page: Page, n: int, noise: float, rng: np.random.Generator,
                  temperature: float = 1.0, deterministic: bool = False) -> list[Candidate]:
    """Top-``n`` candidates by perturbed utility, in the policy's preference order."""
    cands = page.candidates
    util = page.levels.astype(np.float64)
    if noise > 0:
        util = util + noise * rng.standard_normal(len(cands))
    util = util / temperature
    if not deterministic:
        util = util + rng.gumbel(size=len(cands))
    order = sorted(range(len(cands)), key=lambda i: (-util[i], cands[i].action_id))
    return [cands[i] for i in order[:n]]


def select_ranking(scores: Mapping[str, float], candidates: Sequence[Candidate]) -> Candidate:
    if not candidates:
        raise ValueError("no candidates to select from")
    return min(candidates, key=lambda c: (-scores[c.action_id], c.action_id))


def select_rejection(scores: Mapping[str, float], candidates: Sequence[Candidate],
                     threshold: float, max_turns: int) -> tuple[Candidate, bool]:
    """First candidate (in policy order) scoring at least ``threshold``.

    Returns ``(candidate, fallback)``; when every examined candidate is rejected
    the policy's first choice comes back with ``fallback=True``.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    for c in candidates[:max_turns]:
        if scores[c.action_id] >= threshold:
            return c, False
    return candidates[0], True


def is_success(c: Candidate, rule: str) -> bool:
    if rule == "strict":
        return c.level == FunctionalLevel.OPTIMAL
    return c.level >= FunctionalLevel.SUBOPTIMAL


def page_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def run_simulation(dataset: Dataset, critic: Critic | None, config: SimConfig) -> SimReport:
    if not dataset.pages:
        raise ValueError("empty dataset")
    if config.selection in ("ranking", "rejection") and critic is None:
        raise ValueError(f"selection {config.selection!r} needs a critic")
    threshold = config.rejection_threshold
    if threshold is None and critic is not None:
        threshold = critic.default_threshold
    hist = {lv.short: 0 for lv in sorted(FunctionalLevel, reverse=True)}
    wins = fallbacks = 0
    rows = []
    for i, page in enumerate(dataset.pages):
        rng = page_rng(config.seed, i)
        sampled = policy_sample(page, config.n_rollouts, config.policy_noise, rng,
                                config.policy_temperature, config.deterministic_policy)
        fallback = False
        if config.selection == "ranking":
            chosen = select_ranking(critic(page), sampled)
        elif config.selection == "rejection":
            chosen, fallback = select_rejection(critic(page), sampled, threshold,
                                                config.max_rejection_turns)
        elif config.selection == "policy_first":
            chosen = sampled[0]
        else:
            chosen = sampled[int(rng.integers(len(sampled)))]
        ok = is_success(chosen, config.success_rule)
        wins += ok
        fallbacks += fallback
        hist[chosen.level.short] += 1
        rows.append({"page_id": page.page_id, "chosen": chosen.action_id,
                     "level": int(chosen.level), "success": int(ok), "fallback": int(fallback),
                     "sampled_optimal": sum(c.level == FunctionalLevel.OPTIMAL for c in sampled)})
    n = len(dataset.pages)
    return SimReport(wins / n, hist, fallbacks, n, rows)
