"""Seeded synthetic affordance world.

Each page has a latent intent direction ``z`` on the unit sphere. Candidates
are rotations of ``z`` by an angle drawn from their level's band, so the true
angle is a brute-force oracle for the four-level label:

    optimal     [0, optimal_max]
    suboptimal  (optimal_max, suboptimal_max]
    distractor  (suboptimal_max, distractor_max]
    unrelated   (distractor_max, pi/2]

Latents are mapped to observable features by a fixed random mixing matrix
(optionally followed by tanh) plus Gaussian noise. The mixing matrix depends
only on ``world_seed``, so train, stage-2 and held-out sets generated under
different sampling seeds live in the same world.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .core import Candidate, Dataset, FunctionalLevel, Page, classify_level

LEVELS_DESC = (FunctionalLevel.OPTIMAL, FunctionalLevel.SUBOPTIMAL,
               FunctionalLevel.DISTRACTOR, FunctionalLevel.UNRELATED)

# per-level counts 1612 / 652 / 2871 / 13057 of 18192; the rounded percentages
# (8.9, 3.6, 15.8, 71.8) sum to 100.1 and would break the sum-to-one check
DEFAULT_MIX = (1612 / 18192, 652 / 18192, 2871 / 18192, 13057 / 18192)
# negatives only, over (suboptimal, distractor, unrelated)
STAGE_TWO_NEGATIVE_MIX = (0.30, 0.60, 0.10)


@dataclass(frozen=True)
class WorldConfig:
    latent_dim: int = 16
    feature_dim: int = 32
    optimal_max: float = 0.15
    suboptimal_max: float = 0.45
    distractor_max: float = 0.90
    observation_noise: float = 0.05
    level_mix: tuple[float, float, float, float] = DEFAULT_MIX
    candidates_per_page: int = 30
    nonlinear: bool = True
    world_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 2 or self.feature_dim < self.latent_dim:
            raise ValueError("need latent_dim >= 2 and feature_dim >= latent_dim")
        if not 0 < self.optimal_max < self.suboptimal_max < self.distractor_max < math.pi / 2:
            raise ValueError("angle bands must satisfy 0 < opt < sub < dis < pi/2")
        if self.observation_noise < 0:
            raise ValueError("observation_noise must be >= 0")
        if len(self.level_mix) != 4 or any(p < 0 for p in self.level_mix):
            raise ValueError("level_mix needs four nonnegative proportions")
        if abs(sum(self.level_mix) - 1.0) > 1e-9:
            raise ValueError(f"level_mix must sum to 1, got {sum(self.level_mix)}")
        if self.candidates_per_page < 1:
            raise ValueError("candidates_per_page must be >= 1")

    def band(self, level: FunctionalLevel) -> tuple[float, float]:
        edges = {
            FunctionalLevel.OPTIMAL: (0.0, self.optimal_max),
            FunctionalLevel.SUBOPTIMAL: (self.optimal_max, self.suboptimal_max),
            FunctionalLevel.DISTRACTOR: (self.suboptimal_max, self.distractor_max),
            FunctionalLevel.UNRELATED: (self.distractor_max, math.pi / 2),
        }
        return edges[level]

    def level_of_angle(self, angle: float) -> FunctionalLevel:
        return classify_level(
            advances_task=angle <= self.suboptimal_max,
            efficient=angle <= self.optimal_max,
            related=angle <= self.distractor_max,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_mix"] = list(self.level_mix)
        return d


@dataclass(frozen=True)
class MixingTransform:
    matrix: np.ndarray
    nonlinear: bool = True

    def apply(self, latent: np.ndarray) -> np.ndarray:
        y = latent @ self.matrix.T
        return np.tanh(y) if self.nonlinear else y


def make_world(config: WorldConfig) -> MixingTransform:
    """Full-column-rank random mixing, scaled so a unit latent maps to O(1) features."""
    rng = np.random.default_rng(config.world_seed)
    m = rng.standard_normal((config.feature_dim, config.latent_dim))
    q, r = np.linalg.qr(m)
    # orthonormal columns times a well-conditioned diagonal keeps full rank
    scale = rng.uniform(1.0, 2.0, size=config.latent_dim)
    matrix = q * scale[None, :] * math.sqrt(config.feature_dim / config.latent_dim)
    return MixingTransform(matrix=matrix, nonlinear=config.nonlinear)


def identity_world(config: WorldConfig) -> MixingTransform:
    """Linear embedding of the latent into the first coordinates of the features."""
    m = np.zeros((config.feature_dim, config.latent_dim))
    m[: config.latent_dim, : config.latent_dim] = np.eye(config.latent_dim)
    return MixingTransform(matrix=m, nonlinear=False)


def sample_unit_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim < 2:
        raise ValueError("dim must be >= 2")
    while True:
        v = rng.standard_normal(dim)
        n = np.linalg.norm(v)
        if n > 1e-12:
            return v / n


def rotate_from(base: np.ndarray, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Unit vector at exactly ``angle`` from ``base``, in a random orthogonal direction."""
    if not 0.0 <= angle <= math.pi:
        raise ValueError(f"angle must lie in [0, pi], got {angle}")
    base = np.asarray(base, dtype=np.float64)
    if angle == 0.0:
        return base.copy()
    while True:
        w = rng.standard_normal(base.shape[0])
        w -= (w @ base) * base
        n = np.linalg.norm(w)
        if n > 1e-12:
            break
    w /= n
    v = math.cos(angle) * base + math.sin(angle) * w
    return v / np.linalg.norm(v)


def _draw_levels(mix, n: int, rng: np.random.Generator) -> list[FunctionalLevel]:
    idx = rng.choice(4, size=n, p=np.asarray(mix, dtype=np.float64))
    levels = [LEVELS_DESC[i] for i in idx]
    if FunctionalLevel.OPTIMAL not in levels:
        levels[int(rng.integers(n))] = FunctionalLevel.OPTIMAL
    return levels


def _draw_angle(config: WorldConfig, level: FunctionalLevel, rng: np.random.Generator) -> float:
    lo, hi = config.band(level)
    # draw from the half-open (lo, hi]; the optimal band includes 0
    a = hi - rng.uniform(0.0, hi - lo)
    return max(a, 0.0)


def _stage_mix(config: WorldConfig, stage: int) -> tuple[float, ...]:
    if stage == 1:
        return config.level_mix
    if stage == 2:
        # keep the configured optimal share; negatives follow the stage-two split
        p_opt = config.level_mix[0]
        sub, dis, unr = STAGE_TWO_NEGATIVE_MIX
        return (p_opt, (1 - p_opt) * sub, (1 - p_opt) * dis, (1 - p_opt) * unr)
    raise ValueError(f"stage must be 1 or 2, got {stage}")


def generate_page(config: WorldConfig, world: MixingTransform, rng: np.random.Generator,
                  page_id: str = "p0", stage: int = 1, return_latents: bool = False):
    """Draw one page. With ``return_latents`` also return (z, candidate latents, angles)."""
    z = sample_unit_vector(config.latent_dim, rng)
    n = config.candidates_per_page
    levels = _draw_levels(_stage_mix(config, stage), n, rng)
    angles = [_draw_angle(config, lv, rng) for lv in levels]
    latents = np.array([rotate_from(z, a, rng) for a in angles])
    sigma = config.observation_noise
    feats = world.apply(latents) + sigma * rng.standard_normal((n, config.feature_dim))
    instr = world.apply(z[None, :])[0] + sigma * rng.standard_normal(config.feature_dim)
    optimal_idx = [i for i, lv in enumerate(levels) if lv == FunctionalLevel.OPTIMAL]
    gt = optimal_idx[int(rng.integers(len(optimal_idx)))]
    width = max(2, len(str(n - 1)))
    cands = tuple(
        Candidate(
            action_id=f"a{i:0{width}d}",
            features=tuple(float(x) for x in feats[i]),
            level=config.level_of_angle(angles[i]),
            is_ground_truth=(i == gt),
            train_label=(i == gt),
        )
        for i in range(n)
    )
    page = Page(page_id, tuple(float(x) for x in instr), cands)
    if return_latents:
        return page, z, latents, np.array(angles)
    return page


def generate_dataset(config: WorldConfig, n_pages: int, stage: int = 1,
                     world: MixingTransform | None = None) -> Dataset:
    """Pages seeded per (seed, stage, index), so any subset regenerates identically."""
    if n_pages < 1:
        raise ValueError("n_pages must be >= 1")
    world = world or make_world(config)
    pages = []
    for i in range(n_pages):
        rng = np.random.default_rng([config.seed, stage, i])
        pages.append(generate_page(config, world, rng, page_id=f"s{stage}-{config.seed}-{i:05d}",
                                   stage=stage))
    meta = {"generator": "synthworld", "stage": stage, "n_pages": n_pages, "config": config.to_dict()}
    return Dataset(tuple(pages), meta)


def flip_labels(dataset: Dataset, p: float, rng: np.random.Generator) -> Dataset:
    """Invert each candidate's train_label independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"flip rate must lie in [0, 1], got {p}")
    pages = []
    for page in dataset.pages:
        flips = rng.random(len(page.candidates)) < p
        cands = tuple(replace(c, train_label=(not c.train_label) if f else c.train_label)
                      for c, f in zip(page.candidates, flips))
        pages.append(replace(page, candidates=cands))
    meta = dict(dataset.meta)
    meta["label_flip_rate"] = p
    return Dataset(tuple(pages), meta)
