"""End-to-end reproduction harness: pinned data, training runs, evaluation,
simulation, ablations, and one pass/fail verdict per acceptance criterion.

``run_repro`` is what the ``repro`` command and the acceptance tests call.
Everything it writes under ``out_dir`` is deterministic except
``timing.json``.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .core import Candidate, Dataset, FunctionalLevel, Page, save_dataset
from .encoder import EncoderConfig, EncoderParams, init_params, save_checkpoint, score_page
from .gradcheck import CheckResult, run_all
from .metrics import ALL, TIER_PAIRS, aggregate_report, ndcg_at_k, ppa_adjacent, ppa_pair
from .synthworld import WorldConfig, generate_dataset, make_world
from .trainer import TrainConfig, ablate, two_stage
from .tts import Critic, SimConfig, run_simulation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReproConfig:
    world: WorldConfig = WorldConfig()
    stage1_pages: int = 2000
    stage2_pages: int = 2000
    heldout_pages: int = 200
    stage1_seed: int = 1
    stage2_seed: int = 2
    heldout_seed: int = 3
    encoder_hidden: int = 64
    encoder_embed: int = 16
    encoder_layers: int = 1
    init_seed: int = 0
    train: TrainConfig = TrainConfig()
    sim: SimConfig = SimConfig()
    noise_rate: float = 0.2
    k_grid: tuple[int, ...] = (2, 16)
    data_fractions: tuple[float, ...] = (0.25, 1.0)
    gradcheck_fast: bool = False

    def to_dict(self) -> dict:
        return {
            "world": self.world.to_dict(),
            "stage1_pages": self.stage1_pages, "stage2_pages": self.stage2_pages,
            "heldout_pages": self.heldout_pages,
            "seeds": {"stage1": self.stage1_seed, "stage2": self.stage2_seed,
                      "heldout": self.heldout_seed, "init": self.init_seed,
                      "train": self.train.seed, "sim": self.sim.seed},
            "encoder": {"hidden_dim": self.encoder_hidden, "embed_dim": self.encoder_embed,
                        "hidden_layers": self.encoder_layers},
            "train": self.train.to_dict(), "sim": self.sim.to_dict(),
            "noise_rate": self.noise_rate, "k_grid": list(self.k_grid),
            "data_fractions": list(self.data_fractions),
            "gradcheck_fast": self.gradcheck_fast,
        }


@dataclass
class Criterion:
    id: int
    name: str
    passed: bool
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.values.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.id:>2}. {self.name}: {vals}"

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "passed": self.passed, "values": self.values}


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


# ---------------------------------------------------------------------------
# metric brute-force references

def _brute_dcg(levels: Sequence[int]) -> float:
    total = 0.0
    for i in range(len(levels)):
        total += (2.0 ** levels[i] - 1.0) / np.log2(i + 2.0)
    return float(total)


def brute_ideal_dcg(levels: Sequence[int], k: int) -> float:
    """Ideal DCG at cutoff ``k`` found by trying every ordering."""
    return max(_brute_dcg([levels[i] for i in perm[:k]])
               for perm in itertools.permutations(range(len(levels))))


def brute_ndcg(levels: Sequence[int], scores: Sequence[float], ids: Sequence[str], k: int,
               ideal: float | None = None) -> float | None:
    n = len(levels)
    order = sorted(range(n), key=lambda i: (-scores[i], ids[i]))
    if ideal is None:
        ideal = brute_ideal_dcg(levels, k)
    if ideal == 0.0:
        return None
    return _brute_dcg([levels[i] for i in order[:k]]) / ideal


def brute_ppa(levels: Sequence[int], scores: Sequence[float], upper: int) -> float | None:
    total = 0.0
    n = 0
    for i in range(len(levels)):
        for j in range(len(levels)):
            if levels[i] == upper and levels[j] == upper - 1:
                n += 1
                if scores[i] > scores[j]:
                    total += 1.0
                elif scores[i] == scores[j]:
                    total += 0.5
    return total / n if n else None


def check_metric_oracles(seed: int = 11, level_draws: int = 12) -> Criterion:
    """Exhaustive score permutations on small pages against brute-force references."""
    rng = np.random.default_rng(seed)
    mismatches = checked = 0
    perfect_ok = constant_ok = True
    for n in range(1, 7):
        for _ in range(level_draws):
            levels = [int(x) for x in rng.integers(0, 4, size=n)]
            ids = [f"a{i}" for i in range(n)]
            page = Page("p", (0.0,), tuple(Candidate(ids[i], (0.0,), FunctionalLevel(levels[i]))
                                           for i in range(n)))
            ds = Dataset((page,))
            base_scores = [float(x) for x in range(n)]
            # one tied variant per page exercises the tie-break and tie credit
            variants = list(itertools.permutations(base_scores))
            if n >= 2:
                variants.append(tuple([1.0, 1.0] + base_scores[2:]))
            ideals = {k: brute_ideal_dcg(levels, k) for k in (1, 3, n)}
            for perm in variants:
                sc = dict(zip(ids, perm))
                for k in (1, 3, n):
                    checked += 1
                    mismatches += ndcg_at_k(page, sc, k) != brute_ndcg(levels, perm, ids, k, ideals[k])
                for name, (hi, lo) in TIER_PAIRS.items():
                    checked += 1
                    mismatches += ppa_adjacent(ds, {"p": sc}, hi, lo) != brute_ppa(levels, perm, int(hi))
            ideal = {ids[i]: float(levels[i]) + 1e-3 * (n - i) for i in range(n)}
            v = ndcg_at_k(page, ideal, ALL)
            perfect_ok &= v is None or v == 1.0
            if len(set(levels)) > 1:
                su = [0.3] * levels.count(max(levels))
                constant_ok &= ppa_pair(su, [0.3] * (n - len(su))) == 0.5
    passed = mismatches == 0 and perfect_ok and constant_ok
    return Criterion(4, "metric oracle equivalence", passed,
                     {"comparisons": checked, "mismatches": mismatches,
                      "perfect_ranking_ndcg_1": perfect_ok, "constant_scores_ppa_half": constant_ok})


# ---------------------------------------------------------------------------
# training runs

@dataclass
class ReproData:
    stage1: Dataset
    stage2: Dataset
    heldout: Dataset


def build_data(cfg: ReproConfig) -> ReproData:
    world = make_world(cfg.world)
    return ReproData(
        stage1=generate_dataset(replace(cfg.world, seed=cfg.stage1_seed), cfg.stage1_pages, 1, world),
        stage2=generate_dataset(replace(cfg.world, seed=cfg.stage2_seed), cfg.stage2_pages, 2, world),
        heldout=generate_dataset(replace(cfg.world, seed=cfg.heldout_seed), cfg.heldout_pages, 1, world),
    )


def initial_params(cfg: ReproConfig) -> EncoderParams:
    ec = EncoderConfig(cfg.world.feature_dim, cfg.encoder_hidden, cfg.encoder_embed, cfg.encoder_layers)
    return init_params(ec, cfg.init_seed)


def _eval(params: EncoderParams, heldout: Dataset) -> dict:
    scores = {p.page_id: score_page(params, p) for p in heldout.pages}
    return aggregate_report(heldout, scores).to_dict()


def _ratio(num, den):
    return num / den if den not in (None, 0.0) and num is not None else None


def run_repro(cfg: ReproConfig = ReproConfig(), out_dir: str | Path | None = None,
              argv: Sequence[str] = ()) -> dict:
    t_start = time.perf_counter()
    timing: dict[str, float] = {}
    criteria: list[Criterion] = []

    # analytic checks
    t0 = time.perf_counter()
    checks = run_all(fast=cfg.gradcheck_fast)
    timing["gradcheck"] = time.perf_counter() - t0
    by_name = {c.name: c for c in checks}

    def pick(*names: str) -> list[CheckResult]:
        return [by_name[n] for n in names]

    def crit_from(cid: int, name: str, results: list[CheckResult]) -> Criterion:
        return Criterion(cid, name, all(r.passed for r in results),
                         {r.name: r.worst for r in results})

    criteria.append(crit_from(1, "infonce gradient identity", pick(
        "infonce grad_neg == P(neg)/tau", "infonce grad vs finite differences (relative)",
        "infonce gradient components sum to zero")))
    criteria.append(crit_from(2, "bce gradient and independence", pick(
        "bce grad == sigmoid(s) - y", "bce per-candidate gradient independent of other candidates")))
    criteria.append(crit_from(3, "listwise equals infonce", pick(
        "listwise == infonce (loss)", "listwise == infonce (gradient)")))
    criteria.append(check_metric_oracles())
    criteria.append(crit_from(5, "end-to-end gradient check",
                              [c for c in checks if c.name.startswith("end-to-end")]))

    # data + training
    t0 = time.perf_counter()
    data = build_data(cfg)
    p0 = initial_params(cfg)
    timing["data"] = time.perf_counter() - t0
    base = cfg.train
    cache: dict = {}

    def train(tag: str, c: TrainConfig, s1=data.stage1, s2=data.stage2) -> EncoderParams:
        key = (c, len(s1.pages) if s1 else 0, len(s2.pages) if s2 else 0)
        if key not in cache:
            t = time.perf_counter()
            cache[key] = two_stage(p0, s1, s2, c)[0]
            timing[f"train:{tag}"] = time.perf_counter() - t
            log.info("trained %s in %.1fs", tag, timing[f"train:{tag}"])
        return cache[key]

    info = train("infonce", replace(base, loss_kind="infonce"))
    bce = train("bce", replace(base, loss_kind="bce"))
    runs = {"infonce": _eval(info, data.heldout), "bce": _eval(bce, data.heldout)}

    # 6: hierarchy recovery
    ri, rb = runs["infonce"], runs["bce"]
    means = ri["level_means"]
    monotone = means["opt"] > means["sub"] > means["dis"] > means["unr"]
    d_ppa = ri["ppa"]["sub-dis"] - rb["ppa"]["sub-dis"]
    d_ndcg = ri["ndcg_at"][ALL] - rb["ndcg_at"][ALL]
    criteria.append(Criterion(6, "hierarchy recovery", bool(
        monotone and ri["ppa"]["sub-dis"] >= 0.65 and d_ppa >= 0.05 and d_ndcg >= 0.03), {
        "infonce_level_means": means, "infonce_ppa_sub_dis": ri["ppa"]["sub-dis"],
        "bce_ppa_sub_dis": rb["ppa"]["sub-dis"], "ppa_gap": d_ppa,
        "infonce_ndcg_all": ri["ndcg_at"][ALL], "bce_ndcg_all": rb["ndcg_at"][ALL], "ndcg_gap": d_ndcg}))

    # 7: label noise
    noise_rows = []
    for kind in ("infonce", "bce"):
        for rate in (0.0, cfg.noise_rate):
            c = replace(base, loss_kind=kind, label_noise=rate)
            r = _eval(train(f"{kind}-noise{rate}", c), data.heldout)
            noise_rows.append({"loss": kind, "label_noise": rate, "margin": r["margin"],
                               "ndcg_all": r["ndcg_at"][ALL], "ppa_sub_dis": r["ppa"]["sub-dis"]})
            runs[f"{kind}-noise{rate}"] = r
    margin = {(r["loss"], r["label_noise"]): r["margin"] for r in noise_rows}
    ret_i = _ratio(margin[("infonce", cfg.noise_rate)], margin[("infonce", 0.0)])
    ret_b = _ratio(margin[("bce", cfg.noise_rate)], margin[("bce", 0.0)])
    criteria.append(Criterion(7, "noise robustness direction",
                              ret_i is not None and ret_b is not None and ret_i > ret_b,
                              {"infonce_retention": ret_i, "bce_retention": ret_b}))

    # 8: negative density
    k_rows = []
    for kind in ("infonce", "bce"):
        for k in cfg.k_grid:
            r = _eval(train(f"{kind}-K{k}", replace(base, loss_kind=kind, negatives=k)), data.heldout)
            k_rows.append({"loss": kind, "negatives": k, "margin": r["margin"],
                           "ndcg_all": r["ndcg_at"][ALL], "ppa_sub_dis": r["ppa"]["sub-dis"]})
    km = {(r["loss"], r["negatives"]): r["margin"] for r in k_rows}
    k_lo, k_hi = min(cfg.k_grid), max(cfg.k_grid)
    criteria.append(Criterion(8, "negative-density direction", bool(
        km[("infonce", k_hi)] >= km[("infonce", k_lo)] - 0.02 and km[("bce", k_hi)] < km[("bce", k_lo)]),
        {f"infonce_margin_K{k_lo}": km[("infonce", k_lo)], f"infonce_margin_K{k_hi}": km[("infonce", k_hi)],
         f"bce_margin_K{k_lo}": km[("bce", k_lo)], f"bce_margin_K{k_hi}": km[("bce", k_hi)]}))

    # 9: test-time scaling
    t0 = time.perf_counter()
    sim = cfg.sim
    info_critic = Critic.from_params(info, binary=False, tau=base.tau)
    bce_critic = Critic.from_params(bce, binary=True, tau=base.tau)
    sims = {
        "infonce-ranking": run_simulation(data.heldout, info_critic, replace(sim, selection="ranking")),
        "policy-first": run_simulation(data.heldout, None, replace(sim, selection="policy_first")),
        "bce-rejection": run_simulation(data.heldout, bce_critic, replace(sim, selection="rejection")),
        "bce-ranking": run_simulation(data.heldout, bce_critic, replace(sim, selection="ranking")),
        "oracle-ranking": run_simulation(data.heldout, Critic.oracle(), replace(sim, selection="ranking")),
        "random": run_simulation(data.heldout, None, replace(sim, selection="random")),
    }
    timing["simulate"] = time.perf_counter() - t0
    sr = {k: v.success_rate for k, v in sims.items()}
    gain = sr["infonce-ranking"] - sr["policy-first"]
    criteria.append(Criterion(9, "TTS ranking gain", bool(
        gain >= 0.10 and sr["bce-rejection"] < sr["infonce-ranking"]
        and sims["bce-rejection"].fallback_count > 0),
        {"infonce_ranking_sr": sr["infonce-ranking"], "policy_first_sr": sr["policy-first"],
         "gain": gain, "bce_rejection_sr": sr["bce-rejection"],
         "bce_rejection_fallbacks": sims["bce-rejection"].fallback_count}))

    # 10: curriculum ablation
    s2_only = _eval(train("infonce-stage2-only", replace(base, epochs_stage1=0)), data.heldout)
    s1_only = _eval(train("infonce-stage1-only", replace(base, epochs_stage2=0)), data.heldout)
    runs["infonce-stage2-only"], runs["infonce-stage1-only"] = s2_only, s1_only
    criteria.append(Criterion(10, "curriculum ablation direction", bool(
        ri["margin"] > s2_only["margin"] and ri["ppa"]["sub-dis"] > s1_only["ppa"]["sub-dis"]),
        {"full_margin": ri["margin"], "stage2_only_margin": s2_only["margin"],
         "full_ppa_sub_dis": ri["ppa"]["sub-dis"], "stage1_only_ppa_sub_dis": s1_only["ppa"]["sub-dis"]}))

    # informational data-scale ablation through the generic harness
    t0 = time.perf_counter()
    scale_rows = ablate("datascale", list(cfg.data_fractions), base, p0, data.stage1, data.stage2,
                        data.heldout, sim=replace(sim, selection="ranking"))
    timing["ablate-datascale"] = time.perf_counter() - t0

    report = {
        "manifest": {"command": "repro", "argv": list(argv), "tool_version": __version__,
                     "config": cfg.to_dict()},
        "criteria": [c.to_dict() for c in criteria],
        "gradcheck": [{"name": c.name, "worst": c.worst, "tolerance": c.tolerance,
                       "cases": c.cases, "passed": c.passed} for c in checks],
        "runs": runs,
        "simulations": {k: v.to_dict() for k, v in sims.items()},
        "ablations": {"noise": noise_rows, "negdensity": k_rows, "datascale": scale_rows},
    }
    timing["total"] = time.perf_counter() - t_start
    if out_dir is not None:
        write_outputs(Path(out_dir), report, timing, data, {"infonce": info, "bce": bce}, base)
    report["_criteria"] = criteria
    report["_timing"] = timing
    return report


def write_outputs(out: Path, report: dict, timing: dict, data: ReproData,
                  checkpoints: dict[str, EncoderParams], base: TrainConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    save_dataset(data.stage1, out / "stage1.jsonl")
    save_dataset(data.stage2, out / "stage2.jsonl")
    save_dataset(data.heldout, out / "heldout.jsonl")
    for name, params in checkpoints.items():
        save_checkpoint(params, out / f"critic-{name}.json", seed=base.seed,
                        meta={"train": replace(base, loss_kind=name).to_dict()})
    for name, rows in report["ablations"].items():
        write_csv(out / f"ablate-{name}.csv", rows)


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
