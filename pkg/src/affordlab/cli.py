"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 data, 4 numeric, 5 I/O.
Every JSON report carries a ``manifest`` block (command, flags, seeds,
paths, tool version). Wall-clock time goes to a ``.timing.json`` sidecar so
that reports themselves stay byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .core import (DataError, NumericError, ScoreRecord, load_dataset, load_scores, save_dataset,
                   save_scores, scores_by_page)
from .encoder import EncoderConfig, init_params, load_checkpoint, save_checkpoint, score_page
from .experiments import ReproConfig, run_repro, write_csv
from .metrics import ALL, MARGIN_PREDICATES, aggregate_report, page_rows
from .synthworld import DEFAULT_MIX, WorldConfig, generate_dataset, make_world
from .trainer import LOSS_KINDS, NEGATIVE_STRATEGIES, TrainConfig, ablate, two_stage
from .tts import SELECTIONS, SUCCESS_RULES, Critic, SimConfig, run_simulation

log = logging.getLogger("affordlab")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 2, 3, 4, 5


class UsageError(Exception):
    pass


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _k_list(text: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip().lower()
        if part == ALL:
            out.append(ALL)
        elif part.isdigit() and int(part) > 0:
            out.append(int(part))
        else:
            raise argparse.ArgumentTypeError(f"bad cutoff {part!r}; use positive integers or 'all'")
    return out


def manifest(args: argparse.Namespace) -> dict:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
             if k not in ("func",)}
    return {"command": args.command, "flags": flags, "tool_version": __version__}


def _write_report(doc: dict, out: Path | None, elapsed: float) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    out.write_text(text)
    Path(str(out) + ".timing.json").write_text(json.dumps({"wall_clock_s": elapsed}) + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> None:
    wc = WorldConfig(
        latent_dim=args.latent_dim, feature_dim=args.feature_dim,
        optimal_max=args.angles[0], suboptimal_max=args.angles[1], distractor_max=args.angles[2],
        observation_noise=args.noise, level_mix=args.mix, candidates_per_page=args.candidates,
        nonlinear=not args.linear, world_seed=args.world_seed, seed=args.seed,
    )
    ds = generate_dataset(wc, args.pages, args.stage, make_world(wc))
    ds = replace(ds, meta={**ds.meta, "manifest": manifest(args)})
    save_dataset(ds, args.out)
    log.info("wrote %d pages to %s", len(ds), args.out)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        loss_kind=args.loss, tau=args.tau, learning_rate=args.lr, epochs_stage1=args.epochs1,
        epochs_stage2=args.epochs2, negatives=args.negatives, negative_strategy=args.neg_strategy,
        label_noise=args.label_noise, seed=args.seed,
    )


def _load_training(args):
    s1 = load_dataset(args.stage1_data, training=False) if args.stage1_data else None
    s2 = load_dataset(args.stage2_data, training=False) if args.stage2_data else None
    if s1 is None and s2 is None:
        raise UsageError("need --stage1-data and/or --stage2-data")
    held = load_dataset(args.heldout_data) if getattr(args, "heldout_data", None) else None
    dim = (s1 or s2).feature_dim
    for ds in (s1, s2, held):
        if ds is not None and ds.feature_dim != dim:
            raise DataError("training and held-out datasets disagree on feature dimension")
    return s1, s2, held, dim


def cmd_train(args) -> None:
    cfg = _train_config(args)
    s1, s2, held, dim = _load_training(args)
    params = init_params(EncoderConfig(dim, args.hidden, args.embed, args.layers), args.init_seed)
    t0 = time.perf_counter()
    params, tlog = two_stage(params, s1, s2, cfg, held)
    log.info("trained in %.1fs", time.perf_counter() - t0)
    save_checkpoint(params, args.out_checkpoint, seed=args.init_seed,
                    meta={"train": cfg.to_dict(), "manifest": manifest(args)})
    if args.log_csv:
        write_csv(Path(args.log_csv), tlog.rows())


def _critic_scores(args, ds):
    if args.oracle:
        c = Critic.oracle()
        return {p.page_id: c(p) for p in ds.pages}
    params, _ = load_checkpoint(args.checkpoint)
    return {p.page_id: score_page(params, p) for p in ds.pages}


def cmd_score(args) -> None:
    if not args.oracle and not args.checkpoint:
        raise UsageError("score needs --checkpoint or --oracle")
    ds = load_dataset(args.data)
    scores = _critic_scores(args, ds)
    recs = [ScoreRecord(p.page_id, c.action_id, scores[p.page_id][c.action_id])
            for p in ds.pages for c in p.candidates]
    save_scores(recs, args.out)
    log.info("wrote %d score records to %s", len(recs), args.out)


def cmd_eval(args) -> None:
    t0 = time.perf_counter()
    ds = load_dataset(args.data)
    scores = scores_by_page(ds, load_scores(args.scores))
    rep = aggregate_report(ds, scores, k_list=args.k, correct=MARGIN_PREDICATES[args.margin_predicate])
    doc = {"manifest": manifest(args), "report": rep.to_dict()}
    if args.csv:
        write_csv(Path(args.csv), page_rows(ds, scores, args.k))
    _write_report(doc, args.out, time.perf_counter() - t0)


def cmd_simulate(args) -> None:
    t0 = time.perf_counter()
    ds = load_dataset(args.data)
    critic = None
    if args.oracle:
        critic = Critic.oracle()
    elif args.checkpoint:
        params, doc = load_checkpoint(args.checkpoint)
        train = doc["meta"].get("train", {})
        binary = args.binary if args.binary is not None else train.get("loss_kind") == "bce"
        critic = Critic.from_params(params, binary=binary, tau=train.get("tau", args.tau))
    sel = args.mode.replace("-", "_")
    if sel in ("ranking", "rejection") and critic is None:
        raise UsageError(f"--mode {args.mode} needs --checkpoint or --oracle")
    cfg = SimConfig(n_rollouts=args.n, selection=sel, policy_noise=args.policy_noise,
                    policy_temperature=args.policy_temperature, rejection_threshold=args.threshold,
                    max_rejection_turns=args.turns, success_rule=args.success_rule, seed=args.seed)
    rep = run_simulation(ds, critic, cfg)
    if args.csv:
        write_csv(Path(args.csv), rep.rows)
    _write_report({"manifest": manifest(args), "report": rep.to_dict(), "config": cfg.to_dict()},
                  args.out, time.perf_counter() - t0)


def _ablate(kind: str):
    def run(args) -> None:
        t0 = time.perf_counter()
        cfg = _train_config(args)
        s1, s2, held, dim = _load_training(args)
        if held is None:
            raise UsageError("ablation needs --heldout-data")
        init = init_params(EncoderConfig(dim, args.hidden, args.embed, args.layers), args.init_seed)
        rows = ablate(kind, args.values, cfg, init, s1, s2, held,
                      loss_kinds=args.losses.split(","), sim=SimConfig(seed=args.seed))
        if args.out_csv:
            write_csv(Path(args.out_csv), rows)
        _write_report({"manifest": manifest(args), "rows": rows}, args.out, time.perf_counter() - t0)
    return run


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all
    results = run_all(fast=args.fast)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_repro(args) -> int:
    argv = sys.argv[1:] if args.argv is None else args.argv
    report = run_repro(ReproConfig(gradcheck_fast=args.fast), args.out, argv=argv)
    for c in report["_criteria"]:
        print(c.line())
    log.info("repro finished in %.1fs", report["_timing"]["total"])
    return 0 if all(c.passed for c in report["_criteria"]) else 1


# ---------------------------------------------------------------------------
# parser

def _add_train_flags(p: argparse.ArgumentParser, with_data: bool = True) -> None:
    p.add_argument("--loss", choices=LOSS_KINDS, default="infonce")
    p.add_argument("--tau", type=float, default=0.02)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs1", type=int, default=1)
    p.add_argument("--epochs2", type=int, default=2)
    p.add_argument("--negatives", type=int, default=16, metavar="K")
    p.add_argument("--neg-strategy", choices=NEGATIVE_STRATEGIES, default="uniform")
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--embed", type=int, default=16)
    p.add_argument("--layers", type=int, default=1)
    if with_data:
        p.add_argument("--stage1-data", type=Path)
        p.add_argument("--stage2-data", type=Path)
        p.add_argument("--heldout-data", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affordlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic page file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--world-seed", type=int, default=0)
    p.add_argument("--pages", type=int, required=True)
    p.add_argument("--stage", type=int, choices=(1, 2), default=1)
    p.add_argument("--mix", type=lambda s: _floats(s, 4), default=DEFAULT_MIX,
                   help="opt,sub,dis,unr proportions")
    p.add_argument("--angles", type=lambda s: _floats(s, 3), default=(0.15, 0.45, 0.90),
                   help="optimal,suboptimal,distractor band edges in radians")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--candidates", type=int, default=30)
    p.add_argument("--linear", action="store_true", help="skip the tanh in the mixing transform")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="two-stage training of a critic")
    _add_train_flags(p)
    p.add_argument("--out-checkpoint", type=Path, required=True)
    p.add_argument("--log-csv", type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score every candidate of a page file")
    p.add_argument("--data", type=Path, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--checkpoint", type=Path)
    g.add_argument("--oracle", action="store_true", help="score = level ordinal")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="ranking metrics for a score file")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--k", type=_k_list, default=[8, 16, ALL])
    p.add_argument("--margin-predicate", choices=sorted(MARGIN_PREDICATES), default="positive-group")
    p.add_argument("--out", type=Path)
    p.add_argument("--csv", type=Path, help="per-page NDCG rows")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="test-time-scaling selection simulation")
    p.add_argument("--data", type=Path, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--checkpoint", type=Path)
    g.add_argument("--oracle", action="store_true")
    g.add_argument("--none", action="store_true", help="no critic (policy-first / random only)")
    p.add_argument("--mode", choices=[s.replace("_", "-") for s in SELECTIONS], default="ranking")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--policy-noise", type=float, default=1.0)
    p.add_argument("--policy-temperature", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--turns", type=int, default=8)
    p.add_argument("--success-rule", choices=SUCCESS_RULES, default="strict")
    p.add_argument("--binary", action=argparse.BooleanOptionalAction, default=None,
                   help="treat the checkpoint as a binary critic (default: from its loss)")
    p.add_argument("--tau", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.add_argument("--csv", type=Path)
    p.set_defaults(func=cmd_simulate)

    for kind, conv, default in (("noise", float, "0,0.2"), ("negdensity", int, "2,16"),
                                ("datascale", float, "0.25,1.0")):
        p = sub.add_parser(f"ablate-{kind}", help=f"{kind} ablation grid")
        _add_train_flags(p)
        p.add_argument("--values", type=lambda s, conv=conv: [conv(x) for x in s.split(",")],
                       default=[conv(x) for x in default.split(",")])
        p.add_argument("--losses", default="infonce,bce")
        p.add_argument("--out", type=Path)
        p.add_argument("--out-csv", type=Path)
        p.set_defaults(func=_ablate(kind))

    p = sub.add_parser("gradcheck", help="finite-difference and equivalence checks")
    p.add_argument("--fast", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("repro", help="run every acceptance criterion end to end")
    p.add_argument("--out", type=Path, default=Path("repro-out"))
    p.add_argument("--fast", action="store_true", help="smaller gradcheck sample")
    p.set_defaults(func=cmd_repro, argv=None)
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "repro" and argv is not None:
        args.argv = list(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        rc = args.func(args)
        return int(rc or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(dispatch())
