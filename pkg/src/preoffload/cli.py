"""Command-line entry point: ``preoffload <subcommand> --config FILE --seed N``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ALGORITHMS, Config, load_config
from .data import Trajectory, build_windows, clean, parse_plt, split
from .harness import (
    LEARNED,
    COMPARISON_HEADER,
    Prepared,
    TraceWriter,
    emit_csv,
    prepare,
    run_comparison,
    run_one,
    train_variant,
    write_curve,
)
from .nn import grad_check, lstm_check_case
from .policies import save_agent
from .predictor import evaluate, load_predictor, save_predictor, train
from .seeding import substream_seed
from .synthetic import sinusoid_track
from .world import build_world

GRAD_TOLERANCE = 1e-4


def _trajectory(args, cfg: Config, seed: int) -> Trajectory:
    if args.plt:
        return clean(parse_plt(Path(args.plt).read_text(), vehicle_id=Path(args.plt).stem), cfg.scenario.max_speed_mps)
    if args.sinusoid:
        return sinusoid_track(n=args.sinusoid, seed=substream_seed(seed, "sinusoid"))
    world = build_world(cfg, seed)
    if not 0 <= args.vehicle < len(world.trajectories):
        raise ValueError(f"vehicle index {args.vehicle} out of range 0..{len(world.trajectories) - 1}")
    return world.trajectories[args.vehicle]


def _datasets(args, cfg: Config, seq_len: int):
    traj = _trajectory(args, cfg, args.seed)
    return split(build_windows(traj, seq_len), cfg.experiment.train_fraction)


def cmd_train_predictor(args, cfg: Config) -> int:
    train_set, test_set = _datasets(args, cfg, cfg.predictor.seq_len)
    p = train(train_set, replace(cfg.predictor, seed=substream_seed(args.seed, "predictor", args.vehicle)))
    save_predictor(args.out, p)
    if args.loss_csv:
        with open(args.loss_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss"])
            w.writerows([i + 1, repr(v)] for i, v in enumerate(p.loss_history))
    report = evaluate(p, test_set)
    print("mae,mse,rmse,accuracy")
    print(report.csv_row())
    return 0


def cmd_eval_predictor(args, cfg: Config) -> int:
    p = load_predictor(args.checkpoint)
    _, test_set = _datasets(args, cfg, p.config.seq_len)
    print("mae,mse,rmse,accuracy")
    print(evaluate(p, test_set).csv_row())
    return 0


def cmd_train_agent(args, cfg: Config) -> int:
    world = build_world(cfg, args.seed)
    res = train_variant(world, cfg.agent, args.seed, args.variant)
    save_agent(args.out, res.policy, cfg.agent)
    if args.curve:
        write_curve(res.curve, args.curve)
    last = res.curve[-1]
    print(f"steps={last.step} final_episode_reward={last.episode_reward!r}")
    return 0


def _with_checkpoint(cfg: Config, algo: str, checkpoint: str | None) -> Config:
    if checkpoint is None:
        return cfg
    key = f"{LEARNED[algo]}_checkpoint"
    return replace(cfg, experiment=replace(cfg.experiment, **{key: str(Path(checkpoint).resolve())}))


def cmd_simulate(args, cfg: Config) -> int:
    algo = args.algorithm
    if args.checkpoint and algo not in LEARNED:
        raise ValueError(f"--checkpoint only applies to learned algorithms {sorted(LEARNED)}")
    cfg = _with_checkpoint(cfg, algo, args.checkpoint)
    cfg = replace(cfg, experiment=replace(cfg.experiment, algorithms=(algo,)))
    prep = prepare(cfg, args.seed, train_missing=not args.no_train)
    eval_seed = cfg.experiment.seeds[0]
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            result = run_one(algo, eval_seed, cfg, prep, args.seed, on_slot=TraceWriter(fh, prep.world.scenario))
    else:
        result = run_one(algo, eval_seed, cfg, prep, args.seed)
    print(",".join(COMPARISON_HEADER))
    print(",".join(result.row()))
    return 0


def cmd_compare(args, cfg: Config) -> int:
    out = Path(args.out) if args.out else cfg.resolve(cfg.experiment.output_dir)
    prep: Prepared = prepare(cfg, args.seed, train_missing=not args.no_train)
    results = run_comparison(cfg, args.seed, prep)
    digests = {r.seed: set() for r in results}
    for r in results:
        digests[r.seed].add(r.stream_digest)
    if any(len(d) != 1 for d in digests.values()):
        raise RuntimeError("algorithms saw different task or trajectory streams")
    comp, summ = emit_csv(results, out)
    for variant, curve in prep.curves.items():
        write_curve(curve, out / f"curve_{variant}.csv")
    print(comp)
    print(summ)
    return 0


def cmd_grad_check(args, cfg: Config) -> int:
    worst = 0.0
    t0 = time.perf_counter()
    for k in range(args.seeds):
        case_seed = substream_seed(args.seed, "grad-check", k)
        err = grad_check(*lstm_check_case(case_seed))
        worst = max(worst, err)
        print(f"case={k} seed={case_seed} max_rel_error={err:.3e}")
    ok = worst <= GRAD_TOLERANCE
    print(f"{'PASS' if ok else 'FAIL'} max_rel_error={worst:.3e} tolerance={GRAD_TOLERANCE:.0e} "
          f"cases={args.seeds} elapsed_s={time.perf_counter() - t0:.1f}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="preoffload", description="Vehicular MEC pre-offloading simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, fn, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML scenario/experiment file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(func=fn)
        return p

    def track_args(p: argparse.ArgumentParser) -> None:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--plt", help="Geolife .plt trajectory to use instead of the scenario tracks")
        g.add_argument("--sinusoid", type=int, metavar="N", help="use an N-point synthetic sinusoid track")
        p.add_argument("--vehicle", type=int, default=0, help="scenario vehicle whose track is used")

    p = add("train-predictor", cmd_train_predictor, "train the LSTM position predictor")
    track_args(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", help="write per-epoch training loss here")

    p = add("eval-predictor", cmd_eval_predictor, "report MAE, MSE, RMSE, accuracy on the held-out split")
    track_args(p)
    p.add_argument("--checkpoint", required=True)

    p = add("train-agent", cmd_train_agent, "train a DDQN or DQN offloading agent")
    p.add_argument("--variant", choices=("ddqn", "dqn"), default="ddqn")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--curve", help="learning-curve CSV path")

    p = add("simulate", cmd_simulate, "roll one algorithm over the first evaluation seed")
    p.add_argument("--algorithm", choices=ALGORITHMS, required=True)
    p.add_argument("--checkpoint", help="trained agent for learned algorithms")
    p.add_argument("--trace", help="per-slot trace CSV path")
    p.add_argument("--no-train", action="store_true", help="fail instead of training missing agents")

    p = add("compare", cmd_compare, "run every configured algorithm x seed and write CSVs")
    p.add_argument("--out", help="output directory (overrides experiment.output_dir)")
    p.add_argument("--no-train", action="store_true", help="fail instead of training missing agents")

    p = add("grad-check", cmd_grad_check, "verify LSTM gradients by central differences")
    p.add_argument("--seeds", type=int, default=20, help="number of random cases (default 20)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
