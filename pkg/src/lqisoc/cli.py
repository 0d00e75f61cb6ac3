"""Command-line workflows: ground truth, forward solve, inversion, evaluation, sampling.

Every command writes a run manifest next to its outputs. Exit codes are 0 on
success, 2 for bad input files or settings and 3 for numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import IsocError, NumericalError
from .io import (RunManifest, read_moments_csv, read_truth_csv, write_batch, write_moments_csv,
                 write_plot_csv, write_trajectory_csv, write_truth_csv)
from .isoc import IsocConfig, forward, isoc_solve
from .model import GroundTruthMoments, Problem, load_problem
from .montecarlo import estimate_moments, sample_trajectories
from .objective import ObjectiveConfig, fit_report

WORKERS_ENV = "LQISOC_WORKERS"


class UsageError(IsocError, ValueError):
    pass


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from exc


def _apply_params(problem: Problem, path) -> Problem:
    """Override cost weights and noise parameters from a JSON file.

    Accepts ``{"s": [...], "sigma": [...]}`` with full vectors, or an
    inversion result (``s_full`` / ``sigma_full``). Either key may be absent.
    """
    d = _read_json(path)
    s = d.get("s", d.get("s_full"))
    sigma = d.get("sigma", d.get("sigma_full"))
    cost, noise = problem.cost, problem.noise
    try:
        if s is not None:
            cost = cost.with_s(s)
        if sigma is not None:
            noise = noise.with_sigma_vector(sigma)
        return Problem(problem.system, cost, noise, problem.layout, problem.kind)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, IsocError):
            raise
        raise UsageError(f"{path}: bad parameter vector ({exc})") from exc


def _manifest(args, command: str) -> RunManifest:
    m = RunManifest(command, sys.argv[1:] if args.argv is None else args.argv, version=__version__)
    for key in ("model", "truth", "config", "params", "predicted"):
        p = getattr(args, key, None)
        if p:
            m.add_input(p)
    m.seed = getattr(args, "seed", None)
    return m


def _measured(problem: Problem, traj):
    return traj.measured(problem.system.M)


def _vaf_table(report) -> str:
    lines = [f"{'channel':<10}{'mean VAF':>12}{'var VAF':>12}"]
    o = np.asarray(report.omega_vaf)
    var = np.diagonal(o) if o.ndim == 2 else o
    for i, (a, b) in enumerate(zip(report.m_vaf, var)):
        lines.append(f"{'x' + str(i + 1):<10}{a:>12.6f}{b:>12.6f}")
    lines.append(f"J_ISOC = {report.j_isoc:.6f}")
    return "\n".join(lines)


# -- commands ----------------------------------------------------------------

def cmd_gen_truth(args) -> int:
    t0 = time.perf_counter()
    problem = load_problem(args.model)
    if args.params:
        problem = _apply_params(problem, args.params)
    man = _manifest(args, "gen-truth")
    gains, traj, _ = forward(problem)
    if args.mode == "analytic":
        mean, cov = _measured(problem, traj)
        truth = GroundTruthMoments(mean, cov)
    else:
        if args.samples < 2:
            raise UsageError("sampled ground truth needs --samples >= 2")
        batch = sample_trajectories(problem.system, gains, problem.noise, args.samples,
                                    args.seed, problem.kind, args.workers)
        truth = estimate_moments(batch)
    out = Path(args.out)
    write_truth_csv(out, truth)
    man.config = {"mode": args.mode, "samples": args.samples if args.mode == "sampled" else None}
    man.outputs = [str(out)]
    man.wall_time = time.perf_counter() - t0
    man.write(out.with_suffix(".manifest.json"))
    return 0


def cmd_forward(args) -> int:
    t0 = time.perf_counter()
    problem = load_problem(args.model)
    if args.params:
        problem = _apply_params(problem, args.params)
    man = _manifest(args, "forward")
    gains, traj, diag = forward(problem)
    mean, cov = _measured(problem, traj)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "gains.json").write_text(json.dumps(gains.to_dict()))
    write_trajectory_csv(out / "moments.csv", traj)
    write_moments_csv(out / "measured.csv", mean, cov)
    write_plot_csv(out / "plot.csv", {"forward": (mean, cov)})
    man.outputs = ["gains.json", "moments.csv", "measured.csv", "plot.csv"]
    if diag:
        (out / "diagnostics.json").write_text(json.dumps(diag, indent=1))
        man.outputs.append("diagnostics.json")
    man.config = {"s": problem.cost.s.tolist(), "sigma": problem.noise.sigma_vector().tolist(),
                  "kind": problem.kind}
    man.wall_time = time.perf_counter() - t0
    man.write(out / "manifest.json")
    return 0


def cmd_invert(args) -> int:
    t0 = time.perf_counter()
    # validate every input before anything is written
    problem = load_problem(args.model)
    truth = read_truth_csv(args.truth)
    try:
        cfg = IsocConfig.from_dict(_read_json(args.config))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, IsocError):
            raise
        raise UsageError(f"{args.config}: {exc}") from exc
    cfg.check_against(problem)
    sys_ = problem.system
    if truth.horizon != sys_.N or truth.n_measured != sys_.n_measured:
        raise UsageError(f"truth has {truth.horizon + 1} rows of {truth.n_measured} channels, "
                         f"model needs {sys_.N + 1} rows of {sys_.n_measured}")
    for grid in (cfg.s_grid, cfg.sigma_grid):
        if grid.objective.w_m.size != sys_.n_measured:
            raise UsageError("objective weights do not match the number of measured states")
    man = _manifest(args, "invert")
    man.config = cfg.to_dict()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.jsonl", "w") as trace:
        def on_record(rec):
            trace.write(json.dumps(rec) + "\n")
            trace.flush()
            if args.verbose:
                print(f"l={rec['l']} {rec['step']:<5} v={rec['v']} subset={rec['subset']} "
                      f"J={rec['best_j']:.6f}", file=sys.stderr)

        res = isoc_solve(truth, problem, cfg, workers=args.workers, on_record=on_record,
                         dump_candidates=args.dump_candidates)

    (out / "result.json").write_text(json.dumps(res.to_dict(), indent=1))
    (out / "fit.json").write_text(json.dumps(res.fit.to_dict(), indent=1))
    _, traj, _ = forward(res.problem, cfg.lqs_max_iters, cfg.lqs_tol)
    mean, cov = _measured(res.problem, traj)
    write_moments_csv(out / "predicted.csv", mean, cov)
    write_plot_csv(out / "plot.csv", {"truth": (truth.m_hat, truth.Omega_hat), "fitted": (mean, cov)})
    man.outputs = ["result.json", "fit.json", "trace.jsonl", "predicted.csv", "plot.csv"]
    man.wall_time = time.perf_counter() - t0
    man.write(out / "manifest.json")
    print(_vaf_table(res.fit))
    return 0


def cmd_eval(args) -> int:
    truth = read_truth_csv(args.truth)
    mean, cov = read_moments_csv(args.predicted)
    if mean.shape != truth.m_hat.shape:
        raise UsageError(f"predicted moments {mean.shape} do not match truth {truth.m_hat.shape}")
    report = fit_report(mean, cov, truth, ObjectiveConfig.uniform(truth.n_measured, args.cov_mode))
    print(_vaf_table(report))
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=1))
        man = _manifest(args, "eval")
        man.outputs = [str(args.out)]
        man.write(Path(args.out).with_suffix(".manifest.json"))
    return 0


def cmd_sample(args) -> int:
    t0 = time.perf_counter()
    problem = load_problem(args.model)
    if args.params:
        problem = _apply_params(problem, args.params)
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    man = _manifest(args, "sample")
    gains, _, _ = forward(problem)
    mode = args.mode or problem.kind
    batch = sample_trajectories(problem.system, gains, problem.noise, args.samples, args.seed,
                                mode, args.workers)
    out = Path(args.out)
    side = write_batch(out, batch)
    man.config = {"samples": args.samples, "mode": mode}
    man.outputs = [str(out), str(side)]
    man.wall_time = time.perf_counter() - t0
    man.write(out.with_suffix(".manifest.json"))
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lqisoc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lqisoc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", required=True, help="model JSON file")
        sp.add_argument("--out", required=True)

    g = sub.add_parser("gen-truth", help="ground-truth moments of the measured states")
    common(g)
    g.add_argument("--mode", choices=("analytic", "sampled"), default="analytic")
    g.add_argument("--samples", type=int, default=5000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--params", help="JSON with s / sigma overrides")
    g.add_argument("--workers", type=int, default=_default_workers())
    g.set_defaults(func=cmd_gen_truth)

    f = sub.add_parser("forward", help="gains and moments for given parameters")
    common(f)
    f.add_argument("--params", help="JSON with s / sigma overrides")
    f.set_defaults(func=cmd_forward)

    i = sub.add_parser("invert", help="recover cost weights and noise parameters")
    common(i)
    i.add_argument("--truth", required=True, help="measured-moments CSV")
    i.add_argument("--config", required=True, help="inversion config JSON")
    i.add_argument("--workers", type=int, default=_default_workers())
    i.add_argument("--verbose", action="store_true", help="print one line per trace record")
    i.add_argument("--dump-candidates", action="store_true",
                   help="write every candidate and score to the trace (large)")
    i.set_defaults(func=cmd_invert)

    e = sub.add_parser("eval", help="VAF table of predicted against true moments")
    e.add_argument("--truth", required=True)
    e.add_argument("--predicted", required=True)
    e.add_argument("--cov-mode", choices=("diagonal", "full"), default="diagonal")
    e.add_argument("--out", help="optional fit JSON")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sample", help="Monte Carlo rollouts of the closed loop")
    common(s)
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=("lqg", "lqs"), help="defaults to the model kind")
    s.add_argument("--params", help="JSON with s / sigma overrides")
    s.add_argument("--workers", type=int, default=_default_workers())
    s.set_defaults(func=cmd_sample)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.argv = None if argv is None else list(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"lqisoc: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (IsocError, OSError) as exc:
        print(f"lqisoc: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
