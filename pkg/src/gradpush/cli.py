"""Command line entry point: ``gradpush <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import costs, digraph, engine, harness, mixing, theory


def _kv(key: str, value) -> str:
    if isinstance(value, float):
        return f"{key}={value!r}"
    return f"{key}={value}"


def _config_from_args(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    for name in ("cost_kind", "n", "d", "m", "p", "iters", "graph_seed", "cost_seed", "output_dir"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if getattr(args, "alpha", None):
        cfg.alpha_list = list(args.alpha)
    cfg.__post_init__()
    return cfg


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value experiment config file")
    p.add_argument("--cost-kind", dest="cost_kind", choices=["least_squares", "quadratic"])
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--graph-seed", dest="graph_seed", type=int)
    p.add_argument("--cost-seed", dest="cost_seed", type=int)
    p.add_argument("--output-dir", dest="output_dir")


def _load_instance(args):
    """Graph + ensemble either from files or from a config."""
    if args.graph and args.ensemble:
        g = digraph.load(args.graph)
        ens = costs.load(args.ensemble)
        mix = mixing.build_mixing(g)
        return harness.Instance(g, -1, mix, ens, engine.empirical_delta(mix))
    if args.graph or args.ensemble:
        raise SystemExit("--graph and --ensemble must be given together")
    return harness.build_instance(_config_from_args(args))


def cmd_graph_info(args) -> int:
    if args.graph:
        g, used = digraph.load(args.graph), None
    else:
        g, used = digraph.sample_strongly_connected(args.n, args.p, args.seed)
    mix = mixing.build_mixing(g)
    lines = [_kv("n", g.n), _kv("arcs", len(g))]
    if used is not None:
        lines.append(_kv("seed_used", used))
    lines += [
        _kv("sigma_w", mix.sigma_w),
        "pi=" + ",".join(repr(float(v)) for v in mix.pi),
        _kv("pi_a", mix.pi_a),
        _kv("pi_b", mix.pi_b),
        _kv("norm_1n_minus_npi", mix.norm_1n_minus_npi),
    ]
    print("\n".join(lines))
    return 0


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    inst = harness.build_instance(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    digraph.save(inst.graph, out / "graph.txt")
    costs.save(inst.ens, out / "ensemble.txt")
    alpha = args.step
    rec = engine.run(inst.mix, inst.ens, alpha, cfg.iters)
    path = out / harness.run_file_name(alpha)
    rec.save_csv(path)
    fl, tf = harness.floor_stats(rec.sum_sq_err)
    verdict, rho = harness.gate_for(inst, alpha)
    print("\n".join([_kv("csv", path), _kv("alpha", alpha), _kv("floor", fl), _kv("t_floor", tf),
                     _kv("gate", verdict), _kv("sigma_w", inst.mix.sigma_w), _kv("delta", inst.delta),
                     _kv("rho", rho), _kv("graph_seed_used", inst.graph_seed_used),
                     _kv("cost_seed_used", inst.ens.seed)]))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    summary = harness.run_experiment(cfg, jobs=args.jobs)
    print(summary.to_csv(), end="")
    if args.check_ratios:
        report = harness.sweep_ratio_check(summary)
        print(report.to_text())
        return 0 if report.passed else 1
    return 0


def cmd_gate(args) -> int:
    inst = _load_instance(args)
    status = 0
    for alpha in args.alpha or harness.DEFAULT_ALPHAS:
        verdict, rho = harness.gate_for(inst, alpha)
        print(f"alpha={alpha!r} gate={verdict} rho={rho!r}")
        status |= 0 if verdict else 1
    if alpha_ok := [a for a in (args.alpha or []) if a > 0]:
        c = theory.compute_constants(inst.mix, inst.ens, alpha_ok[0], inst.delta, check_gate=False)
        print(_kv("alpha_max_smooth", c.alpha_max_smooth))
        print(_kv("alpha_max_gate", c.alpha_max_gate))
    return status


def cmd_verify(args) -> int:
    g = digraph.load(args.graph)
    ens = costs.load(args.ensemble)
    mix = mixing.build_mixing(g)
    alpha = args.step
    rec = engine.RunRecord.load_csv(args.csv, alpha=alpha)
    x0 = np.full((ens.n, ens.d), args.x0)
    delta = max(engine.empirical_delta(mix), float(np.max(rec.delta)))
    consts = theory.compute_constants(mix, ens, alpha, delta, check_gate=False)
    verdict = theory.stepsize_gate(consts)
    report = theory.monitor_inequalities(rec, consts, mix, ens, alpha, x0)
    cert = theory.check_boundedness_certificate(rec, consts)
    ok = report.ok
    if verdict:
        env = theory.check_envelopes(rec, consts)
        report.merge(env)
        ok = ok and env.ok and cert.ok
    else:
        report.notes.append(f"envelopes and certificate not evaluated: gate {verdict}")
    print(f"# verification of {args.csv} (alpha={alpha!r}, {rec.iterations} iterations)")
    print(f"# gate: {verdict}")
    print(report.to_text())
    print("# machine-readable")
    print(_kv("gate", "admissible" if verdict else "rejected"))
    print(report.to_kv())
    print(cert.to_kv())
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradpush", description="Gradient-push simulator and verifier.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("graph-info", help="spectral summary of a graph")
    p.add_argument("--graph", help="edge-list file")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--p", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_graph_info)

    p = sub.add_parser("run", help="single stepsize run, writes a CSV")
    _add_config_args(p)
    p.add_argument("--alpha", dest="step", type=float, required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="stepsize sweep from a config")
    _add_config_args(p)
    p.add_argument("--alpha", type=float, nargs="+", help="override alpha_list")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--check-ratios", action="store_true", help="fail unless floors scale like alpha^2")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="check a recorded run against the theory")
    p.add_argument("--graph", required=True)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--alpha", dest="step", type=float, required=True)
    p.add_argument("--x0", type=float, default=1.0, help="constant initial value of every coordinate")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gate", help="stepsize admissibility")
    _add_config_args(p)
    p.add_argument("--graph")
    p.add_argument("--ensemble")
    p.add_argument("--alpha", type=float, nargs="+")
    p.set_defaults(func=cmd_gate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
