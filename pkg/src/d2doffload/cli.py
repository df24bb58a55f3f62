"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or config, 2 a run failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from d2doffload import harness
from d2doffload.model import AgreementNetwork, CostModel, Scenario, ScenarioConfig, build_scenario, scenario_from_dict
from d2doffload.simulator import PeriodConfig, run_offloading, run_random_seeding, write_periods_csv, write_users_csv
from d2doffload.stochastic import RngStream

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


class ValidationError(Exception):
    pass


def _read_yaml(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ValidationError(f"malformed config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"config {path} must be a mapping")
    return data


def _scenario(args) -> Scenario:
    """Scenario from ``--config`` (generated or fully materialised), reseeded by ``--seed``."""
    if args.config:
        data = _read_yaml(args.config)
        if data.get("materialized"):
            return scenario_from_dict(data)[1]
        cfg = ScenarioConfig.from_dict(data.get("scenario", {}))
    else:
        cfg = ScenarioConfig()
    if args.seed is not None:
        cfg = cfg.with_changes(seed=args.seed)
    if getattr(args, "n_users", None):
        cfg = cfg.with_changes(n_users=args.n_users)
    return build_scenario(cfg)


def _period_cfg(args) -> PeriodConfig:
    base = {}
    if args.config:
        base = _read_yaml(args.config).get("experiment", {}).get("period", {})
    cfg = PeriodConfig(**base)
    changes = {k: v for k, v in (("rounds_per_period", args.rounds_per_period),
                                  ("relay_policy", args.relay_policy)) if v is not None}
    return replace(cfg, **changes)


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    costs = CostModel.from_ratio(args.ratio, sc.config.costs.v_d) if args.ratio else sc.config.costs
    seed = sc.config.seed
    run = run_offloading(sc, _period_cfg(args), costs, RngStream(seed, ("nf", costs.ratio)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = {"experiment": "simulate", "sweep_value": "", "seed": seed, "algorithm": run.algorithm}
    write_periods_csv(out / "periods.csv", run, prov)
    write_users_csv(out / "users.csv", run, prov)
    status = f"converged at period {run.converged_at}" if run.converged else "did not converge"
    print(f"{status}; links {run.periods[0].n_edges} -> {run.final_network.n_edges}; "
          f"offloaded fraction {run.offloaded_fraction:.3f}")
    return EXIT_OK


def cmd_seed_baseline(args) -> int:
    sc = _scenario(args)
    seed = sc.config.seed
    run = run_random_seeding(sc, args.n_seeds, args.rounds, sc.config.costs,
                             RngStream(seed, ("seeding", args.n_seeds)), args.relay_policy or "on-hold")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = {"experiment": "seed-baseline", "sweep_value": args.n_seeds, "seed": seed, "algorithm": run.algorithm}
    write_periods_csv(out / "periods.csv", run, prov)
    write_users_csv(out / "users.csv", run, prov)
    print(f"{args.n_seeds} seeds; offloaded fraction {run.offloaded_fraction:.3f}; "
          f"negative-payoff users {run.negative_payoff_fraction:.3f}")
    return EXIT_OK


def _experiment_spec(args, kind: str) -> harness.ExperimentSpec:
    path = args.config or harness.default_config_path(kind)
    data = _read_yaml(path)
    data.setdefault("experiment", {})
    data["experiment"].setdefault("kind", kind)
    if data["experiment"]["kind"] != kind:
        raise ValidationError(f"config {path} is a {data['experiment']['kind']!r} experiment, not {kind!r}")
    if args.seeds is not None:
        data["experiment"]["seeds"] = list(range(args.seed or 0, (args.seed or 0) + args.seeds))
    elif args.seed is not None:
        data["experiment"]["seeds"] = [args.seed]
    return harness.spec_from_dict(data)


def _run_spec(spec, args) -> int:
    result = harness.run_experiment(spec, jobs=args.jobs)
    paths = harness.write_outputs(result, args.out, plot=args.plot)
    for p in paths:
        print(p)
    if result.failed:
        for cell in result.failed:
            print(f"failed: sweep value {cell.value}, seed {cell.seed}: {cell.error}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_sweep(args) -> int:
    return _run_spec(_experiment_spec(args, args.kind), args)


def cmd_supernetwork_verify(args) -> int:
    spec = _experiment_spec(args, "supernetwork-verify")
    if args.n_users:
        spec = replace(spec, sweep_param="n_users", sweep_values=tuple(args.n_users))
    if args.trajectories:
        spec = replace(spec, n_trajectories=args.trajectories)
    result = harness.run_experiment(spec)
    harness.write_outputs(result, args.out)
    failed = [r for r in result.rows if r["status"] != "ok" or not r["passed"]]
    print(f"{len(result.rows) - len(failed)}/{len(result.rows)} instances satisfy every basin check")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_payoff_probe(args) -> int:
    from d2doffload.payoff import QUADRATURE_MAX_NEIGHBORS, estimate_payoff, quadrature_delivery_probs

    sc = _scenario(args)
    if not 0 <= args.user < sc.n_users:
        raise ValidationError(f"user must be in 0..{sc.n_users - 1}")
    g = AgreementNetwork.from_contacts(sc.contacts)
    est = estimate_payoff(args.user, g, sc.users, sc.contacts, sc.config.costs, args.samples,
                          RngStream(sc.config.seed, "payoff-probe"))
    nbrs = sorted(g.neighbors(args.user))
    print(f"user {args.user}, neighbours {nbrs}")
    oracle = None
    if len(nbrs) <= QUADRATURE_MAX_NEIGHBORS:
        oracle = quadrature_delivery_probs(args.user, g, sc.users, sc.contacts, args.grid)
    print(f"{'source':>8} {'monte-carlo':>12} {'quadrature':>12}")
    for s in [args.user] + nbrs:
        q = f"{oracle[s]:12.5f}" if oracle else f"{'n/a':>12}"
        print(f"{s:>8} {est.delivery_prob[s]:12.5f} {q}")
    print(f"gain {est.gain:.4f}  cost {est.cost:.4f}  payoff {est.payoff:.4f} +- {est.std_error:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="d2doffload", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out="out"):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", default=out, help="output directory")

    sp = sub.add_parser("simulate", help="one network-formation run")
    common(sp)
    sp.add_argument("--n-users", type=int)
    sp.add_argument("--ratio", type=float, help="cost ratio v_c/v_d (v_d from the config)")
    sp.add_argument("--rounds-per-period", type=int)
    sp.add_argument("--relay-policy", choices=("on-hold", "after-access"))
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("seed-baseline", help="one random-seeding run")
    common(sp)
    sp.add_argument("--n-users", type=int)
    sp.add_argument("--n-seeds", type=int, default=1)
    sp.add_argument("--rounds", type=int, default=300)
    sp.add_argument("--relay-policy", choices=("on-hold", "after-access"))
    sp.set_defaults(func=cmd_seed_baseline)

    sp = sub.add_parser("sweep", help="replicated parameter sweep")
    sp.add_argument("kind", choices=[k for k in harness.KINDS if k != "supernetwork-verify"])
    common(sp)
    sp.add_argument("--seeds", type=int, help="number of master seeds, starting at --seed (default 0)")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("supernetwork-verify", help="basin checks on random payoff tables")
    common(sp)
    sp.add_argument("--seeds", type=int, help="number of random tables per size")
    sp.add_argument("--n-users", type=int, nargs="+")
    sp.add_argument("--trajectories", type=int)
    sp.set_defaults(func=cmd_supernetwork_verify)

    sp = sub.add_parser("payoff-probe", help="one-user estimator against the quadrature oracle")
    common(sp)
    sp.add_argument("--n-users", type=int)
    sp.add_argument("--user", type=int, default=0)
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--grid", type=int, default=400)
    sp.set_defaults(func=cmd_payoff_probe)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (ValidationError, ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
