"""Command-line entry point: ``hydrorl <subcommand> [options]``.

Every subcommand accepts ``--config <file>`` (a versioned JSON experiment
config) plus ``--set section.key=value`` overrides. Exit codes: 0 on
success, 2 for invalid configuration or input, 3 when ``--strict`` turns a
non-convergence warning into an error.
"""

import argparse
import json
import os
import sys
import warnings

import numpy as np

from ._validation import InvalidInputError, NonConvergenceWarning
from .envs import compile
from .evaluation import bound_diagnostics_thm1, bound_diagnostics_thm2, ztest_compare
from .harness import (ExperimentConfig, env_pair, load_sweeps, log_to_csv, make_dataset,
                      per_seed_sweep_means, report, rows_to_csv, run_sweep, train_one,
                      REPORT_COLUMNS, _write_atomic)
from .learners import save_checkpoint
from .rmdp import UncertaintySpec, random_tabular_mdp, robust_value_iteration

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(d, assignment):
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise InvalidInputError(f"--set expects section.key=value, got {assignment!r}")
    node = d
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise InvalidInputError(f"cannot override inside non-object {key!r}")
    node[parts[-1]] = _parse_value(value)


def load_config(args):
    """Config from ``--config`` (or defaults) with command-line overrides."""
    if args.config:
        try:
            with open(args.config) as fh:
                d = json.load(fh)
        except OSError as exc:
            raise InvalidInputError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{args.config} is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise InvalidInputError("config must be a JSON object")
    else:
        d = ExperimentConfig().to_dict()
    for assignment in args.set or []:
        _apply_override(d, assignment)
    for name in ("method", "output_dir", "workers"):
        value = getattr(args, name, None)
        if value is not None:
            d[name] = value
    if getattr(args, "seeds", None):
        d["seeds"] = [int(s) for s in args.seeds.split(",")]
    return ExperimentConfig.from_dict(d)


# -- subcommands -------------------------------------------------------------

def cmd_solve_exact(args):
    cfg = load_config(args)
    target, source, mdp = env_pair(cfg)
    if args.domain == "source":
        mdp = compile(source)
    sigma = cfg.train.sigma if args.sigma is None else args.sigma
    res = robust_value_iteration(mdp, UncertaintySpec(sigma), tol=args.tol,
                                 max_iters=args.max_iters)
    doc = {"domain": args.domain, "sigma": float(sigma), "n_iter": res.n_iter,
           "converged": res.converged, "policy": res.policy.tolist(),
           "v": res.q.max(axis=1).tolist(), "q": res.q.tolist()}
    _write_atomic(args.out, json.dumps(doc) + "\n")


def cmd_gen_data(args):
    cfg = load_config(args)
    seed = cfg.dataset_seed if args.seed is None else args.seed
    data = make_dataset(cfg, seed - cfg.dataset_seed)
    _write_atomic(args.out, data.to_csv())


def cmd_train(args):
    cfg = load_config(args)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    model = train_one(cfg, seed)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_checkpoint(model, args.out)
    if args.log:
        _write_atomic(args.log, log_to_csv(model.log_))


def cmd_eval_sweep(args):
    cfg = load_config(args)
    _, path = run_sweep(cfg)
    print(path)


THM1_COLUMNS = ["instance", "sigma", "lhs", "rhs", "A", "B", "source_value", "holds"]
THM2_COLUMNS = ["instance", "kappa", "k", "xi", "zeta", "gap", "bound"]


def _sigmas(args, cfg):
    if args.sigma:
        return [float(s) for s in args.sigma.split(",")]
    return [cfg.train.sigma]


def cmd_diagnose_thm1(args):
    cfg = load_config(args)
    rows = []
    if args.random:
        rng = np.random.default_rng(args.seed)
        for i in range(args.random):
            for sigma in _sigmas(args, cfg):
                tgt = random_tabular_mdp(args.n_states, args.n_actions, cfg.train.gamma, rng)
                src = random_tabular_mdp(args.n_states, args.n_actions, cfg.train.gamma, rng)
                src = tgt.with_kernel(src.kernel)
                est = random_tabular_mdp(args.n_states, args.n_actions, cfg.train.gamma, rng)
                pi = rng.integers(args.n_actions, size=args.n_states)
                d = bound_diagnostics_thm1(pi, tgt, src, sigma, estimated_kernel=est.kernel,
                                           check=False)
                rows.append(dict(d, instance=i, sigma=sigma, holds=d["lhs"] >= d["rhs"] - 1e-8))
    else:
        _, source, mdp = env_pair(cfg)
        src = compile(source)
        data = make_dataset(cfg, cfg.seeds[0])
        for sigma in _sigmas(args, cfg):
            for i, pol_sigma in enumerate((0.0, sigma)):
                pi = robust_value_iteration(mdp, UncertaintySpec(pol_sigma)).policy
                d = bound_diagnostics_thm1(pi, mdp, src, sigma, dataset=data,
                                           ensemble_size=cfg.train.ensemble_size,
                                           lambda_prior=cfg.train.lambda_prior,
                                           seed=cfg.seeds[0], check=False)
                rows.append(dict(d, instance=i, sigma=sigma, holds=d["lhs"] >= d["rhs"] - 1e-8))
    _write_atomic(args.out, rows_to_csv(rows, THM1_COLUMNS))
    if not all(r["holds"] for r in rows):
        print("bound violated on at least one instance", file=sys.stderr)
        return 1
    return EXIT_OK


def cmd_diagnose_thm2(args):
    cfg = load_config(args)
    kappas = [float(k) for k in args.kappa.split(",")]
    sigma = _sigmas(args, cfg)[0]
    if args.random:
        rng = np.random.default_rng(args.seed)
        pairs = []
        for _ in range(args.random):
            tgt = random_tabular_mdp(args.n_states, args.n_actions, cfg.train.gamma, rng)
            src = random_tabular_mdp(args.n_states, args.n_actions, cfg.train.gamma, rng)
            pairs.append((tgt, tgt.with_kernel(src.kernel)))
    else:
        _, source, mdp = env_pair(cfg)
        pairs = [(mdp, compile(source))]
    rows = []
    for i, (tgt, src) in enumerate(pairs):
        for kappa in kappas:
            for r in bound_diagnostics_thm2(tgt, src, sigma, kappa, args.iters, check=False):
                rows.append(dict(r, instance=i, kappa=kappa))
    _write_atomic(args.out, rows_to_csv(rows, THM2_COLUMNS))
    if any(r["gap"] > r["bound"] + 1e-9 for r in rows):
        print("gap exceeded the bound on at least one row", file=sys.stderr)
        return 1
    return EXIT_OK


def cmd_ztest(args):
    rows = load_sweeps(args.inputs)
    mags = None if args.magnitudes is None else [float(m) for m in args.magnitudes.split(",")]
    a = per_seed_sweep_means(rows, args.a, mags)
    b = per_seed_sweep_means(rows, args.b, mags)
    z, p, reject = ztest_compare(a, b, alpha=args.alpha, min_samples=args.min_samples)
    doc = {"a": args.a, "b": args.b, "n_a": int(a.size), "n_b": int(b.size),
           "mean_a": float(a.mean()), "mean_b": float(b.mean()), "z": z, "p_value": p,
           "alpha": args.alpha, "reject_h0": bool(reject),
           "min_samples": args.min_samples}
    text = json.dumps(doc) + "\n"
    if args.out:
        _write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_report(args):
    rows = report(load_sweeps(args.inputs))
    _write_atomic(args.out, rows_to_csv(rows, REPORT_COLUMNS))


# -- parser ------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config entry (JSON value); repeatable")
    p.add_argument("--strict", action="store_true",
                   help="treat non-convergence warnings as errors (exit 3)")


def build_parser():
    parser = argparse.ArgumentParser(prog="hydrorl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-exact", help="robust value iteration on the env pair")
    _common(p)
    p.add_argument("--domain", choices=("target", "source"), default="target")
    p.add_argument("--sigma", type=float)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iters", type=int, default=100_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve_exact)

    p = sub.add_parser("gen-data", help="write an offline target dataset as CSV")
    _common(p)
    p.add_argument("--seed", type=int, help="dataset seed (default: config dataset.seed)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit one learner and write a checkpoint")
    _common(p)
    p.add_argument("--method")
    p.add_argument("--seed", type=int, help="run seed (default: first config seed)")
    p.add_argument("--out", required=True, help="checkpoint JSON path")
    p.add_argument("--log", help="training log CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-sweep", help="train every seed and evaluate the perturbation grid")
    _common(p)
    p.add_argument("--method")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_eval_sweep)

    for name, func, default_sigma in (("diagnose-thm1", cmd_diagnose_thm1, "0.1,0.3"),
                                      ("diagnose-thm2", cmd_diagnose_thm2, None)):
        p = sub.add_parser(name, help="numeric check of a performance bound")
        _common(p)
        p.add_argument("--random", type=int, default=0,
                       help="use this many random instances instead of the gridworld")
        p.add_argument("--n-states", type=int, default=6)
        p.add_argument("--n-actions", type=int, default=2)
        p.add_argument("--sigma", default=default_sigma, help="comma-separated radii")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        if name == "diagnose-thm2":
            p.add_argument("--kappa", default="0,0.5,1")
            p.add_argument("--iters", type=int, default=200)
        p.set_defaults(func=func)

    p = sub.add_parser("ztest", help="one-sided z-test of per-seed sweep averages")
    p.add_argument("--inputs", nargs="+", required=True, help="sweep CSV files")
    p.add_argument("--a", required=True, help="method tested for the larger mean")
    p.add_argument("--b", required=True, help="baseline method")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--min-samples", type=int, default=30,
                   help="minimum seeds per group; lowering it relaxes the protocol")
    p.add_argument("--magnitudes", help="restrict to these comma-separated magnitudes")
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_ztest)

    p = sub.add_parser("report", help="aggregate sweep CSVs over seeds")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings():
        if args.strict:
            warnings.simplefilter("error", NonConvergenceWarning)
        try:
            code = args.func(args)
        except NonConvergenceWarning as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NONCONVERGED
        except InvalidInputError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
