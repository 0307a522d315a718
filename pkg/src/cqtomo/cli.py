"""Command-line front end: adaptive tomography schemes, standalone
informational-completeness certification, object generators, and benchmark
tables against the closed-form measurement-count bounds.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  Every run echoes
its fully resolved configuration before doing work, so a logged invocation
plus the same binary reproduces the outputs.  Flag precedence is
flag > --config file > built-in default.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import convex, qcore
from .harness import AggregateResult, ExperimentSpec, run_experiment
from .schemes import SCHEMES, SchemeConfig

_SCHEME_SUBCOMMANDS = ("cqst", "act", "pact", "actqpt", "pactqpt", "acqpt", "cqdt")


class UsageError(ValueError):
    pass


def _parse_copies(text: str) -> float:
    if text == "inf":
        return float("inf")
    try:
        value = int(text)
    except ValueError:
        raise UsageError("--copies must be a positive integer or 'inf'")
    if value < 1:
        raise UsageError("--copies must be a positive integer or 'inf'")
    return float(value)


def _parse_local_dims(text: str):
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise UsageError("--local-dims must be a comma list of integers")
    return dims


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d", type=int, help="Hilbert space dimension (default 2)")
    p.add_argument("--r", type=int, help="target rank (default 1)")
    p.add_argument("--trials", type=int, help="number of trials (default 1)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--copies", type=str,
                   help="copies per setting, integer or 'inf' (default inf)")
    p.add_argument("--epsilon", type=float,
                   help="certification threshold on s_cvx (default 1e-6)")
    p.add_argument("--budget", type=int,
                   help="iteration budget (default scheme-dependent)")
    p.add_argument("--local-dims", type=str,
                   help="comma list of tensor-factor dimensions (product schemes)")
    p.add_argument("--mode", choices=("ideal", "realizable"),
                   help="probe model for acqpt (default ideal)")
    p.add_argument("--unitary-assumption", action="store_true", default=None,
                   help="assume the unknown process is unitary (acqpt)")
    p.add_argument("--jobs", type=int, help="worker pool size (default 1)")
    p.add_argument("--out", type=str, help="output directory for CSV and traces")
    p.add_argument("--traces", action="store_true", default=None,
                   help="also write per-trial trace files under --out")
    p.add_argument("--config", type=str,
                   help="key=value file supplying defaults (flags win)")


def _read_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError("%s:%d: expected key=value" % (path, lineno))
                key, value = line.split("=", 1)
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise UsageError("cannot read --config file: %s" % exc)
    return values


_DEFAULTS = {"d": 2, "r": 1, "trials": 1, "seed": 0, "copies": "inf",
             "epsilon": 1e-6, "budget": None, "local_dims": None,
             "mode": "ideal", "unitary_assumption": False, "jobs": 1,
             "out": None, "traces": False, "scheme": None}

_COERCE = {"d": int, "r": int, "trials": int, "seed": int, "copies": str,
           "epsilon": float, "budget": int, "local_dims": str, "mode": str,
           "unitary_assumption": lambda s: s.lower() in ("1", "true", "yes"),
           "jobs": int, "out": str, "traces": lambda s: s.lower() in
           ("1", "true", "yes"), "scheme": str}


def _resolve(args: argparse.Namespace) -> dict:
    """Merge flag > config-file > default for every common option."""
    resolved = dict(_DEFAULTS)
    if getattr(args, "config", None):
        for key, raw in _read_config_file(args.config).items():
            if key not in _COERCE:
                raise UsageError("unknown key %r in --config file" % key)
            try:
                resolved[key] = _COERCE[key](raw)
            except ValueError:
                raise UsageError("bad value %r for %s in --config file" % (raw, key))
    for key in _DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    return resolved


def _build_scheme_config(subcommand: str, resolved: dict) -> SchemeConfig:
    if subcommand == "cqst":
        scheme = resolved["scheme"] or "rh"
        if scheme not in ("rh", "rlh", "act", "pact"):
            raise UsageError("cqst --scheme must be one of rh, rlh, act, pact")
    elif subcommand == "acqpt":
        scheme = "acqpt-unitary" if resolved["unitary_assumption"] else "acqpt"
    else:
        scheme = subcommand
    local_dims = resolved["local_dims"]
    if isinstance(local_dims, str):
        local_dims = _parse_local_dims(local_dims)
    copies = resolved["copies"]
    if isinstance(copies, str):
        copies = _parse_copies(copies)
    try:
        return SchemeConfig(scheme=scheme, d=resolved["d"], r=resolved["r"],
                            copies=copies, epsilon=resolved["epsilon"],
                            budget=resolved["budget"], seed=resolved["seed"],
                            local_dims=local_dims, mode=resolved["mode"])
    except ValueError as exc:
        raise UsageError(str(exc))


def _echo_config(config: SchemeConfig, resolved: dict, stream) -> None:
    items = [("scheme", config.scheme), ("d", config.d), ("r", config.r),
             ("copies", "inf" if not np.isfinite(config.copies)
              else int(config.copies)),
             ("epsilon", config.epsilon), ("budget", config.iteration_budget),
             ("seed", config.seed),
             ("local_dims", ",".join(str(x) for x in config.local_dims)
              if config.local_dims else "-"),
             ("mode", config.mode), ("trials", resolved["trials"]),
             ("jobs", resolved["jobs"]), ("out", resolved["out"] or "-")]
    print("config: " + " ".join("%s=%s" % kv for kv in items), file=stream)


def _run_scheme_command(subcommand: str, args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    config = _build_scheme_config(subcommand, resolved)
    _echo_config(config, resolved, sys.stdout)
    spec = ExperimentSpec(config=config, trials=resolved["trials"],
                          out_dir=resolved["out"],
                          write_traces=resolved["traces"],
                          jobs=resolved["jobs"])
    agg = run_and_report(spec)
    errors = [r for r in agg.rows if r.reason.startswith("error")]
    return 2 if errors else 0


def run_and_report(spec: ExperimentSpec) -> AggregateResult:
    agg = run_experiment(spec)
    for row in agg.rows:
        print("trial=%d seed=%d terminal_count=%d total_outcomes=%d "
              "fidelity=%.6f reason=%s"
              % (row.trial, row.seed, row.terminal_count, row.total_outcomes,
                 row.fidelity, row.reason))
    ok = [r for r in agg.rows if not r.reason.startswith("error")]
    if ok:
        print("summary: trials=%d mean_terminal=%.3f std_terminal=%.3f "
              "mean_fidelity=%.6f"
              % (len(ok), agg.mean_terminal_count, agg.std_terminal_count,
                 agg.mean_fidelity))
    return agg


# ---------------------------------------------------------------------------
# standalone certification


def _matrix_from_json(obj) -> np.ndarray:
    m = np.asarray(obj, dtype=float)
    if m.ndim != 3 or m.shape[0] != m.shape[1] or m.shape[2] != 2:
        raise UsageError("matrices must be nested [[...[re, im]...]] with "
                         "square shape")
    return m[:, :, 0] + 1j * m[:, :, 1]


def _run_icc(args: argparse.Namespace) -> int:
    kind = args.kind
    d = args.d
    if d is None or d < 2:
        raise UsageError("icc requires --d >= 2")
    try:
        with open(args.constraints, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise UsageError("cannot read constraints file: %s" % exc)
    except json.JSONDecodeError as exc:
        raise UsageError("constraints file is not valid JSON: %s" % exc)
    if not isinstance(payload, dict) or "constraints" not in payload:
        raise UsageError("constraints file must be an object with a "
                         "'constraints' list")
    if kind == "povm" and not args.n_outcomes:
        raise UsageError("povm certification requires --n-outcomes")
    spec = convex.FeasibleSetSpec(kind=kind, dim=d,
                                  n_outcomes=args.n_outcomes)
    block_dim = d * d if kind in ("choi-cptp", "chi-cptp") else d
    for entry in payload["constraints"]:
        try:
            ops = [(int(p.get("block", 0)), _matrix_from_json(p["operator"]))
                   for p in entry["operators"]]
            target = float(entry["target"])
        except (KeyError, TypeError) as exc:
            raise UsageError("malformed constraint entry: %s" % exc)
        for _, op in ops:
            if op.shape[0] != block_dim:
                raise UsageError("operator dimension %d does not match kind "
                                 "%s with d=%d" % (op.shape[0], kind, d))
        spec.add(ops, target)
    print("config: kind=%s d=%d n_outcomes=%s constraints=%d seed=%d"
          % (kind, d, args.n_outcomes or "-", len(spec.constraints), args.seed))
    witness = convex.random_witness(kind, d, spec.n_outcomes,
                                    qcore.Rng(args.seed))
    result = convex.icc(spec, witness)
    print("s_cvx_raw=%.12g status=(%s, %s)"
          % (result.s_cvx_raw, result.status_max, result.status_min))
    if not result.ok:
        print("verdict: solver failed", file=sys.stderr)
        return 2
    verdict = "unique (informationally complete within the model)" \
        if result.s_cvx_raw < args.epsilon else "not unique"
    print("verdict: %s (threshold %g)" % (verdict, args.epsilon))
    return 0


# ---------------------------------------------------------------------------
# generators


def _matrix_to_json(m: np.ndarray):
    m = np.asarray(m, dtype=complex)
    return [[[z.real, z.imag] for z in row] for row in m]


def _run_gen(args: argparse.Namespace) -> int:
    if args.d < 2:
        raise UsageError("gen requires --d >= 2")
    if args.r < 1 or args.r > args.d:
        raise UsageError("gen requires 1 <= r <= d")
    rng = qcore.Rng(args.seed)
    print("config: object=%s d=%d r=%d seed=%d n_outcomes=%s"
          % (args.object, args.d, args.r, args.seed, args.n_outcomes or "-"))
    if args.object == "state":
        payload = {"kind": "state", "d": args.d, "r": args.r,
                   "matrix": _matrix_to_json(
                       qcore.random_rank_r_state(args.d, args.r, rng).matrix)}
    elif args.object == "process":
        from .channels import random_rank_r_process
        kraus = random_rank_r_process(args.d, args.r, rng)
        payload = {"kind": "process", "d": args.d, "r": args.r,
                   "kraus": [_matrix_to_json(k) for k in kraus.operators]}
    elif args.object == "unitary":
        payload = {"kind": "unitary", "d": args.d,
                   "matrix": _matrix_to_json(qcore.haar_unitary(args.d, rng))}
    else:
        n = args.n_outcomes or args.d
        povm = qcore.random_rank_r_povm(args.d, args.r, n, rng)
        payload = {"kind": "povm", "d": args.d, "r": args.r,
                   "elements": [_matrix_to_json(e) for e in povm.outcomes]}
    text = json.dumps(payload)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print("wrote %s" % args.out)
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# benchmark tables


def _parse_int_list(text: str, flag: str):
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise UsageError("%s must be a comma list of integers" % flag)


def _print_table(header, rows) -> None:
    widths = [max(len(str(h)), max((len(str(r[i])) for r in rows), default=0))
              for i, h in enumerate(header)]
    fmt = "  ".join("%%-%ds" % w for w in widths)
    print(fmt % tuple(header))
    print(fmt % tuple("-" * w for w in widths))
    for row in rows:
        print(fmt % tuple(row))


def _run_bench(args: argparse.Namespace) -> int:
    dims = _parse_int_list(args.d, "--d")
    ranks = _parse_int_list(args.ranks, "--ranks")
    print("config: family=%s d=%s ranks=%s scheme=%s trials=%d seed=%d"
          % (args.family, args.d, args.ranks, args.scheme, args.trials,
             args.seed))
    rows = []
    if args.family == "qst":
        header = ("scheme", "d", "r", "mean_K_IC", "std_K_IC", "K_KW", "K_0",
                  "mean_fidelity")
        for d in dims:
            for r in ranks:
                agg = _bench_runs(args.scheme, d, r, args.trials, args.seed)
                rows.append((args.scheme, d, r,
                             "%.2f" % agg.mean_terminal_count,
                             "%.2f" % agg.std_terminal_count,
                             qcore.kw_bound(d, r), qcore.k0_bound(d, r),
                             "%.6f" % agg.mean_fidelity))
    elif args.family == "qpt":
        header = ("scheme", "d", "r", "mean_L_IC", "std_L_IC", "K_KW(d^2)",
                  "K_0(d^2)", "mean_fidelity")
        scheme = args.scheme if args.scheme in ("actqpt", "pactqpt", "acqpt",
                                                "acqpt-unitary") else "actqpt"
        for d in dims:
            for r in ranks:
                agg = _bench_runs(scheme, d, r, args.trials, args.seed)
                rows.append((scheme, d, r,
                             "%.2f" % agg.mean_terminal_count,
                             "%.2f" % agg.std_terminal_count,
                             qcore.kw_bound(d * d, r), qcore.k0_bound(d * d, r),
                             "%.6f" % agg.mean_fidelity))
    else:
        header = ("scheme", "d", "r", "mean_L_IC", "std_L_IC", "L_PR",
                  "M_BKD", "mean_fidelity")
        for d in dims:
            for r in ranks:
                agg = _bench_runs("cqdt", d, r, args.trials, args.seed)
                rows.append(("cqdt", d, r,
                             "%.2f" % agg.mean_terminal_count,
                             "%.2f" % agg.std_terminal_count,
                             qcore.phase_retrieval_lic(d, r),
                             qcore.bkd_projective_mic(d),
                             "%.6f" % agg.mean_fidelity))
    _print_table(header, rows)
    return 0


def _bench_runs(scheme: str, d: int, r: int, trials: int,
                seed: int) -> AggregateResult:
    config = SchemeConfig(scheme=scheme, d=d, r=r, seed=seed)
    return run_experiment(ExperimentSpec(config=config, trials=trials))


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cqtomo",
        description="Compressive quantum tomography with convex "
                    "informational-completeness certification.")
    sub = parser.add_subparsers(dest="subcommand")

    for name, helptext in (
            ("cqst", "compressive state tomography (rh, rlh, act, pact)"),
            ("act", "adaptive compressive state tomography"),
            ("pact", "product-basis adaptive compressive state tomography"),
            ("actqpt", "adaptive compressive process tomography"),
            ("pactqpt", "product-basis adaptive compressive process tomography"),
            ("acqpt", "two-outcome probe adaptive process tomography"),
            ("cqdt", "compressive detector tomography")):
        p = sub.add_parser(name, help=helptext)
        _add_common_flags(p)
        if name == "cqst":
            p.add_argument("--scheme", choices=("rh", "rlh", "act", "pact"),
                           help="basis selection rule (default rh)")

    p = sub.add_parser("icc", help="certify a constraint set from a JSON file")
    p.add_argument("--kind", required=True,
                   choices=("state", "choi-cptp", "chi-cptp", "povm"))
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n-outcomes", type=int, default=None,
                   help="number of POVM outcomes (povm kind only)")
    p.add_argument("--constraints", type=str, required=True,
                   help="JSON file with a 'constraints' list")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen", help="generate a random low-rank object as JSON")
    p.add_argument("--object", required=True,
                   choices=("state", "process", "unitary", "povm"))
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--n-outcomes", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)

    p = sub.add_parser("bench", help="benchmark terminal counts against "
                                     "closed-form bounds")
    p.add_argument("family", choices=("qst", "qpt", "qdt"))
    p.add_argument("--d", type=str, required=True, help="comma list of dims")
    p.add_argument("--ranks", type=str, default="1", help="comma list of ranks")
    p.add_argument("--scheme", type=str, default="rh")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; remap to the documented code 1
        return 0 if exc.code == 0 else 1
    if args.subcommand is None:
        parser.print_help()
        return 1
    try:
        if args.subcommand in _SCHEME_SUBCOMMANDS:
            return _run_scheme_command(args.subcommand, args)
        if args.subcommand == "icc":
            return _run_icc(args)
        if args.subcommand == "gen":
            return _run_gen(args)
        return _run_bench(args)
    except UsageError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure surface
        print("error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
