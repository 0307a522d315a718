"""Experiment orchestration: simulated multinomial data, trial batches over
seeds, aggregation, and file serialization of traces and trial tables.

Trial seeds derive from the master seed through SeedSequence spawn keys
(master entropy, spawn key = trial index), so adding trials never perturbs
earlier ones.  Traces serialize to a three-section text format
([config] [iterations] [estimator]) with complex matrices written as
interleaved real/imaginary decimals at 17 significant digits; trial tables
serialize to CSV with a fixed header.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .qcore import Rng

CSV_HEADER = ["scheme", "d", "r", "N", "trial", "seed", "terminal_count",
              "total_outcomes", "fidelity", "reason"]


class TraceParseError(ValueError):
    """Malformed trace file; the message names the offending section or line."""


# ---------------------------------------------------------------------------
# simulated data


def multinomial_sample(probabilities, n, rng: Rng = None) -> np.ndarray:
    """Relative frequencies of n categorical draws from the distribution;
    n = inf (or None) returns the probabilities exactly."""
    p = np.asarray(probabilities, dtype=float)
    if abs(p.sum() - 1.0) > 1e-9 or np.any(p < -1e-12):
        raise ValueError("probabilities must form a distribution")
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    if n is None or not np.isfinite(n):
        return p
    n = int(n)
    if n < 1:
        raise ValueError("need at least one copy")
    counts = (rng or Rng(0)).multinomial(n, p)
    return counts / n


# ---------------------------------------------------------------------------
# trial batches


@dataclass
class ExperimentSpec:
    config: object  # SchemeConfig; per-trial seeds override its seed field
    trials: int = 1
    out_dir: str = None
    write_traces: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("need at least one trial")

    def trial_seed(self, trial: int) -> int:
        ss = np.random.SeedSequence(entropy=self.config.seed, spawn_key=(trial,))
        words = ss.generate_state(2)
        return int(words[0]) << 32 | int(words[1])


@dataclass
class TrialRow:
    scheme: str
    d: int
    r: int
    copies: float
    trial: int
    seed: int
    terminal_count: int
    total_outcomes: int
    fidelity: float
    reason: str

    def as_csv(self) -> list:
        return [self.scheme, str(self.d), str(self.r), _fmt_copies(self.copies),
                str(self.trial), str(self.seed), str(self.terminal_count),
                str(self.total_outcomes), repr(float(self.fidelity)), self.reason]


@dataclass
class AggregateResult:
    rows: list
    traces: list = field(default_factory=list)

    def _values(self, attr):
        return np.array([getattr(r, attr) for r in self.rows
                         if not r.reason.startswith("error")], dtype=float)

    @property
    def mean_terminal_count(self) -> float:
        return float(np.mean(self._values("terminal_count")))

    @property
    def std_terminal_count(self) -> float:
        return float(np.std(self._values("terminal_count")))

    @property
    def mean_fidelity(self) -> float:
        return float(np.mean(self._values("fidelity")))

    @property
    def std_fidelity(self) -> float:
        return float(np.std(self._values("fidelity")))


def _run_one_trial(args):
    from . import schemes  # deferred: schemes imports this module

    config, trial, seed = args
    cfg = replace(config, seed=seed)
    trace = schemes.run_scheme(cfg)
    row = TrialRow(config.scheme, config.d, config.r, config.copies, trial,
                   seed, trace.terminal_count, trace.total_outcomes,
                   trace.final_fidelity, trace.reason)
    return row, trace


def run_experiment(spec: ExperimentSpec) -> AggregateResult:
    """Run the configured trials (concurrently when jobs > 1), collect rows
    in trial order, and write the CSV and optional trace files."""
    tasks = [(spec.config, t, spec.trial_seed(t)) for t in range(spec.trials)]
    rows, traces = [], []
    if spec.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            results = list(pool.map(_run_one_trial, tasks))
    else:
        results = []
        for task in tasks:
            try:
                results.append(_run_one_trial(task))
            except Exception as exc:  # record the failure, keep going
                cfg, trial, seed = task
                results.append((TrialRow(
                    cfg.scheme, cfg.d, cfg.r, cfg.copies, trial, seed, 0, 0,
                    float("nan"), "error:%s" % type(exc).__name__), None))
    for row, trace in results:
        rows.append(row)
        traces.append(trace)
    agg = AggregateResult(rows, traces)
    if spec.out_dir:
        os.makedirs(spec.out_dir, exist_ok=True)
        write_csv(os.path.join(spec.out_dir, "%s_trials.csv" % spec.config.scheme), rows)
        if spec.write_traces:
            for row, trace in zip(rows, traces):
                if trace is not None:
                    write_trace(trace, os.path.join(
                        spec.out_dir, "%s_trial%d.trace" % (spec.config.scheme, row.trial)))
    return agg


def write_csv(path: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(r.as_csv())


def read_csv(path: str) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise TraceParseError("unexpected CSV header %r" % header)
        rows = []
        for rec in reader:
            rows.append(TrialRow(
                rec[0], int(rec[1]), int(rec[2]), _parse_copies(rec[3]),
                int(rec[4]), int(rec[5]), int(rec[6]), int(rec[7]),
                float(rec[8]), rec[9]))
    return rows


def _fmt_copies(copies) -> str:
    return "inf" if not np.isfinite(copies) else str(int(copies))


def _parse_copies(text: str):
    return np.inf if text == "inf" else float(text)


# ---------------------------------------------------------------------------
# trace serialization


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_trace(trace, path: str) -> None:
    """Three-section text dump of a scheme trace; lossless for the config,
    iteration table, and estimator to 17 significant digits."""
    cfg = trace.config
    lines = ["[config]"]
    lines.append("scheme=%s" % cfg.scheme)
    lines.append("d=%d" % cfg.d)
    lines.append("r=%d" % cfg.r)
    lines.append("copies=%s" % _fmt_copies(cfg.copies))
    lines.append("epsilon=%s" % _fmt(cfg.epsilon))
    lines.append("budget=%d" % cfg.iteration_budget)
    lines.append("seed=%d" % cfg.seed)
    lines.append("local_dims=%s" % (",".join(str(x) for x in cfg.local_dims)
                                    if cfg.local_dims else ""))
    lines.append("mode=%s" % cfg.mode)
    lines.append("n_outcomes=%s" % ("" if cfg.n_outcomes is None else cfg.n_outcomes))
    lines.append("terminal_count=%d" % trace.terminal_count)
    lines.append("total_outcomes=%d" % trace.total_outcomes)
    lines.append("reason=%s" % trace.reason)
    lines.append("[iterations]")
    for it in trace.iterations:
        lines.append("|".join([str(it.index), it.setting, _fmt(it.s_cvx_raw),
                               _fmt(it.s_cvx_norm), _fmt(it.fidelity),
                               _fmt(it.wall_time)]))
    lines.append("[estimator]")
    blocks = trace.estimator if isinstance(trace.estimator, list) else [trace.estimator]
    lines.append("blocks=%d" % len(blocks))
    for blk in blocks:
        m = np.asarray(blk, dtype=complex)
        lines.append("dims=%d %d" % m.shape)
        for row in m:
            parts = []
            for z in row:
                parts.extend([_fmt(z.real), _fmt(z.imag)])
            lines.append(" ".join(parts))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path: str):
    from .schemes import IterationRecord, SchemeConfig, SchemeTrace

    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    sections = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            raise TraceParseError("line %d appears before any section" % lineno)
        else:
            sections[current].append((lineno, line))
    for required in ("config", "iterations", "estimator"):
        if required not in sections:
            raise TraceParseError("missing section [%s]" % required)

    kv = {}
    for lineno, line in sections["config"]:
        if "=" not in line:
            raise TraceParseError("line %d: expected key=value in [config]" % lineno)
        k, v = line.split("=", 1)
        kv[k] = v
    try:
        cfg = SchemeConfig(
            scheme=kv["scheme"], d=int(kv["d"]), r=int(kv["r"]),
            copies=_parse_copies(kv["copies"]), epsilon=float(kv["epsilon"]),
            budget=int(kv["budget"]), seed=int(kv["seed"]),
            local_dims=tuple(int(x) for x in kv["local_dims"].split(","))
            if kv["local_dims"] else None,
            mode=kv["mode"],
            n_outcomes=int(kv["n_outcomes"]) if kv["n_outcomes"] else None)
    except KeyError as exc:
        raise TraceParseError("[config] missing key %s" % exc)

    iters = []
    for lineno, line in sections["iterations"]:
        parts = line.split("|")
        if len(parts) != 6:
            raise TraceParseError("line %d: expected 6 fields in [iterations]" % lineno)
        iters.append(IterationRecord(int(parts[0]), parts[1], float(parts[2]),
                                     float(parts[3]), float(parts[4]),
                                     float(parts[5])))

    est_lines = [line for _, line in sections["estimator"]]
    if not est_lines or not est_lines[0].startswith("blocks="):
        raise TraceParseError("[estimator] must start with a blocks count")
    n_blocks = int(est_lines[0].split("=", 1)[1])
    blocks = []
    pos = 1
    for _ in range(n_blocks):
        if pos >= len(est_lines) or not est_lines[pos].startswith("dims="):
            raise TraceParseError("[estimator] block missing dims header")
        rows_n, cols_n = (int(x) for x in est_lines[pos].split("=", 1)[1].split())
        pos += 1
        m = np.zeros((rows_n, cols_n), dtype=complex)
        for i in range(rows_n):
            vals = [float(x) for x in est_lines[pos].split()]
            if len(vals) != 2 * cols_n:
                raise TraceParseError("[estimator] row with wrong entry count")
            m[i] = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
            pos += 1
        blocks.append(m)

    trace = SchemeTrace(cfg, iters, int(kv["terminal_count"]),
                        int(kv["total_outcomes"]),
                        blocks if n_blocks > 1 else blocks[0], kv["reason"])
    return trace
