"""Command-line front end.

Every output begins with ``#`` metadata lines (package version, resolved
configuration, seed).  The worker count is left out of the header because
it never changes results.  Exit status: 0 on success, 2 on a parameter
error, 3 when a diagnostic's assertion fails.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from . import analytics as A
from . import coupling as C
from . import experiments as X
from . import oracle as O
from .engine import ParameterError, ProcessParams, RngStream, run_to_dispersion

EXIT_OK, EXIT_PARAM, EXIT_DIAGNOSTIC = 0, 2, 3
TRAJECTORY_TRIAL_LIMIT = 1000
SIMULATE_FIELDS = ("trial", "seed", "stream", "n", "m", "eps", "dispersion_time", "timed_out")
SWEEP_FIELDS = ("n", "m", "eps", "regime", "trials", "q05", "q25", "q50", "q75", "q95",
                "mean", "se", "timeouts", "predicted_scale")

SUBCOMMANDS = ("simulate", "sweep", "oracle", "branching", "couple", "crossings",
               "conjecture", "predict")


def _int_list(text: str) -> list[int]:
    return [int(float(x)) for x in str(text).split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


# option name -> (converter, default)
OPTIONS: dict = {
    "n": (int, None),
    "m": (int, None),
    "eps": (float, None),
    "trials": (int, 1000),
    "seed": (int, 0),
    "max_steps": (int, None),
    "threads": (int, 1),
    "out_path": (str, None),
    "format": (str, "csv"),
    "A": (_float_list, [1.0]),
    "k_max": (int, 100),
    "j_list": (_int_list, [1, 2, 3, 5]),
    "m1": (int, None),
    "m2": (int, None),
    "delta": (float, 1e-3),
    "coupling_delta": (float, 0.05),
    "u0": (int, None),
    "t": (int, 1),
    "side": (str, "upper"),
    "t_max": (int, 20),
    "table": (str, "tail"),
    "n_list": (_int_list, None),
    "eps_list": (_float_list, [0.0]),
    "entry_u": (int, None),
    "annotate": (int, 0),
    "record_trajectory": (str, None),
}


@dataclass
class RunConfig:
    """Resolved options of one invocation.  ``m`` is always set once ``n`` is."""

    subcommand: str
    values: dict
    eps_rounding: Optional[str] = None
    sources: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def params(self) -> ProcessParams:
        if self.n is None or self.m is None:
            raise ParameterError(f"{self.subcommand} needs --n and one of --m / --eps")
        return ProcessParams(self.n, self.m)


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ParameterError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "out":
            key = "out_path"
        if key not in OPTIONS:
            raise ParameterError(f"{path}:{no}: unknown key {key!r}")
        out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dispersion", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        for key in OPTIONS:
            flag = "--" + key.replace("_", "-")
            dest = key
            if key == "out_path":
                p.add_argument("--out", dest=dest, default=argparse.SUPPRESS)
                continue
            p.add_argument(flag, dest=dest, default=argparse.SUPPRESS)
    return parser


def parse_config(argv: Optional[list] = None) -> RunConfig:
    """Flags override config-file entries, which override built-in defaults."""
    ns = vars(build_parser().parse_args(argv))
    sub = ns.pop("subcommand")
    cfg_path = ns.pop("config", None)
    raw = read_config_file(cfg_path) if cfg_path else {}
    sources = {k: "config" for k in raw}
    for k, v in ns.items():
        raw[k] = v
        sources[k] = "flag"
    values = {}
    for key, (conv, default) in OPTIONS.items():
        if key in raw:
            try:
                values[key] = conv(raw[key])
            except (TypeError, ValueError) as exc:
                raise ParameterError(f"bad value for {key}: {raw[key]!r}") from exc
        else:
            values[key] = default
            sources.setdefault(key, "default")
    if values["m"] is not None and values["eps"] is not None:
        raise ParameterError("--m and --eps are mutually exclusive")
    rounding = None
    if values["eps"] is not None and sub != "branching":
        if values["n"] is None:
            raise ParameterError("--eps needs --n")
        exact = (1.0 + values["eps"]) * values["n"] / 2.0
        values["m"] = ProcessParams.from_eps(values["n"], values["eps"]).m
        rounding = f"m = round_half_up((1 + {values['eps']!r}) * {values['n']} / 2) = round_half_up({exact!r}) = {values['m']}"
    if values["format"] not in ("csv", "jsonl"):
        raise ParameterError("--format must be csv or jsonl")
    if values["threads"] < 1:
        raise ParameterError("--threads must be >= 1")
    return RunConfig(sub, values, rounding, sources)


# ---------------------------------------------------------------------------
# output helpers


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def header_lines(cfg: RunConfig) -> list[str]:
    lines = [f"# dispersion {__version__}", f"# subcommand: {cfg.subcommand}", f"# seed: {cfg.seed}"]
    for key in OPTIONS:
        if key in ("threads", "out_path"):
            continue
        val = cfg.values[key]
        if isinstance(val, list):
            val = ",".join(_fmt(v) for v in val)
        lines.append(f"# {key} = {_fmt(val) if val is not None else 'none'}")
    if cfg.eps_rounding:
        lines.append(f"# {cfg.eps_rounding}")
    return lines


@contextmanager
def _open_out(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


class Writer:
    """Header, then rows as CSV or JSON lines."""

    def __init__(self, fh, cfg: RunConfig, fields):
        self.fh, self.fields, self.jsonl = fh, tuple(fields), cfg.format == "jsonl"
        for line in header_lines(cfg):
            fh.write(line + "\n")
        if not self.jsonl:
            fh.write(",".join(self.fields) + "\n")

    def comment(self, text: str) -> None:
        self.fh.write(f"# {text}\n")

    def row(self, values) -> None:
        if self.jsonl:
            obj = {}
            for k, v in zip(self.fields, values):
                if isinstance(v, np.integer):
                    v = int(v)
                elif isinstance(v, np.floating):
                    v = float(v)
                if isinstance(v, float) and not math.isfinite(v):
                    v = repr(v)
                obj[k] = v
            self.fh.write(json.dumps(obj) + "\n")
        else:
            self.fh.write(",".join(_fmt(v) for v in values) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: RunConfig, fh) -> int:
    params = cfg.params()
    if cfg.record_trajectory and cfg.trials > TRAJECTORY_TRIAL_LIMIT:
        raise ParameterError(f"--record-trajectory allows at most {TRAJECTORY_TRIAL_LIMIT} trials")
    result = X.run_campaign(params, cfg.trials, cfg.seed, cfg.max_steps,
                            record_trajectories=bool(cfg.record_trajectory),
                            threads=cfg.threads)
    summary, trajs = result if cfg.record_trajectory else (result, None)
    w = Writer(fh, cfg, SIMULATE_FIELDS)
    eps = params.eps
    for i, t in enumerate(summary.times.tolist()):
        timed_out = t < 0
        w.row((i, cfg.seed, i, params.n, params.m, eps, None if timed_out else t, timed_out))
    if trajs is not None:
        with open(cfg.record_trajectory, "w", encoding="utf-8", newline="\n") as tf:
            for line in header_lines(cfg):
                tf.write(line + "\n")
            tf.write("trial,t,u\n")
            for i, tr in enumerate(trajs):
                for t, u in tr.pairs():
                    tf.write(f"{i},{t},{u}\n")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, fh) -> int:
    if not cfg.n_list:
        raise ParameterError("sweep needs --n-list")
    grid = [ProcessParams.from_eps(n, e) for e in cfg.eps_list for n in cfg.n_list]
    res = X.scaling_sweep(grid, cfg.trials, cfg.seed, cfg.max_steps, cfg.threads)
    w = Writer(fh, cfg, SWEEP_FIELDS)
    for s in res.rows:
        p = s.params
        qs = [s.quantiles[q] for q in X.QUANTILE_LEVELS]
        w.row((p.n, p.m, p.eps, str(A.classify_regime(p)), s.trials, *qs,
               s.mean, s.se, s.timeout_count, A.predicted_scale(p)))
    w.comment(f"critical_slope = {res.diagnostics['critical_slope']!r}")
    w.comment(f"critical_ratios = {res.diagnostics['critical_ratios']!r}")
    for e, v in res.diagnostics["supercritical"].items():
        w.comment(f"supercritical eps={e!r} slope = {v['slope']!r} censored = {v['censored']}")
    for e, v in res.diagnostics["subcritical_ratios"].items():
        w.comment(f"subcritical eps={e!r} ratios = {v!r}")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, fh) -> int:
    params = cfg.params()
    kernel = O.exact_kernel(params)
    mean = O.exact_expected_time(params, kernel)
    if cfg.table == "tail":
        w = Writer(fh, cfg, ("t", "tail"))
        w.comment(f"expected_time = {mean!r}")
        for t, v in enumerate(O.exact_tail(params, cfg.t_max, kernel).tolist()):
            w.row((t, v))
    elif cfg.table == "kernel":
        w = Writer(fh, cfg, ("u", "v", "p"))
        w.comment(f"expected_time = {mean!r}")
        for u in range(params.m + 1):
            for v in range(params.m + 1):
                if kernel.p[u, v] != 0.0:
                    w.row((u, v, float(kernel.p[u, v])))
    else:
        raise ParameterError("--table must be tail or kernel")
    return EXIT_OK


def cmd_branching(cfg: RunConfig, fh) -> int:
    eps = 0.0 if cfg.eps is None else cfg.eps
    curve = A.gw_survival_exact(eps, cfg.k_max)
    w = Writer(fh, cfg, ("k", "x", "lower", "upper"))
    w.comment(f"survival_limit = {A.tree_survival_probability(eps)!r}")
    for k in range(curve.k_max + 1):
        w.row((k, float(curve.xs[k]), float(curve.lower[k]), float(curve.upper[k])))
    return EXIT_OK


def cmd_couple(cfg: RunConfig, fh) -> int:
    params = cfg.params()
    w = Writer(fh, cfg, ("side", "t", "u0", "max_violation", "dkw_radius", "verdict"))
    if cfg.side == "replacement":
        u = params.m if cfg.u0 is None else cfg.u0
        un, dom = C.replacement_batch(params, u, cfg.trials, cfg.seed)
        bad = int(np.count_nonzero(un > dom))
        w.comment(f"pathwise violations = {bad} of {cfg.trials}")
        w.comment(f"mean dominator = {float(dom.mean())!r}")
        return EXIT_DIAGNOSTIC if bad else EXIT_OK
    u0 = cfg.u0 if cfg.u0 is not None else max(1, params.n // 100)
    if cfg.side == "upper":
        rep = C.upper_coupling_check(params, u0, cfg.t, cfg.trials, cfg.seed, cfg.delta)
    elif cfg.side == "lower":
        rep = C.lower_coupling_check(params, u0, cfg.t, cfg.trials, cfg.seed,
                                     cfg.coupling_delta, cfg.delta)
    else:
        raise ParameterError("--side must be upper, lower or replacement")
    w.row((cfg.side, cfg.t, u0, rep.max_violation, rep.dkw_radius, str(rep.verdict)))
    return EXIT_DIAGNOSTIC if rep.verdict is C.Verdict.VIOLATED else EXIT_OK


def cmd_crossings(cfg: RunConfig, fh) -> int:
    params = cfg.params()
    w = Writer(fh, cfg, ("j", "included", "excluded", "hits", "empirical", "ci_low",
                         "ci_high", "bound", "ok", "vacuous"))
    rows = X.traversal_diagnostics(params, cfg.trials, cfg.seed, cfg.j_list, cfg.max_steps,
                                   entry_u=cfg.entry_u, check=False)
    for r in rows:
        w.row((r.j, r.included, r.excluded, r.hits, r.empirical, r.ci_low, r.ci_high,
               r.bound, r.ok, r.vacuous))
    interleave_ok = True
    for i in range(cfg.annotate):
        _, traj = run_to_dispersion(params, RngStream(cfg.seed, i), cfg.max_steps, record=True)
        ann = X.annotate_crossings(traj)
        interleave_ok &= ann.interleaved()
        w.comment(f"trial {i}: tau_l={ann.tau_l[:20]} tau_u={ann.tau_u[:20]} "
                  f"X={ann.x_count} A={ann.a_event_holds}")
    if not all(r.ok for r in rows) or not interleave_ok:
        return EXIT_DIAGNOSTIC
    return EXIT_OK


def cmd_conjecture(cfg: RunConfig, fh) -> int:
    if cfg.n is None or cfg.m1 is None or cfg.m2 is None:
        raise ParameterError("conjecture needs --n, --m1 and --m2")
    probe = X.conjecture_probe(cfg.n, cfg.m1, cfg.m2, cfg.trials, cfg.seed, cfg.max_steps,
                               cfg.delta, cfg.threads)
    w = Writer(fh, cfg, ("label", "n", "m1", "m2", "max_violation", "dkw_radius", "verdict"))
    r = probe.report
    w.row((probe.label, probe.n, probe.m1, probe.m2, r.max_violation, r.dkw_radius, str(r.verdict)))
    return EXIT_OK


def cmd_predict(cfg: RunConfig, fh) -> int:
    params = cfg.params()
    w = Writer(fh, cfg, ("regime", "predicted_scale", "side", "A", "threshold",
                         "log_threshold", "bound"))
    regime, scale = A.classify_regime(params), A.predicted_scale(params)
    for a in cfg.A:
        for th in A.tail_thresholds(params, a):
            w.row((str(regime), scale, th.side.value, a, th.threshold, th.log_threshold, th.bound))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
    "branching": cmd_branching,
    "couple": cmd_couple,
    "crossings": cmd_crossings,
    "conjecture": cmd_conjecture,
    "predict": cmd_predict,
}


def dispatch(cfg: RunConfig) -> int:
    try:
        with _open_out(cfg.out_path) as fh:
            return COMMANDS[cfg.subcommand](cfg, fh)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except X.DiagnosticFailure as exc:
        print(f"diagnostic failed: {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTIC


def main(argv: Optional[list] = None) -> int:
    try:
        cfg = parse_config(argv)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
