"""Command-line front end: ``viana <subcommand> [--key value ...]``.

Every subcommand writes a JSON summary (and CSV tables where relevant) to
the output directory and echoes the JSON summary on standard output.  All
artifacts embed the resolved configuration.  Exit status is 0 on success,
1 on an operational error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import core, observables, partition, returns, tails, tower
from .config import RunConfig, parse_config
from .errors import BudgetExceeded, ConfigError, VianaError

SUBCOMMANDS = ("misiurewicz", "params", "lyapunov", "curve-check", "hyp-tail", "lemmas", "grow",
               "return-tail", "corr", "tails")

# run sizes used when the config leaves them at 0
RUN_DEFAULTS = {
    "lyapunov": {"n": 10_000, "starts": 100},
    "hyp-tail": {"n_max": 400, "samples": 200_000},
    "lemmas": {"samples": 10_000},
    "grow": {"rects": 100},
    "return-tail": {"n_max": 2000, "samples": 100_000},
    "corr": {"n_max": 100, "samples": 100_000},
}

FLAG_ALIASES = {"nmax": "n_max", "n-max": "n_max", "c-prime": "c_prime", "burn-in": "burn_in",
                "eps-max": "eps_max", "bracket-lo": "bracket_lo", "bracket-hi": "bracket_hi"}


# -- output -----------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


_UMASK = os.umask(0)
os.umask(_UMASK)


def _atomic_write(path: str, text: str):
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _with_header(body: str, cfg: RunConfig) -> str:
    """Prefix a CSV table with one ``# config=...`` comment line."""
    line = json.dumps(_jsonable(cfg.as_dict()), sort_keys=True, separators=(",", ":"))
    return f"# config={line}\n" + body


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


class Run:
    """Collects the artifacts of one subcommand and commits them after success."""

    def __init__(self, name: str, cfg: RunConfig):
        self.name = name
        self.cfg = cfg
        self.files: dict[str, str] = {}

    def csv(self, suffix: str, body: str):
        self.files[f"{self.name}{suffix}.csv"] = _with_header(body, self.cfg)

    def json(self, suffix: str, obj):
        self.files[f"{self.name}{suffix}.json"] = dumps(obj)

    def commit(self):
        for fname, text in self.files.items():
            _atomic_write(os.path.join(self.cfg.out, fname), text)


# -- helpers ----------------------------------------------------------------

def _a0(cfg: RunConfig) -> float:
    if cfg.a0 == "auto":
        return core.find_misiurewicz(cfg.m, cfg.k, (cfg.bracket_lo, cfg.bracket_hi))
    return float(cfg.a0)


def _params(cfg: RunConfig) -> core.MapParams:
    return core.make_params(_a0(cfg), cfg.eps, cfg.d, eps_max=cfg.eps_max)


def _return_config(cfg: RunConfig, params: core.MapParams) -> returns.ReturnConfig:
    return returns.ReturnConfig.for_eps(params.eps, cfg.eta, cfg.c, cfg.c_prime, cfg.p0)


# -- subcommands ------------------------------------------------------------

def cmd_misiurewicz(cfg: RunConfig, run: Run) -> dict:
    a0 = core.find_misiurewicz(cfg.m, cfg.k, (cfg.bracket_lo, cfg.bracket_hi))
    return {"a0": a0, "m": cfg.m, "k": cfg.k, "bracket": [cfg.bracket_lo, cfg.bracket_hi],
            "residual": core.misiurewicz_residual(a0, cfg.m, cfg.k),
            "multiplier": core.cycle_multiplier(a0, cfg.m, cfg.k)}


def cmd_params(cfg: RunConfig, run: Run) -> dict:
    a0 = _a0(cfg)
    lo, hi = core.fiber_interval(a0, cfg.eps)
    return {"a0": a0, "eps": cfg.eps, "d": cfg.d, "I": [lo, hi],
            "invariant": core.check_invariance(a0, cfg.eps, (lo, hi))}


def cmd_lyapunov(cfg: RunConfig, run: Run) -> dict:
    params = _params(cfg)
    rng = np.random.default_rng(cfg.seed)
    words, xs = core.random_points(params, rng, cfg.starts)
    rows, skipped_total = [], 0
    for i, (w, x) in enumerate(zip(words, xs)):
        p = core.Point(core.word_to_omega(int(w)), float(x), int(w))
        lb, lf, skipped = core.lyapunov_estimate(params, p, cfg.n)
        rows.append((i, lb, lf, skipped))
        skipped_total += skipped
    lf = np.array([r[2] for r in rows])
    run.csv("", _table(["start", "lambda_base", "lambda_fiber", "skipped"], rows))
    return {"lambda_base": math.log(params.d), "lambda_fiber_mean": float(lf.mean()),
            "lambda_fiber_min": float(lf.min()), "lambda_fiber_max": float(lf.max()),
            "half_log_a0": 0.5 * math.log(params.a0), "starts": cfg.starts, "n": cfg.n,
            "skipped": skipped_total}


def cmd_curve_check(cfg: RunConfig, run: Run) -> dict:
    params = _params(cfg)
    res = partition.check_pushforwards(params, cfg.curves, cfg.pushes, cfg.seed)
    return res.as_dict()


def cmd_hyp_tail(cfg: RunConfig, run: Run) -> dict:
    params = _params(cfg)
    rc = _return_config(cfg, params)
    tail = returns.hyperbolic_tail(params, rc, cfg.n_max, cfg.samples, cfg.seed, cfg.shards, cfg.workers)
    run.csv("", tail.to_csv())
    out = {"n_max": cfg.n_max, "samples": cfg.samples, "sentinels": tail.sentinels,
           "fraction_at_n_max": float(tail.fraction[-1]), "return_config": rc.as_dict()}
    try:
        lo = rc.p0 + (cfg.n_max - rc.p0) // 4
        out["fit"] = tails.fit_stretched_exponential(tail.sequence, lo, cfg.n_max).as_dict()
    except VianaError as exc:
        out["fit"] = None
        out["fit_error"] = str(exc)
    return out


def cmd_lemmas(cfg: RunConfig, run: Run) -> dict:
    params = _params(cfg)
    rc = _return_config(cfg, params)
    rep = returns.verify_expansion_lemmas(params, rc, cfg.samples, cfg.seed, shards=cfg.shards,
                                          workers=cfg.workers)
    return rep.as_dict()


def cmd_grow(cfg: RunConfig, run: Run, dump: bool = False) -> dict:
    params = _params(cfg)
    rng = np.random.default_rng(cfg.seed)
    rows, dumps_ = [], []
    for i in range(cfg.rects):
        rect = tower.random_gentle_rectangle(params, rng, cfg.eta)
        try:
            g = tower.grow_to_fixed_size(params, rect, cfg.budget, eta=cfg.eta, seed=cfg.seed + i)
        except BudgetExceeded as exc:
            g = exc.result
        s = g.summary()
        rows.append((i, s["returned_mass"], s["pending_mass"], s["unresolved_mass"],
                     s["conservation_error"], s["max_time"], s["max_distortion"], s["returned"],
                     s["pending"], s["unresolved"]))
        if dump:
            dumps_.append({"rect": rect.to_dict(), "growth": g.to_dict(params)})
    run.csv("", _table(["rect", "returned_mass", "pending_mass", "unresolved_mass", "conservation_error",
                        "max_time", "max_distortion", "returned", "pending", "unresolved"], rows))
    if dump:
        run.json("-dump", {"config": cfg.as_dict(), "rectangles": dumps_})
    arr = np.array([r[1:7] for r in rows], dtype=float)
    return {"rects": cfg.rects, "budget": cfg.budget,
            "min_returned_mass": float(arr[:, 0].min()), "mean_returned_mass": float(arr[:, 0].mean()),
            "max_unresolved_mass": float(arr[:, 2].max()),
            "max_conservation_error": float(arr[:, 3].max()), "max_time": int(arr[:, 4].max()),
            "max_distortion": float(arr[:, 5].max())}


def cmd_return_tail(cfg: RunConfig, run: Run) -> dict:
    params = _params(cfg)
    rc = _return_config(cfg, params)
    sample = tower.simulate_return_process(params, rc, cfg.samples, cfg.n_max, cfg.seed, shards=cfg.shards,
                                           workers=cfg.workers, budget=cfg.budget)
    rep = tower.return_tail_report(sample, cfg.n_max, 1, delta=cfg.delta)
    run.csv("-records", sample.to_csv())
    run.csv("", rep.tail_csv())
    return {"report": rep.as_dict(), "q": sample.meta["q"], "samples": cfg.samples, "n_max": cfg.n_max,
            "sentinels": int(np.count_nonzero(sample.sentinel))}


def cmd_corr(cfg: RunConfig, run: Run) -> dict:
    params = _params(cfg)
    phi, psi = observables.observable(cfg.phi), observables.observable(cfg.psi)
    if cfg.lag >= 0:
        c = observables.correlation_at(params, phi, psi, cfg.lag, cfg.burn_in, cfg.samples, cfg.seed,
                                       shards=cfg.shards, workers=cfg.workers, batches=cfg.batches)
        return {"phi": phi.name, "psi": psi.name, "n": c.n, "Cn": c.Cn, "stderr": c.stderr}
    prof = observables.decay_profile(params, phi, psi, cfg.n_max, cfg.burn_in, cfg.samples, cfg.seed,
                                     shards=cfg.shards, workers=cfg.workers, batches=cfg.batches)
    run.csv("", prof.to_csv())
    return prof.as_dict()


def tails_reference_sequence(gamma: float, N: int) -> np.ndarray:
    """``a_0 = 0``, ``a_n = exp(-gamma sqrt n)``."""
    a = np.exp(-gamma * np.sqrt(np.arange(N + 1, dtype=np.float64)))
    a[0] = 0.0
    return a


def cmd_tails(cfg: RunConfig, run: Run) -> dict:
    a = tails_reference_sequence(cfg.gamma, cfg.N)
    lem = tails.check_stretched_lemma(a, cfg.gamma, cfg.margin)
    out = lem.as_dict()
    rows_bound = np.full(cfg.N + 1, np.nan)
    if lem.ok:
        bp = tails.BoundParams.choose(lem.D, cfg.gamma)
        rows_bound = tails.theorem_tail_bounds(a, bp, lem)
        out["delta"] = bp.delta
        out["gamma_prime"] = bp.gamma_prime
    u, w = lem.u.values, lem.weights.values
    run.csv("", _table(["n", "u_n", "w_n_u_n", "bound"],
                       ((n, float(u[n]), float(w[n] * u[n]), float(rows_bound[n])) for n in range(cfg.N + 1))))
    return out


COMMANDS = {"misiurewicz": cmd_misiurewicz, "params": cmd_params, "lyapunov": cmd_lyapunov,
            "curve-check": cmd_curve_check, "hyp-tail": cmd_hyp_tail, "lemmas": cmd_lemmas,
            "grow": cmd_grow, "return-tail": cmd_return_tail, "corr": cmd_corr, "tails": cmd_tails}


# -- entry point ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"viana: usage error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="viana", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", metavar="FILE", help="flat key = value configuration file")
    parser.add_argument("--dump", action="store_true", help="grow: also write per-piece JSON")
    for name in RunConfig.__dataclass_fields__:
        flags = [f"--{name}"]
        dashed = name.replace("_", "-")
        if dashed != name:
            flags.append(f"--{dashed}")
        flags += [f"--{a}" for a, target in FLAG_ALIASES.items() if target == name and f"--{a}" not in flags]
        parser.add_argument(*flags, dest=name, metavar="VALUE", default=None)
    return parser


def dispatch(subcommand: str, cfg: RunConfig, *, dump: bool = False, stdout=None) -> int:
    """Run one subcommand; returns the exit status."""
    stdout = sys.stdout if stdout is None else stdout
    cfg = cfg.with_defaults(**RUN_DEFAULTS.get(subcommand, {}))
    run = Run(subcommand, cfg)
    fn = COMMANDS[subcommand]
    result = fn(cfg, run, dump) if subcommand == "grow" else fn(cfg, run)
    summary = {"subcommand": subcommand, "result": result, "config": cfg.as_dict()}
    run.json("", summary)
    run.commit()
    stdout.write(dumps(summary))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("subcommand", "config", "dump")}
    try:
        cfg = parse_config(args.config, flags)
    except (ConfigError, OSError) as exc:
        print(f"viana: usage error: {exc}", file=sys.stderr)
        return 2
    try:
        return dispatch(args.subcommand, cfg, dump=args.dump)
    except VianaError as exc:
        print(f"viana: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
