"""Command-line experiment driver.

Every subcommand reads an optional JSON config, writes JSON/CSV outputs to
``--out`` and a ``manifest.json`` with hashes of everything it wrote.
Exit codes: 0 pass, 1 check failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import logging
import os
import sys
import time
import zlib
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, checks, linform, manifold, ode, sync
from .errors import SyncStabError
from .model import check_hypotheses, model_from_config

log = logging.getLogger("syncstab")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

_FOURIER = {
    "type": "object",
    "properties": {"fourier": {"type": "array", "items": {"type": "array", "minItems": 2,
                                                          "maxItems": 3}}},
    "required": ["fourier"],
    "additionalProperties": False,
}
_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_MATRIX = {"type": "array", "items": _VECTOR}

MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "N": {"type": "integer", "minimum": 1},
        "family": {"enum": ["winfree", "custom-trig"]},
        "omega": {"type": "number"},
        "kappa": {"type": "number"},
        "influence": _FOURIER,
        "response": _FOURIER,
        "perturbation": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["zero", "trig-diag-periodic", "random-trig"]},
                "r": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "one_periodic": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
    },
    "required": ["N"],
    "additionalProperties": False,
}

LINEAR_SCHEMA = {
    "type": "object",
    "properties": {
        "N": {"type": "integer", "minimum": 2},
        "b": _FOURIER,
        "a": {"oneOf": [_FOURIER, {"type": "array", "items": _FOURIER}]},
        "zeta": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["zero", "constant", "trig-periodic", "random-trig",
                                  "normalizing-trig"]},
                "D": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "matrix": _MATRIX, "cos": _MATRIX, "sin": _MATRIX, "const": _MATRIX,
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "t_prime": {"type": "number"},
    },
    "required": ["N", "b", "a"],
    "additionalProperties": False,
}

INTEGRATOR_SCHEMA = {
    "type": "object",
    "properties": {
        "method": {"enum": ["rk45-adaptive", "rk4-fixed"]},
        "step": {"type": "number", "exclusiveMinimum": 0},
        "abs_tol": {"type": "number", "exclusiveMinimum": 0},
        "rel_tol": {"type": "number", "exclusiveMinimum": 0},
        "max_steps": {"type": "integer", "minimum": 1},
        "max_step": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}


def _which(props):
    return {"type": "object", "properties": props, "additionalProperties": False}


CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "model": MODEL_SCHEMA,
        "linear": LINEAR_SCHEMA,
        "run": {
            "type": "object",
            "properties": {
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "integrator": INTEGRATOR_SCHEMA,
                "seed": {"type": "integer", "minimum": 0},
                "output_dir": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "which": {
            "type": "object",
            "properties": {
                "simulate": _which({"X0": _VECTOR, "D_bound": {"type": "number"},
                                    "samples_per_unit": {"type": "integer", "minimum": 1}}),
                "linear-decompose": _which({"Y": _VECTOR,
                                            "mode": {"enum": ["general", "normalizing"]},
                                            "s_end": {"type": "number"},
                                            "beta": {"type": "number"}}),
                "psi": _which({"Y": _VECTOR}),
                "delta": _which({"beta_fraction": {"type": "number"}, "D": {"type": "number"},
                                 "L": {"type": "number"},
                                 "samples": {"type": "integer", "minimum": 4}}),
                "locked-orbit": _which({"X_guess": _VECTOR}),
                "stable-manifold": _which({"n_directions": {"type": "integer", "minimum": 1},
                                           "xi_norm": {"type": "number"},
                                           "xi": _MATRIX,
                                           "steps": {"type": "integer", "minimum": 1}}),
                "contraction": _which({"X": _VECTOR, "Y": _VECTOR,
                                       "strobe_period": {"type": "number"}}),
                "report": _which({"profile": {"enum": ["full", "quick"]},
                                  "sections": {"type": "array",
                                               "items": {"enum": list(checks.SECTIONS)}}}),
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULT_MODEL = {"N": 5, "family": "winfree", "omega": 1.0, "kappa": 0.05}
DEFAULT_LINEAR = {"N": 3, "b": {"fourier": [["const", -1.0]]},
                  "a": {"fourier": [["const", 1.0 / 3.0]]}, "zeta": {"kind": "zero"}}


class ConfigError(Exception):
    pass


def load_config(path):
    """Read and validate a config; bare model or linear-system documents are wrapped."""
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if not ({"model", "linear", "run", "which"} & doc.keys()):
        doc = {"linear": doc} if "b" in doc else {"model": doc}
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    return doc


def sub_seed(seed, name):
    """Per-section seed from the run seed and a section name."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


class Run:
    """Resolved config plus output bookkeeping for one invocation."""

    def __init__(self, args, cfg):
        self.cfg = cfg
        run = cfg.get("run", {})
        self.seed = args.seed if args.seed is not None else run.get("seed", 0)
        self.horizon = args.horizon if args.horizon is not None else run.get("horizon")
        self.jobs = args.jobs
        out = args.out or run.get("output_dir") or "syncstab-out"
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.integrator = ode.IntegratorConfig(**run.get("integrator", {}))
        self.files = []
        self.checks = {}
        try:
            self.model = model_from_config(cfg.get("model", DEFAULT_MODEL))
            self.linear = linform.system_from_config(cfg.get("linear", DEFAULT_LINEAR))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def which(self, name):
        return self.cfg.get("which", {}).get(name, {})

    def write_json(self, name, obj):
        path = self.out / name
        path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
        self.files.append(name)

    def wrote(self, name):
        self.files.append(name)
        return self.out / name

    def manifest(self, command, wall):
        canon = json.dumps({"command": command, "config": self.cfg, "seed": self.seed,
                            "horizon": self.horizon}, sort_keys=True)
        inventory = {f: hashlib.sha256((self.out / f).read_bytes()).hexdigest()
                     for f in sorted(set(self.files))}
        doc = {"command": command, "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
               "tool_version": __version__, "wall_time": wall, "checks": self.checks,
               "files": inventory}
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _vector(run, name, key, default):
    v = run.which(name).get(key)
    return np.asarray(default if v is None else v, dtype=float)


# --- subcommands ---------------------------------------------------------

def cmd_check_hypotheses(run):
    rep = check_hypotheses(run.model)
    run.write_json("hypotheses.json", rep.to_dict())
    run.checks = dict(rep.satisfied)
    return all(rep.satisfied.values())


def cmd_simulate(run):
    w = run.which("simulate")
    N = run.model.N
    X0 = _vector(run, "simulate", "X0", 0.01 * np.arange(N))
    T = run.horizon or 100.0
    n = w.get("samples_per_unit", 10)
    grid = np.arange(1, int(n * T)) / n
    traj = sync.flow_with_mean_phase(run.model, X0, float(np.mean(X0)), 0.0, T,
                                     run.integrator, grid)
    xs = ode.Trajectory(traj.times, traj.states[:, :N], traj.derivs[:, :N])
    rep = sync.dispersion_monitor(xs, w.get("D_bound", 0.1))
    ts = np.concatenate([[0.0], grid, [T]])
    st = np.array([traj.at(t) for t in ts])
    header = ["t"] + [f"x{i + 1}" for i in range(N)] + ["mu"]
    ode.write_columns_csv(run.wrote("trajectory.csv"), header, [ts] + list(st.T))
    run.write_json("sync_report.json", rep.to_dict())
    run.checks = {"within_bounds": rep.within_bounds}
    return rep.within_bounds


def cmd_linear_decompose(run):
    w = run.which("linear-decompose")
    sys_ = run.linear
    Y = _vector(run, "linear-decompose", "Y",
                np.random.default_rng(sub_seed(run.seed, "linear.Y")).normal(size=sys_.N))
    try:
        res = linform.decompose(sys_, Y, s_end=w.get("s_end"), mode=w.get("mode", "general"),
                                beta=w.get("beta"), cfg=run.integrator)
    except SyncStabError as exc:
        run.write_json("decomposition.json", {"certified": False, "error": type(exc).__name__,
                                              "message": str(exc)})
        run.checks = {"certified": False}
        return False
    N = sys_.N
    header = (["t"] + [f"neutral_{i + 1}" for i in range(N)]
              + [f"stable_{i + 1}" for i in range(N)] + ["stable_norm"])
    ode.write_columns_csv(run.wrote("decomposition.csv"), header,
                          [res.times] + list(res.neutral_part.T) + list(res.stable_part.T)
                          + [res.stable_norms])
    run.write_json("decomposition.json", res.to_dict())
    run.checks = {"certified": res.certified}
    return res.certified


def cmd_psi(run):
    sys_ = run.linear
    Y = _vector(run, "psi", "Y",
                np.random.default_rng(sub_seed(run.seed, "psi.Y")).normal(size=sys_.N))
    res = linform.psi(sys_, Y, horizon=run.horizon, cfg=run.integrator)
    ode.write_columns_csv(run.wrote("psi.csv"), ["t", "psi_approx"], [res.times, res.approximants])
    run.write_json("psi.json", {"psi": res.value, "Y": Y, "horizon": float(res.times[-1])})
    run.checks = {"converged": True}
    return True


def cmd_delta(run):
    w = run.which("delta")
    sys_ = run.linear
    const = linform.check_Hstab(sys_)
    beta = w.get("beta_fraction", 0.5) * const.alpha
    D = w.get("D", const.D if const.D > 0 else 0.05)
    L = w.get("L", 1.0)
    rep = linform.delta_report(sys_, beta, D, L)
    n = w.get("samples", 64)
    ts = np.arange(n) / n
    vals = [linform.delta_periodic(sys_, beta, D, L, t) for t in ts]
    ode.write_columns_csv(run.wrote("delta.csv"), ["t", "delta"], [ts, vals])
    run.write_json("delta.json", rep.to_dict())
    ok = rep.min_delta > 0 and rep.ode_residual < 1e-8 and rep.periodicity_residual < 1e-10
    run.checks = {"delta_valid": bool(ok), "below_one": rep.below_one}
    return bool(ok and rep.below_one)


def cmd_locked_orbit(run):
    X0 = _vector(run, "locked-orbit", "X_guess", 0.01 * np.arange(run.model.N))
    try:
        orbit = sync.find_locked_orbit(run.model, X0)
    except SyncStabError as exc:
        run.write_json("locked_orbit.json", {"error": type(exc).__name__, "message": str(exc),
                                             "residual": getattr(exc, "residual", None)})
        run.checks = {"locked": False}
        return False
    sync.write_psi_profile_csv(orbit, run.wrote("psi_profile.csv"))
    run.write_json("locked_orbit.json", orbit.to_dict())
    ok = orbit.residual < 1e-9 and orbit.psi_periodicity_residual < 1e-7
    run.checks = {"locked": bool(ok)}
    return bool(ok)


def cmd_stable_manifold(run):
    w = run.which("stable-manifold")
    model = run.model
    T = run.horizon or 40.0
    xi_norm = w.get("xi_norm", 1e-3)
    try:
        orbit = sync.find_locked_orbit(model, 0.01 * np.arange(model.N))
        chart = manifold.build_stable_chart(model, orbit.X_star, steps=w.get("steps", 8))
        if "xi" in w:
            xis = np.asarray(w["xi"], dtype=float)
        else:
            rng = np.random.default_rng(sub_seed(run.seed, "manifold.directions"))
            raw = rng.normal(size=(w.get("n_directions", 5), model.N))
            xis = np.array([chart.project(v) for v in raw])
            xis = xi_norm * xis / np.linalg.norm(xis, axis=1)[:, None]
        ys = chart(xis)
    except SyncStabError as exc:
        run.write_json("stable_manifold.json", {"error": type(exc).__name__,
                                                "message": str(exc)})
        run.checks = {"kernel_contracts": False}
        return False
    manifold.write_chart_csv(xis, ys, run.wrote("chart.csv"))
    rates, khat = [], []
    for k, y in enumerate(ys):
        res = manifold.verify_contraction(model, orbit.X_star, y, T, strobe_period=orbit.period)
        manifold.write_contraction_csv(res, run.wrote(f"contraction_{k + 1}.csv"))
        rates.append(res.fitted_rate)
        khat.append(res.K_hat)
    ctrl = manifold.verify_contraction(model, orbit.X_star, orbit.X_star + xi_norm, T,
                                       strobe_period=orbit.period)
    manifold.write_contraction_csv(ctrl, run.wrote("contraction_translate.csv"))
    lc = manifold.limit_cycle_convergence(model, orbit, ys[0], T)
    kernel_ok = all(r < 0 for r in rates)
    neutral_ok = abs(ctrl.fitted_rate) < 1e-3
    run.write_json("stable_manifold.json", {
        "fitted_rate": rates, "K_hat": khat, "xi_radius": chart.xi_radius,
        "translate_rate": ctrl.fitted_rate, "limit_cycle_rate": lc.fitted_rate,
        "orbit": orbit.to_dict()})
    run.checks = {"kernel_contracts": kernel_ok, "translate_neutral": neutral_ok}
    return kernel_ok and neutral_ok


def cmd_contraction(run):
    w = run.which("contraction")
    N = run.model.N
    X = _vector(run, "contraction", "X", 0.01 * np.arange(N))
    default_Y = X + 1e-3 * np.random.default_rng(sub_seed(run.seed, "contraction.Y")).normal(size=N)
    Y = _vector(run, "contraction", "Y", default_Y)
    if np.array_equal(X, Y):
        raise ConfigError("X and Y must differ")
    res = manifold.verify_contraction(run.model, X, Y, run.horizon or 40.0, cfg=run.integrator,
                                      strobe_period=w.get("strobe_period"))
    manifold.write_contraction_csv(res, run.wrote("contraction.csv"))
    run.write_json("contraction.json", res.to_dict())
    ok = bool(np.isfinite(res.K_hat))
    run.checks = {"finite_K_hat": ok}
    return ok


def _section(args):
    name, seed, profile = args
    return checks.run_section(name, seed, profile)


def cmd_report(run):
    w = run.which("report")
    profile = w.get("profile", "full")
    names = w.get("sections", list(checks.SECTIONS))
    jobs = [(n, sub_seed(run.seed, n), profile) for n in names]
    if run.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(run.jobs) as ex:
            results = list(ex.map(_section, jobs))
    else:
        results = [_section(j) for j in jobs]
    report = {}
    for name, res in zip(names, results):
        log.info("section %s passed=%s", name, res.get("passed"))
        if name == "stable_manifold" and "xis" in res:
            manifold.write_chart_csv(res.pop("xis"), res.pop("ys"), run.wrote("chart.csv"))
            for k, d in enumerate(res["directions"]):
                manifold.write_contraction_csv(d.pop("curve"), run.wrote(f"contraction_{k + 1}.csv"))
        report[name] = res
    run.checks = {n: bool(r["passed"]) for n, r in report.items()}
    run.write_json("report.json", {"profile": profile, "seed": run.seed, "sections": report,
                                   "passed": all(run.checks.values())})
    return all(run.checks.values())


COMMANDS = {
    "check-hypotheses": cmd_check_hypotheses,
    "simulate": cmd_simulate,
    "linear-decompose": cmd_linear_decompose,
    "psi": cmd_psi,
    "delta": cmd_delta,
    "locked-orbit": cmd_locked_orbit,
    "stable-manifold": cmd_stable_manifold,
    "contraction": cmd_contraction,
    "report": cmd_report,
}


def build_parser():
    p = argparse.ArgumentParser(prog="syncstab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config (full, bare model or bare linear system)")
        sp.add_argument("--out", help="output directory (created if missing)")
        sp.add_argument("--seed", type=int, help="run seed; overrides the config")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        sp.add_argument("--horizon", type=float, help="time horizon; overrides the config")
    return p


def main(argv=None):
    level = os.environ.get("SYNCSTAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1 or (args.horizon is not None and not args.horizon > 0):
        print("error: --jobs must be >= 1 and --horizon positive", file=sys.stderr)
        return EXIT_CONFIG
    start = time.perf_counter()
    try:
        run = Run(args, load_config(args.config))
        ok = COMMANDS[args.command](run)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SyncStabError as exc:
        print(f"check failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    run.manifest(args.command, time.perf_counter() - start)
    log.info("%s finished ok=%s", args.command, ok)
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
