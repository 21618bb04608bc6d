"""Batch driver: validate -> solve-static -> riccati -> solve-dynamic -> turnpike-report.

Every stage reads its inputs from the output directory and writes its results
back there, so stages can be re-run one at a time. Reports are JSON with sorted
keys and repr floats; particle data is CSV. Nothing time- or path-dependent is
written, so the same config and seed give byte-identical files.

Exit codes: 0 success, 2 config error, 3 hypothesis failure, 4 solver nonconvergence.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dynamics import PMPOptions, hamiltonian_defect, solve_pmp
from .errors import (ConfigError, DegeneracyError, DimensionError, HypothesisFailure, InstabilityError,
                     ModelAssumptionError, NonconvergenceError, RiccatiError)
from .model import build_problem, validate_hypotheses
from .spectral import certify
from .static_kkt import (NewtonOptions, StationaryTriple, eulerian_kkt_residual, solve_stationary,
                         surjectivity_diagnostics)
from .turnpike import turnpike_report

log = logging.getLogger("mfturnpike")

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NONCONVERGENCE = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class SolverConfig:
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    pmp_method: str = "auto"
    pmp_tol: float = 1e-10
    max_sweeps: int = 300
    damping: float = 0.5
    margin: float = 0.05
    window: tuple = (0.10, 0.45)
    hypothesis_samples: int = 20


@dataclass
class ExperimentConfig:
    model: str
    N: int
    d: int
    m: int
    T: float
    K: int
    params: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    static_guess: dict = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = None
    out: str = "out"

    def hash(self):
        """SHA-256 of the canonical config, output directory excluded."""
        body = asdict(self)
        body.pop("out")
        body["solver"]["window"] = list(body["solver"]["window"])
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _need(raw, key, kind, path):
    if key not in raw:
        raise ConfigError(f"{path}: missing field {key!r}")
    val = raw[key]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ConfigError(f"{path}: field {key!r} must be an integer, got {val!r}")
    if kind is float and (isinstance(val, bool) or not isinstance(val, (int, float))):
        raise ConfigError(f"{path}: field {key!r} must be a number, got {val!r}")
    return kind(val)


def parse_config(raw, path="<config>"):
    """Build and validate an ExperimentConfig from a decoded JSON object."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"{path}: unknown fields {extra}")
    solver_raw = raw.get("solver", {})
    sknown = {f.name for f in fields(SolverConfig)}
    if not isinstance(solver_raw, dict) or set(solver_raw) - sknown:
        raise ConfigError(f"{path}: unknown solver fields {sorted(set(solver_raw) - sknown)}")
    solver = SolverConfig(**solver_raw)
    solver.window = tuple(float(w) for w in solver.window)
    cfg = ExperimentConfig(
        model=str(raw.get("model", "")),
        N=_need(raw, "N", int, path), d=_need(raw, "d", int, path), m=_need(raw, "m", int, path),
        T=_need(raw, "T", float, path), K=_need(raw, "K", int, path),
        params=dict(raw.get("params", {})), initial=dict(raw.get("initial", {})),
        static_guess=dict(raw.get("static_guess", {})), solver=solver,
        seed=raw.get("seed"), out=str(raw.get("out", "out")))
    validate_config(cfg, path)
    return cfg


def validate_config(cfg, path="<config>"):
    if not cfg.model:
        raise ConfigError(f"{path}: missing field 'model'")
    for name in ("N", "d", "m"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{path}: {name} must be >= 1")
    if not cfg.T > 0:
        raise ConfigError(f"{path}: T must be positive, got {cfg.T}")
    if cfg.K < 10:
        raise ConfigError(f"{path}: K must be >= 10, got {cfg.K}")
    if not 0 <= cfg.solver.window[0] < cfg.solver.window[1] <= 1:
        raise ConfigError(f"{path}: solver.window must satisfy 0 <= w0 < w1 <= 1")
    if "points" not in cfg.initial and "sampler" not in cfg.initial:
        raise ConfigError(f"{path}: initial needs 'points' or 'sampler'")
    if "sampler" in cfg.initial and cfg.seed is None:
        raise ConfigError(f"{path}: a seed is required when initial.sampler is used")
    if cfg.seed is not None and (isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or cfg.seed < 0):
        raise ConfigError(f"{path}: seed must be a non-negative integer")
    problem = build_problem(cfg.model, cfg.params)
    if (problem.d, problem.m) != (cfg.d, cfg.m):
        raise ConfigError(f"{path}: model has d={problem.d}, m={problem.m} but config says "
                          f"d={cfg.d}, m={cfg.m}")
    return problem


def load_config(path, seed=None):
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if seed is not None:
        raw["seed"] = seed
    return parse_config(raw, str(path))


def initial_ensemble(cfg):
    init = cfg.initial
    if "points" in init:
        X0 = np.asarray(init["points"], dtype=float).reshape(-1, cfg.d) if init["points"] else None
        if X0 is None or X0.shape != (cfg.N, cfg.d):
            raise ConfigError(f"initial.points must hold N={cfg.N} rows of d={cfg.d} entries")
        return X0
    rng = np.random.default_rng(cfg.seed)
    kind = init["sampler"]
    if kind == "gaussian":
        mean = np.broadcast_to(np.asarray(init.get("mean", 0.0), dtype=float), (cfg.d,))
        std = np.broadcast_to(np.asarray(init.get("std", 1.0), dtype=float), (cfg.d,))
        return mean + std * rng.standard_normal((cfg.N, cfg.d))
    if kind == "uniform":
        low = np.broadcast_to(np.asarray(init.get("low", -1.0), dtype=float), (cfg.d,))
        high = np.broadcast_to(np.asarray(init.get("high", 1.0), dtype=float), (cfg.d,))
        return low + (high - low) * rng.random((cfg.N, cfg.d))
    raise ConfigError(f"initial.sampler must be 'gaussian' or 'uniform', got {kind!r}")


def static_guess(cfg, X0):
    g = cfg.static_guess
    X = X0 if g.get("X") == "initial" else np.asarray(g.get("X", np.zeros((cfg.N, cfg.d))), dtype=float)
    Psi = np.asarray(g.get("Psi", np.zeros((cfg.N, cfg.d))), dtype=float)
    U = np.asarray(g.get("U", np.zeros((cfg.N, cfg.m))), dtype=float)
    try:
        return X.reshape(cfg.N, cfg.d), Psi.reshape(cfg.N, cfg.d), U.reshape(cfg.N, cfg.m)
    except ValueError as exc:
        raise ConfigError(f"static_guess has the wrong shape: {exc}") from exc


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def write_json(path, payload):
    Path(path).write_text(json.dumps(_clean(payload), sort_keys=True, indent=2, allow_nan=False) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if not isinstance(x, (int, np.integer)) else int(x) for x in row])


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = np.array([[float(x) for x in row] for row in r], dtype=float)
    return header, rows.reshape(-1, len(header))


def _names(prefix, k):
    return [f"{prefix}{i + 1}" for i in range(k)]


def write_triple(path, triple):
    d, m = triple.X.shape[1], triple.U.shape[1]
    write_csv(path, _names("x", d) + _names("p", d) + _names("u", m), triple.joint())


def read_triple(path, d, m):
    _, rows = read_csv(path)
    return StationaryTriple(rows[:, :d].copy(), rows[:, d:2 * d].copy(), rows[:, 2 * d:2 * d + m].copy())


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

class _Certificate:
    """The parts of a turnpike certificate the dynamic stage needs, read back from JSON."""

    def __init__(self, payload):
        self.P = np.asarray(payload["P"], dtype=float)
        self.E = np.asarray(payload["E"], dtype=float)
        self.beta = float(payload["beta"])


def stage_validate(cfg, out):
    problem = validate_config(cfg)
    rep = validate_hypotheses(problem, samples=cfg.solver.hypothesis_samples, seed=cfg.seed or 0)
    write_json(out / "validate.json", {"config_hash": cfg.hash(), "model": cfg.model,
                                       "passed": rep.passed, "failures": rep.failures(),
                                       "report": rep.to_dict()})
    if not rep.passed:
        raise HypothesisFailure("model hypotheses fail: " + "; ".join(rep.failures()), rep)
    return rep


def stage_static(cfg, out):
    problem = validate_config(cfg)
    X0 = initial_ensemble(cfg)
    write_csv(out / "initial.csv", _names("x", cfg.d), X0)
    opts = NewtonOptions(tol=cfg.solver.newton_tol, max_iter=cfg.solver.newton_max_iter, seed=cfg.seed or 0)
    triple = solve_stationary(problem, static_guess(cfg, X0), opts)
    write_triple(out / "stationary.csv", triple)
    kkt = eulerian_kkt_residual(problem, triple)
    surj = surjectivity_diagnostics(problem, triple.X, triple.U)
    write_json(out / "static.json", {
        "config_hash": cfg.hash(), "residual": triple.residual, "iterations": triple.iterations,
        "trace": triple.trace,
        "eulerian_kkt": {"multiplier": kkt.multiplier, "state_costate": kkt.state_costate,
                         "hamiltonian": kkt.hamiltonian, "feasibility": kkt.feasibility},
        "surjectivity": {"pointwise_min": surj.pointwise_min, "lifted_min": surj.lifted_min,
                         "passed": surj.passed}})
    return triple


def stage_riccati(cfg, out):
    problem = validate_config(cfg)
    triple = read_triple(out / "stationary.csv", cfg.d, cfg.m)
    try:
        cert = certify(problem, triple, margin=cfg.solver.margin)
    except HypothesisFailure as exc:
        report = exc.report.to_dict() if hasattr(exc.report, "to_dict") else {}
        write_json(out / "certificate.json", {"config_hash": cfg.hash(), "passed": False,
                                              "failure": str(exc), "hypotheses": report})
        raise
    write_json(out / "certificate.json", {"config_hash": cfg.hash(), "passed": True, **cert.to_dict()})
    return cert


def stage_dynamic(cfg, out):
    problem = validate_config(cfg)
    triple = read_triple(out / "stationary.csv", cfg.d, cfg.m)
    cert_payload = read_json(out / "certificate.json")
    if not cert_payload.get("passed", False):
        raise HypothesisFailure("certificate stage reported a hypothesis failure")
    cert = _Certificate(cert_payload)
    _, X0 = read_csv(out / "initial.csv")
    opts = PMPOptions(method=cfg.solver.pmp_method, tol=cfg.solver.pmp_tol,
                      max_sweeps=cfg.solver.max_sweeps, theta=cfg.solver.damping)
    traj = solve_pmp(problem, X0, cfg.T, cfg.K, opts, triple=triple, certificate=cert)
    rows = []
    for k, t in enumerate(traj.t):
        for i in range(cfg.N):
            rows.append([t, i, *traj.X[k, i], *traj.Psi[k, i], *traj.U[k, i]])
    write_csv(out / "trajectory.csv", ["t", "atom"] + _names("x", cfg.d) + _names("p", cfg.d)
              + _names("u", cfg.m), rows)
    write_json(out / "dynamic.json", {
        "config_hash": cfg.hash(), "method": traj.method, "iterations": traj.iterations,
        "trace": traj.trace, "cost": traj.cost, "pmp_residual": traj.pmp_residual,
        "control_residual": traj.control_residual,
        "transversality_residual": traj.transversality_residual,
        "hamiltonian_defect": hamiltonian_defect(problem, traj)})
    return traj


def read_trajectory(path, N, d, m):
    from .dynamics import Trajectory

    _, rows = read_csv(path)
    K1 = len(rows) // N
    rows = rows.reshape(K1, N, -1)
    X, Psi, U = rows[:, :, 2:2 + d], rows[:, :, 2 + d:2 + 2 * d], rows[:, :, 2 + 2 * d:2 + 2 * d + m]
    return Trajectory(rows[:, 0, 0].copy(), X.copy(), Psi.copy(), U.copy(), None)


def stage_turnpike(cfg, out):
    problem = validate_config(cfg)
    triple = read_triple(out / "stationary.csv", cfg.d, cfg.m)
    cert = _Certificate(read_json(out / "certificate.json"))
    traj = read_trajectory(out / "trajectory.csv", cfg.N, cfg.d, cfg.m)
    _, X0 = read_csv(out / "initial.csv")
    rep = turnpike_report(problem, traj, triple, cert, X0, window=cfg.solver.window)
    write_json(out / "turnpike.json", {"config_hash": cfg.hash(), **rep.to_dict()})
    write_csv(out / "envelope.csv", ["t", "deviation", "envelope", "eulerian_deviation",
                                     "eulerian_envelope"], rep.plot_rows())
    return rep


STAGES = {
    "validate": stage_validate,
    "solve-static": stage_static,
    "riccati": stage_riccati,
    "solve-dynamic": stage_dynamic,
    "turnpike-report": stage_turnpike,
}


def run_pipeline(cfg, out=None):
    """Run every stage in order; the first failure stops the chain after its report is written."""
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for name, fn in STAGES.items():
        log.info("stage %s", name)
        try:
            results[name] = fn(cfg, out)
        except Exception as exc:
            write_json(out / "failure.json", {"config_hash": cfg.hash(), "stage": name,
                                              "error": type(exc).__name__, "message": str(exc)})
            raise
    return results


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _exit_code(exc):
    if isinstance(exc, (ConfigError, DimensionError, FileNotFoundError)):
        return EXIT_CONFIG
    if isinstance(exc, (HypothesisFailure, ModelAssumptionError, RiccatiError)):
        return EXIT_HYPOTHESIS
    if isinstance(exc, (NonconvergenceError, DegeneracyError, InstabilityError)):
        return EXIT_NONCONVERGENCE
    return None


def build_parser():
    ap = argparse.ArgumentParser(prog="mfturnpike", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ["run", *STAGES]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        out = Path(args.out if args.out is not None else cfg.out)
        if args.command == "run":
            run_pipeline(cfg, out)
        else:
            out.mkdir(parents=True, exist_ok=True)
            STAGES[args.command](cfg, out)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"mfturnpike {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
