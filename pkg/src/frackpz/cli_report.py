"""Batch experiment driver.

One JSON config describes one experiment. Everything is validated before any
computation or output happens, results go to ``<out>/fields/*.csv``,
``<out>/report.json`` and ``<out>/manifest.json``. Report and field files are
byte-identical across reruns of the same config and seed; only the manifest
carries timestamps.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .domain_grid import Domain, Field, Grid, make_grid
from .fracops import assemble_frac_laplacian
from .kpz import (
    VARIANTS,
    ProblemSpec,
    iterate,
    lambda_sweep,
    measure_constants,
    pick_r,
    r_interval,
    thresholds,
)
from .nonexist import (
    lambda_starstar_kpz1,
    lambda_starstar_kpz3,
    nonexistence_chain_check,
)
from .poisson_solver import (
    SolverError,
    ball_torsion,
    decomposition_diagnostics,
    estimate_cz_constant,
    green_operator,
    solve_poisson,
)

__all__ = [
    "KINDS",
    "ConfigError",
    "ExperimentConfig",
    "RunManifest",
    "emit_field_csv",
    "load_config",
    "run",
    "main",
    "kpz_main",
]

log = logging.getLogger(__name__)

KINDS = (
    "solve_poisson",
    "operator_validate",
    "cz_probe",
    "thresholds",
    "iterate",
    "sweep",
    "nonexist_kpz1",
    "nonexist_kpz3",
    "decomposition",
)

_TOP_KEYS = {"kind", "domain", "h", "problem", "out", "seed", "tolerances", "params"}
_PROBLEM_KEYS = {"s", "t", "q", "lam", "mu", "f", "m", "variant"}
_TOL_KEYS = {"tol", "max_iter", "ball_slack"}
_PARAM_KEYS = {
    "solve_poisson": {"sigma"},
    "operator_validate": {"sigma", "delta_min"},
    "cz_probe": {"t", "p", "m", "samples"},
    "thresholds": {"samples"},
    "iterate": {"samples", "lam_factor"},
    "sweep": {"samples", "lambdas", "lambda_range"},
    "nonexist_kpz1": set(),
    "nonexist_kpz3": set(),
    "decomposition": {"shift", "n_exterior"},
}
_NEEDS_PROBLEM = {"cz_probe", "thresholds", "iterate", "sweep", "nonexist_kpz1", "nonexist_kpz3",
                  "decomposition"}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    kind: str
    domain: dict
    h: float
    problem: dict = field(default_factory=dict)
    out: str = "frackpz-out"
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a single JSON object")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("kind", "domain", "h"):
            if key not in raw:
                raise ConfigError(f"missing config key {key!r}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "domain": self.domain,
            "h": self.h,
            "problem": self.problem,
            "out": self.out,
            "seed": self.seed,
            "tolerances": self.tolerances,
            "params": self.params,
        }

    def hash(self) -> str:
        """SHA-256 of the canonical config, ignoring the output directory."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not isinstance(self.h, (int, float)) or not self.h > 0:
            raise ConfigError(f"h must be a positive number, got {self.h!r}")
        for name, allowed, val in (
            ("problem", _PROBLEM_KEYS, self.problem),
            ("tolerances", _TOL_KEYS, self.tolerances),
            ("params", _PARAM_KEYS[self.kind], self.params),
        ):
            if not isinstance(val, dict):
                raise ConfigError(f"{name} must be an object")
            unknown = set(val) - allowed
            if unknown:
                raise ConfigError(f"unknown {name} keys for {self.kind}: {sorted(unknown)}")
        tol = self.tolerances.get("tol", 1e-10)
        max_iter = self.tolerances.get("max_iter", 200)
        if not (isinstance(tol, (int, float)) and tol > 0):
            raise ConfigError(f"tol must be positive, got {tol!r}")
        if not (isinstance(max_iter, int) and max_iter >= 1):
            raise ConfigError(f"max_iter must be an integer >= 1, got {max_iter!r}")
        try:
            grid = self.grid()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.kind in _NEEDS_PROBLEM:
            self._validate_problem(grid)
        if self.kind in ("solve_poisson", "operator_validate"):
            sigma = self.params.get("sigma", self.problem.get("s", 0.5))
            if not (isinstance(sigma, (int, float)) and 0 < sigma < 1):
                raise ConfigError(f"sigma must lie in (0, 1), got {sigma!r}")
            if self.kind == "operator_validate" and self.domain.get("shape") == "square":
                raise ConfigError("operator_validate needs an interval or disk (closed-form oracle)")
        if self.kind == "sweep":
            self.lambda_values()

    def _validate_problem(self, grid: Grid) -> None:
        missing = {"s", "t", "q"} - set(self.problem)
        if missing:
            raise ConfigError(f"problem is missing {sorted(missing)}")
        if self.problem.get("variant", "half_laplacian") not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        for key in ("mu", "f"):
            if not isinstance(self.problem.get(key, 1.0), (int, float)):
                raise ConfigError(f"problem.{key} must be a constant number")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                spec = self.spec(grid)
            if self.kind in ("cz_probe", "thresholds", "iterate", "sweep"):
                r_interval(spec)
            if self.kind == "nonexist_kpz1":
                s, t, q = spec.s, spec.t, spec.q
                if not t < min(1.0, 2 * s):
                    raise ValueError("need t < min(1, 2s)")
                if not q > 2 * (s + 1) / (t + 2):
                    raise ValueError("need q > 2(s+1)/(t+2)")
            if self.kind == "nonexist_kpz3" and not 0 < 2 * spec.s - spec.t < 1:
                raise ValueError("need 0 < 2s - t < 1")
            if self.kind == "decomposition" and not spec.s <= spec.t < min(1.0, 2 * spec.s):
                raise ValueError("decomposition needs s <= t < min(1, 2s)")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- builders -----------------------------------------------------------

    def grid(self) -> Grid:
        if not isinstance(self.domain, dict):
            raise ConfigError("domain must be an object")
        return make_grid(Domain.from_config(self.domain), float(self.h))

    def spec(self, grid: Grid) -> ProblemSpec:
        p = self.problem
        return ProblemSpec(
            grid,
            float(p["s"]),
            float(p["t"]),
            float(p["q"]),
            float(p.get("lam", 0.0)),
            float(p.get("mu", 1.0)),
            float(p.get("f", 1.0)),
            float(p.get("m", 4.0)),
            p.get("variant", "half_laplacian"),
        )

    def lambda_values(self) -> list[float]:
        has_list = "lambdas" in self.params
        has_range = "lambda_range" in self.params
        if has_list == has_range:
            raise ConfigError("sweep needs exactly one of params.lambdas or params.lambda_range")
        if has_list:
            lams = self.params["lambdas"]
            if not isinstance(lams, list) or not lams:
                raise ConfigError("params.lambdas must be a non-empty list")
        else:
            rng = self.params["lambda_range"]
            if not (isinstance(rng, dict) and set(rng) == {"start", "stop", "num"}):
                raise ConfigError("lambda_range needs exactly start, stop, num")
            if not (isinstance(rng["num"], int) and rng["num"] >= 1):
                raise ConfigError("lambda_range.num must be a positive integer")
            lams = np.linspace(rng["start"], rng["stop"], rng["num"]).tolist()
        lams = [float(x) for x in lams]
        if any(not math.isfinite(x) or x < 0 for x in lams):
            raise ConfigError("lambda values must be finite and non-negative")
        if any(b < a for a, b in zip(lams, lams[1:])):
            raise ConfigError("lambda values must be sorted ascending")
        return lams


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# outputs


def emit_field_csv(fld: Field, path: str | Path) -> Path:
    """Write ``x1[,x2],value`` rows in node order with 17 significant digits."""
    vals = fld.values
    if vals.size == 0:
        raise ValueError("cannot emit an empty field")
    X = fld.grid.nodes
    header = ",".join([f"x{k + 1}" for k in range(X.shape[1])] + ["value"])
    lines = [header]
    for x, v in zip(X, vals):
        lines.append(",".join(f"{c:.17g}" for c in (*x, v)))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def _clean(obj):
    """Recursively convert numpy scalars and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return obj


def _dump(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


@dataclass
class RunManifest:
    config_hash: str
    version: str
    kind: str
    started: str
    finished: str
    files: list
    constants: list
    seed: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class _Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.files: list[dict] = []
        self.constants: list[dict] = []

    def field(self, name: str, fld: Field) -> None:
        self._record(emit_field_csv(fld, self.root / "fields" / f"{name}.csv"))

    def text(self, name: str, body: str) -> None:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(body)
        self._record(path)

    def constant(self, name: str, value: float, provenance: dict) -> None:
        self.constants.append({"name": name, "value": value, "provenance": provenance})

    def _record(self, path: Path) -> None:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.files.append({"path": str(path.relative_to(self.root)), "sha256": digest})


# ---------------------------------------------------------------------------
# experiments


def _exp_solve_poisson(cfg, grid, out):
    sigma = float(cfg.params.get("sigma", cfg.problem.get("s", 0.5)))
    f = float(cfg.problem.get("f", 1.0))
    u = solve_poisson(grid, sigma, Field(grid, np.full(grid.n, f)))
    out.field("solution", u)
    rep = {"sigma": sigma, "f": f, "n": grid.n, "h": grid.h, "max": u.max()}
    if grid.domain.shape != "square":
        exact = ball_torsion(grid, sigma) * f
        inner = grid.delta > 0.05
        rep["interior_max_error"] = float(np.max(np.abs(u.values - exact.values)[inner]))
        rep["oracle"] = "closed-form torsion of the ball"
    return rep


def _exp_operator_validate(cfg, grid, out):
    sigma = float(cfg.params.get("sigma", cfg.problem.get("s", 0.5)))
    dmin = float(cfg.params.get("delta_min", 0.05))
    prof = ball_torsion(grid, sigma)
    Lu = assemble_frac_laplacian(grid, sigma, cache=grid.n < 4000) @ prof
    out.field("laplacian_of_profile", Lu)
    inner = grid.delta > dmin
    err = np.abs(Lu.values - 1.0)[inner]
    return {"sigma": sigma, "delta_min": dmin, "n": grid.n, "h": grid.h,
            "interior_max_error": float(err.max()), "nodes_checked": int(inner.sum()),
            "oracle": "closed-form Getoor identity (value 1 after normalisation)"}


def _spec(cfg, grid):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        spec = cfg.spec(grid)
    return spec, [str(w.message) for w in caught]


def _exp_cz_probe(cfg, grid, out):
    spec, notes = _spec(cfg, grid)
    t = float(cfg.params.get("t", spec.gamma))
    p = float(cfg.params.get("p", pick_r(spec)))
    m = float(cfg.params.get("m", r_interval(spec)[2]))
    samples = int(cfg.params.get("samples", 50))
    est = estimate_cz_constant(grid, spec.s, t, p, m, samples=samples, seed=cfg.seed)
    out.constant("C_tilde", est.C, {"source": "estimate_cz_constant", **json.loads(est.to_json())})
    return {"cz": json.loads(est.to_json()), "ratios": est.ratios, "notes": notes}


def _bundle(cfg, grid, spec):
    samples = int(cfg.params.get("samples", 20))
    C, k, prov = measure_constants(spec, samples=samples, seed=cfg.seed)
    b = thresholds(spec, C, k)
    return b, prov


def _record_constants(out, b, prov):
    out.constant("C_tilde", b.C, {"source": "estimate_cz_constant", **prov["cz"]})
    out.constant("k_tilde", b.k, {"source": "measure_embedding_constant", **prov["k"]})


def _exp_thresholds(cfg, grid, out):
    spec, notes = _spec(cfg, grid)
    b, prov = _bundle(cfg, grid, spec)
    _record_constants(out, b, prov)
    return {"thresholds": b.to_dict(), "regime": spec.regime, "notes": notes}


def _exp_iterate(cfg, grid, out):
    spec, notes = _spec(cfg, grid)
    b, prov = _bundle(cfg, grid, spec)
    _record_constants(out, b, prov)
    if "lam_factor" in cfg.params:
        spec = spec.with_lambda(float(cfg.params["lam_factor"]) * b.lam_star)
    G = green_operator(grid, spec.s)
    u, rep = iterate(
        spec, G,
        max_iter=int(cfg.tolerances.get("max_iter", 200)),
        tol=float(cfg.tolerances.get("tol", 1e-10)),
        bundle=b,
        ball_slack=float(cfg.tolerances.get("ball_slack", 0.05)),
    )
    out.field("solution", u)
    res = {"lambda": spec.lam, "variant": spec.variant, "regime": spec.regime,
           "thresholds": b.to_dict(), "iteration": rep.to_dict(), "notes": notes,
           "message": "converged" if rep.converged else "no Picard fixed point found"}
    if rep.converged and spec.variant == "half_laplacian" and spec.t < min(1.0, 2 * spec.s) \
            and spec.q > 2 * (spec.s + 1) / (spec.t + 2) and spec.mu1 > 0:
        nb = lambda_starstar_kpz1(grid, spec.s, spec.t, spec.q, spec.mu1, spec.f)
        res["chain"] = nonexistence_chain_check(u, nb, spec).to_dict()
    return res


def _lam_starstar(grid, spec):
    try:
        if spec.variant == "half_laplacian":
            nb = lambda_starstar_kpz1(grid, spec.s, spec.t, spec.q, spec.mu1, spec.f)
            return nb.lam_starstar, {"source": "lambda_starstar_kpz1", **json.loads(nb.to_json())}
        if spec.variant == "stein":
            est = lambda_starstar_kpz3(grid, spec.s, spec.t, spec.q, spec.mu1, spec.f)
            return est.lam_starstar, {"source": "lambda_starstar_kpz3", **json.loads(est.to_json())}
    except ValueError as exc:
        return None, {"unavailable": str(exc)}
    return None, {"unavailable": "no non-existence threshold for the Riesz gradient"}


def _exp_sweep(cfg, grid, out):
    spec, notes = _spec(cfg, grid)
    lams = cfg.lambda_values()
    b, prov = _bundle(cfg, grid, spec)
    _record_constants(out, b, prov)
    lss, lss_prov = _lam_starstar(grid, spec)
    if lss is not None:
        out.constant("lambda_starstar", lss, lss_prov)
    G = green_operator(grid, spec.s)
    rep = lambda_sweep(
        spec, lams, G,
        max_iter=int(cfg.tolerances.get("max_iter", 200)),
        tol=float(cfg.tolerances.get("tol", 1e-10)),
        lam_star=b.lam_star, lam_starstar=lss,
    )
    rep.meta = {"C_tilde": b.C, "k_tilde": b.k, "h": grid.h, "n": grid.n, "variant": spec.variant}
    out.text("sweep.csv", rep.to_csv())
    summary = rep.summary()
    lc = rep.largest_converged
    summary["sandwich_upper_ok"] = None if (lss is None or lc is None) else bool(lc <= lss)
    summary["sandwich_lower_ok"] = None if lc is None else bool(b.lam_star <= lc)
    return {"summary": summary, "notes": notes, "lambda_starstar_provenance": lss_prov}


def _exp_nonexist_kpz1(cfg, grid, out):
    spec, notes = _spec(cfg, grid)
    nb = lambda_starstar_kpz1(grid, spec.s, spec.t, spec.q, spec.mu1, spec.f)
    out.field("phi", nb.phi)
    out.field("psi", nb.psi)
    out.constant("C_q", nb.Cq, {"rule": "(q-1) q^(-q/(q-1))", "q": spec.q})
    return {"bundle": json.loads(nb.to_json()), "notes": notes}


def _exp_nonexist_kpz3(cfg, grid, out):
    spec, notes = _spec(cfg, grid)
    est = lambda_starstar_kpz3(grid, spec.s, spec.t, spec.q, spec.mu1, spec.f)
    out.constant("C_tilde_q_mu1", est.constant["value"], est.constant)
    return {"estimate": json.loads(est.to_json()), "notes": notes}


def _exp_decomposition(cfg, grid, out):
    spec, notes = _spec(cfg, grid)
    kw = {}
    if "shift" in cfg.params:
        kw["shift"] = float(cfg.params["shift"])
    rep = decomposition_diagnostics(
        grid, spec.s, spec.t, spec.f, n_exterior=int(cfg.params.get("n_exterior", 20)),
        seed=cfg.seed, **kw,
    )
    out.field("half_laplacian", Field(grid, rep.lhs))
    out.constant("C_decomposition", rep.C, {"source": "decomposition_diagnostics", "fit": "delta > 2h"})
    return {"decomposition": json.loads(rep.to_json()), "notes": notes}


_EXPERIMENTS = {
    "solve_poisson": _exp_solve_poisson,
    "operator_validate": _exp_operator_validate,
    "cz_probe": _exp_cz_probe,
    "thresholds": _exp_thresholds,
    "iterate": _exp_iterate,
    "sweep": _exp_sweep,
    "nonexist_kpz1": _exp_nonexist_kpz1,
    "nonexist_kpz3": _exp_nonexist_kpz3,
    "decomposition": _exp_decomposition,
}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run(config: ExperimentConfig) -> RunManifest:
    """Execute one experiment and write its outputs under ``config.out``."""
    config.validate()
    started = _now()
    grid = config.grid()
    root = Path(config.out)
    out = _Outputs(root)
    report = _EXPERIMENTS[config.kind](config, grid, out)
    report = {
        "kind": config.kind,
        "config_hash": config.hash(),
        "grid": {"domain": grid.domain.to_config(), "h": grid.h, "n": grid.n},
        "result": report,
        "constants": out.constants,
    }
    out.text("report.json", _dump(report))
    manifest = RunManifest(config.hash(), __version__, config.kind, started, _now(),
                           list(out.files), out.constants, config.seed)
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(_dump(manifest.to_dict()))
    return manifest


# ---------------------------------------------------------------------------
# command line


def _execute(cfg_dict: dict, out: str | None, seed: int | None) -> int:
    try:
        if out is not None:
            cfg_dict["out"] = out
        if seed is not None:
            cfg_dict["seed"] = seed
        cfg = ExperimentConfig.from_dict(cfg_dict)
    except (ConfigError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        manifest = run(cfg)
    except (SolverError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure in {cfg.kind}: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({"out": cfg.out, "files": [f["path"] for f in manifest.files]}))
    return 0


def _read(path: str) -> dict | None:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: cannot read {path}: {exc}", file=sys.stderr)
        return None
    if not isinstance(raw, dict):
        print("configuration error: config must be a JSON object", file=sys.stderr)
        return None
    return raw


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="frackpz", description="Run one fractional KPZ experiment.")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="seed for random batteries (overrides the config)")
    args = ap.parse_args(argv)
    raw = _read(args.config)
    if raw is None:
        return 2
    if raw.get("kind", args.kind) != args.kind:
        print(f"configuration error: config kind {raw['kind']!r} != {args.kind!r}", file=sys.stderr)
        return 2
    raw["kind"] = args.kind
    return _execute(raw, args.out, args.seed)


def _parse_lambdas(text: str) -> dict:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError("expected a:b:n")
    return {"start": float(parts[0]), "stop": float(parts[1]), "num": int(parts[2])}


def kpz_main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="kpz", description="Picard runs for fractional KPZ problems.")
    ap.add_argument("command", choices=("iterate", "sweep"))
    ap.add_argument("--config", required=True)
    ap.add_argument("--lambdas", help="sweep range start:stop:count")
    ap.add_argument("--out")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args(argv)
    raw = _read(args.config)
    if raw is None:
        return 2
    raw["kind"] = args.command
    if args.lambdas is not None:
        if args.command != "sweep":
            print("configuration error: --lambdas applies to sweep only", file=sys.stderr)
            return 2
        try:
            rng = _parse_lambdas(args.lambdas)
        except ValueError as exc:
            print(f"configuration error: --lambdas: {exc}", file=sys.stderr)
            return 2
        params = dict(raw.get("params", {}))
        params.pop("lambdas", None)
        params["lambda_range"] = rng
        raw["params"] = params
    return _execute(raw, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
