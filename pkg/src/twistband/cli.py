"""Command-line driver: ``twistband <command> --config <file>``.

Commands run the pipeline stages on a JSON configuration and write
deterministically named outputs plus a ``manifest.json`` that records the
effective configuration, tolerances, seed, thread count and stage timings.

Exit codes: 0 success, 2 invalid configuration or unwritable output,
3 eigensolver failure, 4 inconclusive bound-state convergence.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import eigensolve
from .band_structure import (band_diagnostics, compute_bands, default_p_grid, ground_state,
                             ground_state_csv, untwisted_lowest, with_refinement_tolerance)
from .certifier import SIGN_NOTE, VERDICT_REL_MARGIN, certify, sweep, sweep_csv
from .eigensolve import EigenError
from .fiber_assembly import assemble_matrices
from .geometry import (CrossSectionSpec, GeometryError, bounding_radius, export_obj, refine,
                       signed_areas, triangulate, validate_spec)
from .twist_profile import (ProfileError, critical_solve, make_profile, twist_deficit,
                            validate_profile)
from .waveguide import (COMPRESS_LIMIT, DIMENSION_CAP, WaveguideError, convergence_study)

log = logging.getLogger("twistband")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_INCONCLUSIVE = 4

COMMANDS = ("mesh", "bands", "certify", "bound", "all")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class MeshConfig:
    target_h: float = 0.08
    refinements: int = 2
    n_theta: int | None = None


@dataclass(frozen=True)
class BandConfig:
    p_min: float | None = None
    p_max: float | None = None
    n_points: int = 41
    n_bands: int = 4


@dataclass(frozen=True)
class WaveguideConfig:
    L_list: tuple = (10.0, 20.0, 40.0, 80.0)
    n_s_per_unit: float = 10.0
    n_modes: int | None = None
    k: int = 3


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 5000
    seed: int = 0


@dataclass(frozen=True)
class TwistConfig:
    kind: str = "cosine_bump"
    beta0: float = 1.0
    s0: float = 1.0
    params: dict = field(default_factory=lambda: {"c": 0.5})
    # solve this amplitude for zero deficit instead of taking it from params
    critical_free: str | None = None


@dataclass(frozen=True)
class RunConfig:
    cross_section: CrossSectionSpec = field(
        default_factory=lambda: CrossSectionSpec.rectangle(1.0, 1.0))
    twist: TwistConfig = field(default_factory=TwistConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    band: BandConfig = field(default_factory=BandConfig)
    waveguide: WaveguideConfig = field(default_factory=WaveguideConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: str = "twistband_out"

    def to_dict(self):
        return {
            "cross_section": self.cross_section.to_dict(),
            "twist": asdict(self.twist),
            "mesh": asdict(self.mesh),
            "band": asdict(self.band),
            "waveguide": {**asdict(self.waveguide), "L_list": list(self.waveguide.L_list)},
            "solver": asdict(self.solver),
            "output_dir": self.output_dir,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return parse_config(d)

    def profile(self):
        t = self.twist
        if t.critical_free:
            fixed = {k: v for k, v in t.params.items() if k != t.critical_free}
            return critical_solve(t.kind, t.beta0, t.s0, t.critical_free, **fixed)
        return make_profile(t.kind, t.beta0, t.s0, **t.params)

    def h_list(self):
        return [self.mesh.target_h / 2 ** i for i in range(self.mesh.refinements + 1)]


def _number(path, v, positive=False, integer=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{path}: must be finite")
    if positive and not v > 0:
        raise ConfigError(f"{path}: must be positive, got {v!r}")
    if nonneg and not v >= 0:
        raise ConfigError(f"{path}: must be non-negative, got {v!r}")
    return int(v) if integer else float(v)


def _section(d, name, cls):
    raw = d.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown key (expected one of {sorted(known)})")
    return raw


def parse_config(d) -> RunConfig:
    """Validate a decoded JSON object into a :class:`RunConfig`."""
    if not isinstance(d, dict):
        raise ConfigError("<root>: expected an object")
    top = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(d) - top)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key (expected one of {sorted(top)})")
    default = RunConfig()

    cs = d.get("cross_section")
    if cs is None:
        spec = default.cross_section
    else:
        if not isinstance(cs, dict):
            raise ConfigError("cross_section: expected an object")
        try:
            spec = validate_spec(CrossSectionSpec.from_dict(cs))
        except KeyError as exc:
            raise ConfigError(f"cross_section.{exc.args[0]}: missing") from exc
        except (GeometryError, TypeError, ValueError) as exc:
            raise ConfigError(f"cross_section: {exc}") from exc

    raw = _section(d, "twist", TwistConfig)
    tw = TwistConfig(
        kind=str(raw.get("kind", default.twist.kind)),
        beta0=_number("twist.beta0", raw.get("beta0", default.twist.beta0), nonneg=True),
        s0=_number("twist.s0", raw.get("s0", default.twist.s0), positive=True),
        params=dict(raw.get("params", default.twist.params)),
        critical_free=raw.get("critical_free"),
    )
    raw = _section(d, "mesh", MeshConfig)
    n_theta = raw.get("n_theta")
    mesh = MeshConfig(
        target_h=_number("mesh.target_h", raw.get("target_h", default.mesh.target_h),
                         positive=True),
        refinements=_number("mesh.refinements", raw.get("refinements", default.mesh.refinements),
                            integer=True, nonneg=True),
        n_theta=None if n_theta is None else _number("mesh.n_theta", n_theta, integer=True,
                                                     positive=True),
    )
    raw = _section(d, "band", BandConfig)
    p_min, p_max = raw.get("p_min"), raw.get("p_max")
    band = BandConfig(
        p_min=None if p_min is None else _number("band.p_min", p_min),
        p_max=None if p_max is None else _number("band.p_max", p_max, positive=True),
        n_points=_number("band.n_points", raw.get("n_points", default.band.n_points),
                         integer=True, positive=True),
        n_bands=_number("band.n_bands", raw.get("n_bands", default.band.n_bands),
                        integer=True, positive=True),
    )
    if (band.p_min is None) != (band.p_max is None):
        raise ConfigError("band.p_min: p_min and p_max must be given together")
    if band.p_min is not None and abs(band.p_min + band.p_max) > 1e-12 * band.p_max:
        raise ConfigError("band.p_min: the grid must be symmetric (p_min = -p_max)")
    if band.n_points % 2 == 0:
        raise ConfigError("band.n_points: must be odd so that the grid contains p = 0")

    raw = _section(d, "waveguide", WaveguideConfig)
    L_raw = raw.get("L_list", list(default.waveguide.L_list))
    if not isinstance(L_raw, list) or len(L_raw) < 2:
        raise ConfigError("waveguide.L_list: expected a list of at least two lengths")
    L_list = tuple(_number(f"waveguide.L_list[{i}]", v, positive=True)
                   for i, v in enumerate(L_raw))
    if any(b <= a for a, b in zip(L_list, L_list[1:])):
        raise ConfigError("waveguide.L_list: must be strictly increasing")
    n_modes = raw.get("n_modes")
    wg = WaveguideConfig(
        L_list=L_list,
        n_s_per_unit=_number("waveguide.n_s_per_unit",
                             raw.get("n_s_per_unit", default.waveguide.n_s_per_unit),
                             positive=True),
        n_modes=None if n_modes is None else _number("waveguide.n_modes", n_modes,
                                                     integer=True, positive=True),
        k=_number("waveguide.k", raw.get("k", default.waveguide.k), integer=True,
                  positive=True),
    )
    raw = _section(d, "solver", SolverConfig)
    solver = SolverConfig(
        tol=_number("solver.tol", raw.get("tol", default.solver.tol), positive=True),
        max_iter=_number("solver.max_iter", raw.get("max_iter", default.solver.max_iter),
                         integer=True, positive=True),
        seed=_number("solver.seed", raw.get("seed", default.solver.seed), integer=True,
                     nonneg=True),
    )
    out = d.get("output_dir", default.output_dir)
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir: expected a non-empty string")
    cfg = RunConfig(spec, tw, mesh, band, wg, solver, out)

    try:
        prof = cfg.profile()
    except ProfileError as exc:
        raise ConfigError(f"twist: {exc}") from exc
    if L_list[0] <= prof.s0:
        raise ConfigError(f"waveguide.L_list[0]: every L must exceed s0 = {prof.s0}")
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<json>: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(data)


# ---------------------------------------------------------------- outputs

def _clean(o):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if math.isfinite(v) else None
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def _json_text(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def export_results(outputs: dict, output_dir) -> dict:
    """Write ``{file name: text or JSON-able object}`` and return sha256 per file."""
    out = Path(output_dir)
    digests = {}
    for name in sorted(outputs):
        content = outputs[name]
        text = content if isinstance(content, str) else _json_text(content)
        data = text.encode("utf-8")
        (out / name).write_bytes(data)
        digests[name] = hashlib.sha256(data).hexdigest()
    return digests


def _prepare_output(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".twistband_write_test"
    probe.write_bytes(b"")
    probe.unlink()
    return out


# ---------------------------------------------------------------- stages

def _min_angle_deg(mesh):
    p = mesh.nodes[mesh.triangles]
    angles = []
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1)
                                             * np.linalg.norm(b, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cos, -1, 1))))
    return float(np.min(angles))


class Pipeline:
    """Stage runner sharing meshes and fiber data between commands."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.profile = cfg.profile()
        self.timings = {}
        self.outputs = {}
        self._meshes = None
        self._fibers = {}

    def _timed(self, name, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    @property
    def meshes(self):
        if self._meshes is None:
            self._meshes = self._timed("mesh", self._build_meshes)
        return self._meshes

    def _build_meshes(self):
        c = self.cfg
        m = triangulate(c.cross_section, c.mesh.target_h, n_theta=c.mesh.n_theta)
        levels = [m]
        for _ in range(c.mesh.refinements):
            m = refine(m, c.cross_section)
            levels.append(m)
        return levels

    def fiber(self, level=-1):
        level = level % len(self.meshes)
        if level not in self._fibers:
            def build():
                mats = assemble_matrices(self.meshes[level])
                gs = ground_state(mats, self.profile.beta0, tol=self.cfg.solver.tol,
                                  seed=self.cfg.solver.seed)
                return mats, gs
            self._fibers[level] = self._timed("ground_state", build)
        return self._fibers[level]

    def resolved_ground_state(self):
        """Finest ground state with its refinement-difference angular tolerance."""
        _, gs = self.fiber()
        if len(self.meshes) < 2:
            return gs
        return with_refinement_tolerance(gs, self.fiber(-2)[1])

    # each stage returns its exit status
    def run_mesh(self):
        c = self.cfg
        levels = self.meshes
        exact = c.cross_section.area()
        rows = []
        for h, m in zip(c.h_list(), levels):
            rows.append({"target_h": h, "h_max": m.h_max, "n_nodes": len(m.nodes),
                         "n_triangles": len(m.triangles), "n_interior": m.n_interior,
                         "area": m.area(), "area_error": m.area() - exact,
                         "min_angle_deg": _min_angle_deg(m),
                         "min_signed_area": float(signed_areas(m.nodes, m.triangles).min()),
                         "bounding_radius": bounding_radius(m),
                         "fingerprint": m.fingerprint()})
        fine = levels[-1]
        self.outputs["mesh.json"] = json.loads(fine.to_json()) | {
            "quality": rows, "spec": c.cross_section.to_dict(),
            "area_exact": exact, "area_tol": 1e-12 * max(exact, 1.0)}
        s0 = self.profile.s0
        s_grid = np.linspace(-3 * s0, 3 * s0, 121)
        self.outputs["tube.obj"] = self._timed("obj", lambda: export_obj(fine, self.profile,
                                                                           s_grid))
        return EXIT_OK

    def run_bands(self):
        c = self.cfg
        mats, gs = self.fiber()
        mesh = self.meshes[-1]
        a = bounding_radius(mesh)
        if c.band.p_max is None:
            p_grid = default_p_grid(a, gs.beta0, c.band.n_points)
        else:
            p_grid = np.linspace(-c.band.p_max, c.band.p_max, c.band.n_points)
        band = self._timed("bands", lambda: compute_bands(mats, gs.beta0, p_grid,
                                                           c.band.n_bands, tol=c.solver.tol,
                                                           seed=c.solver.seed))
        status = EXIT_SOLVER if band.failures else EXIT_OK
        diag = band_diagnostics(band, a) if not band.failures else {"failures": band.failures}
        lam0 = untwisted_lowest(mats, tol=c.solver.tol, seed=c.solver.seed)
        levels = []
        for i, h in enumerate(c.h_list()):
            m_i, g_i = self.fiber(i)
            levels.append({"target_h": h, "n_interior": m_i.n, "E": g_i.E,
                           "angular_energy": g_i.angular_energy})
        ang = [r["angular_energy"] for r in levels]
        ref_diff = abs(ang[-1] - ang[-2]) if len(ang) > 1 else None
        rgs = self.resolved_ground_state()
        diag["ground_state"] = {
            "E": gs.E, "residual": gs.residual, "residual_tol": c.solver.tol,
            "norm_sq": gs.norm_sq, "angular_energy": gs.angular_energy,
            "angular_energy_refinement_diff": ref_diff,
            "angular_energy_tol": rgs.angular_energy_tol,
            "angular_resolved": rgs.angular_resolved, "ratio": gs.ratio,
            "positivity_ok": gs.positivity_ok, "min_value": gs.min_value,
            "min_node": gs.min_node, "untwisted_lowest": lam0,
            "threshold_raise": gs.E - lam0, "beta0": gs.beta0,
            "bounding_radius": a, "mesh_fingerprint": band.mesh_fingerprint,
            "levels": levels,
        }
        self.outputs["bands.csv"] = band.to_csv()
        self.outputs["ground_state.csv"] = ground_state_csv(gs, mats)
        self.outputs["diagnostics.json"] = diag
        return status

    def run_certify(self):
        gs = self.resolved_ground_state()
        prof = self.profile
        rep = twist_deficit(prof)
        cert = self._timed("certify", lambda: certify(gs, prof))
        critical = cert.search.get("path") == "critical"
        deltas = np.logspace(-6, 0, 61)
        self.outputs["certificate_sweep.csv"] = sweep_csv(sweep(gs, prof, deltas,
                                                                critical=critical))
        self.outputs["certificate.json"] = {
            "profile": prof.to_dict(), "reversion_margin": rep.reversion_margin,
            "deficit": rep.to_dict(),
            "validation": {"main": validate_profile(prof, "main").to_dict(),
                           "critical": validate_profile(prof, "critical").to_dict()},
            "certificate": cert.to_dict(),
            "verdict_rel_margin": VERDICT_REL_MARGIN,
        }
        return EXIT_OK

    def run_bound(self):
        c = self.cfg
        levels = self.meshes
        by_h = dict(zip(c.h_list(), levels))
        rep = self._timed("bound", lambda: convergence_study(
            c.cross_section, self.profile, c.h_list(), c.waveguide.L_list,
            per_unit=c.waveguide.n_s_per_unit, k=c.waveguide.k, tol=c.solver.tol,
            seed=c.solver.seed, mesh_builder=by_h.__getitem__, n_modes=c.waveguide.n_modes))
        self.outputs["bound_report.json"] = rep.to_dict() | {
            "dimension_cap": DIMENSION_CAP, "compress_limit": COMPRESS_LIMIT}
        return EXIT_INCONCLUSIVE if rep.inconclusive else EXIT_OK

    def run(self, command):
        stages = {"mesh": ["mesh"], "bands": ["bands"], "certify": ["certify"],
                  "bound": ["bound"], "all": ["mesh", "bands", "certify", "bound"]}[command]
        status = EXIT_OK
        for name in stages:
            status = max(status, getattr(self, f"run_{name}")())
        return status


def _manifest(cfg, command, threads, started, timings, status, digests, error=None):
    return {
        "command": command,
        "config": cfg.to_dict(),
        "artifact": {"name": "twistband", "version": __version__},
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "scipy": scipy.__version__, "platform": platform.platform()},
        "threads": threads,
        "seed": cfg.solver.seed,
        "started_utc": started,
        "finished_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "stage_seconds": timings,
        "tolerances": {
            "eigensolver_rel_residual": cfg.solver.tol,
            "eigensolver_max_iter": cfg.solver.max_iter,
            "evenness_rel_tol": 1e-8,
            "certificate_verdict_rel_margin": VERDICT_REL_MARGIN,
            "bound_state_solver_budget": f"10 * {cfg.solver.tol} * |E|",
            "waveguide_dimension_cap": DIMENSION_CAP,
            "waveguide_compress_limit": COMPRESS_LIMIT,
        },
        "sign_convention": SIGN_NOTE,
        "exit_code": status,
        "error": error,
        "files": digests,
    }


def run(command, cfg: RunConfig, threads=None):
    """Run ``command`` and write its outputs; returns the exit status."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        out = _prepare_output(cfg.output_dir)
    except OSError as exc:
        log.error("output directory %s is not writable: %s", cfg.output_dir, exc)
        return EXIT_INVALID
    eigensolve.MAX_ITER = cfg.solver.max_iter
    pipe = Pipeline(cfg)
    error = None
    try:
        status = _with_threads(threads, lambda: pipe.run(command))
    except EigenError as exc:
        error, status = f"solver failure: {exc}", EXIT_SOLVER
    except (GeometryError, ProfileError, WaveguideError, ValueError) as exc:
        error, status = f"validation failure: {exc}", EXIT_INVALID
    if error:
        log.error(error)
    try:
        digests = export_results(pipe.outputs, out)
        manifest = _manifest(cfg, command, threads, started, pipe.timings, status, digests,
                             error)
        export_results({"manifest.json": manifest}, out)
    except OSError as exc:
        log.error("could not write outputs: %s", exc)
        return EXIT_INVALID
    return status


def _with_threads(threads, fn):
    if not threads:
        return fn()
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=threads):
        return fn()


def build_parser():
    p = argparse.ArgumentParser(prog="twistband",
                                description="Bound states of locally twisted tubes.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--threads", type=int, help="BLAS thread count")
    p.add_argument("--seed", type=int, help="eigensolver seed (overrides solver.seed)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        changes = {}
        if args.out:
            changes["output_dir"] = args.out
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed: must be non-negative")
            changes["solver"] = SolverConfig(cfg.solver.tol, cfg.solver.max_iter, args.seed)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads: must be at least 1")
        if changes:
            cfg = RunConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)},
                               **changes})
    except ConfigError as exc:
        print(f"twistband: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    status = run(args.command, cfg, threads=args.threads)
    return status


if __name__ == "__main__":
    sys.exit(main())
