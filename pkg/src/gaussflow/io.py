"""Experiment configuration, trace persistence and the run/verify/suite pipeline.

Configs are JSON or YAML documents validated by a versioned pydantic schema
(unknown keys are rejected).  One experiment writes one trace directory::

    <out>/config.json          normalised config echo
    <out>/trace.json           manifest: grid spec, descriptor, snapshot times
    <out>/state.npz            raw heights and active masks (exact reload)
    <out>/snapshots/snapshot_00000.csv ...
    <out>/diagnostics.csv
    <out>/report.json
"""

from __future__ import annotations

import copy
import csv
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .anisotropy import (
    AnisotropyDescriptor,
    convexity_certificate,
    recenter,
    shift_point,
    verify_shift_property,
)
from .errors import (
    ConfigError,
    DegenerateWindowError,
    GaussFlowError,
    HypothesisViolationError,
    InvalidArgumentError,
    InvalidDescriptorError,
    NotEnclosedError,
    NotUniformlyConvexError,
    NumericalFailureError,
    PreconditionError,
)
from .estimates import (
    EstimateRecord,
    curvature_lower_bound_check,
    enclosure_check,
    gradient_bound_check,
    speed_bound_check,
)
from .flow_solver import FlowConfig, FlowTrace, StepInfo, run, verify_v_evolution
from .graph_geometry import GraphGrid, snapshot_table
from .oracles import (
    OracleSolution,
    Polynomial,
    grid_from_spec,
    grim_reaper,
    grim_reaper_solution,
    manufactured_source,
    sphere_cap_initial,
    translator_profile,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_PASS, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
DIAGNOSTIC_FIELDS = ("t", "dt", "max_speed", "min_lambda_min", "retries")
FLOAT_FMT = "%.17g"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------- schema

class AnisotropySpec(_Strict):
    family: Literal["constant", "shifted_sphere", "ellipsoid", "perturbed"]
    parameters: dict = Field(default_factory=dict)
    fd_step: float = Field(1e-5, gt=0)


class ShiftSpec(_Strict):
    enabled: bool = False
    e_dir: Union[list[float], Literal["vertical", "random"]] = "vertical"
    t0: float = Field(0.5, gt=0, lt=1)
    samples: int = Field(10_000, ge=10)


class GridSpec(_Strict):
    n: Literal[1, 2]
    origin: list[float]
    spacing: float = Field(gt=0)
    extents: list[int]

    @model_validator(mode="after")
    def _shape(self):
        if len(self.origin) != self.n or len(self.extents) != self.n:
            raise ValueError("grid origin and extents must have length n")
        if min(self.extents) < 3:
            raise ValueError("every grid extent must be at least 3")
        return self


class ParaboloidInit(_Strict):
    kind: Literal["paraboloid"]
    coeff: float = Field(0.5, gt=0)
    center: Optional[list[float]] = None
    offset: float = 0.0


class GrimReaperInit(_Strict):
    kind: Literal["grim_reaper_t0"]


class TranslatorInit(_Strict):
    kind: Literal["translator"]
    alpha: float = Field(gt=0)
    c: float = Field(1.0, gt=0)


class TableInit(_Strict):
    kind: Literal["table"]
    values: list


class SphereCapInit(_Strict):
    kind: Literal["sphere_cap"]
    R: float = Field(gt=0)
    center: list[float]


class ManufacturedInit(_Strict):
    kind: Literal["manufactured"]
    terms: list[list[float]] = Field(description="rows of (powers of x.., t, coefficient)")


InitialSpec = Annotated[
    Union[ParaboloidInit, GrimReaperInit, TranslatorInit, TableInit, SphereCapInit, ManufacturedInit],
    Field(discriminator="kind"),
]


class FlowSpec(_Strict):
    alpha: float = Field(gt=0)
    t_end: float = Field(gt=0)
    cfl_safety: float = Field(0.2, gt=0, le=1)
    height_cap: Optional[float] = None
    boundary: Literal["frozen_dirichlet", "exact_dirichlet"] = "frozen_dirichlet"
    snapshot_stride: int = Field(10, ge=1)
    max_retries: int = Field(10, ge=0)
    fixed_dt: Optional[float] = Field(None, gt=0)
    max_steps: int = Field(2_000_000, ge=1)


class WindowCheck(_Strict):
    N: float = Field(gt=0)
    beta: float = Field(1.0, gt=0)


class SpeedCheck(_Strict):
    N: float = Field(gt=0)
    condition_at: Literal["sample", "final"] = "sample"


class EnclosureCheck(_Strict):
    R: float = Field(gt=0)
    center: list[float]


class VEvolutionCheck(_Strict):
    snapshot: Optional[int] = None
    tolerance: float = Field(1e-2, gt=0)


class ChecksSpec(_Strict):
    slack: float = Field(1.05, ge=1)
    gradient: Optional[WindowCheck] = None
    curvature: Optional[WindowCheck] = None
    speed: Optional[SpeedCheck] = None
    enclosure: Optional[EnclosureCheck] = None
    v_evolution: Optional[VEvolutionCheck] = None


class OutputSpec(_Strict):
    dir: Optional[str] = None
    psi_N: Optional[float] = Field(None, gt=0)
    psi_beta: float = Field(0.0, ge=0)


class ExperimentConfig(_Strict):
    version: Literal[1] = SCHEMA_VERSION
    id: str = "experiment"
    seed: int = 0
    anisotropy: AnisotropySpec
    shift: ShiftSpec = Field(default_factory=ShiftSpec)
    grid: GridSpec
    initial: InitialSpec
    flow: FlowSpec
    checks: ChecksSpec = Field(default_factory=ChecksSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @model_validator(mode="after")
    def _cross_fields(self):
        n = self.grid.n
        for name in ("gradient", "curvature"):
            chk = getattr(self.checks, name)
            if chk is not None and chk.N < chk.beta:
                raise ValueError(f"checks.{name}: gradient-estimate hypothesis requires "
                                 f"N >= beta > 0 (got N={chk.N}, beta={chk.beta})")
        if self.checks.enclosure is not None and len(self.checks.enclosure.center) != n + 1:
            raise ValueError("checks.enclosure.center must have length n + 1")
        init = self.initial
        if isinstance(init, (GrimReaperInit, TranslatorInit)) and n != 1:
            raise ValueError(f"initial.kind={init.kind} is defined for n = 1 only")
        if isinstance(init, SphereCapInit) and len(init.center) != n + 1:
            raise ValueError("initial.center must have length n + 1")
        if isinstance(init, ParaboloidInit) and init.center is not None and len(init.center) != n:
            raise ValueError("initial.center must have length n")
        if isinstance(init, TableInit):
            if list(np.shape(init.values)) != list(self.grid.extents):
                raise ValueError("initial.values shape must equal grid.extents")
        if isinstance(init, ManufacturedInit):
            if not init.terms or any(len(r) != n + 2 for r in init.terms):
                raise ValueError("initial.terms rows need n + 2 entries (powers of x.., t, coefficient)")
        if self.flow.boundary == "exact_dirichlet" and not isinstance(
                init, (GrimReaperInit, TranslatorInit, ManufacturedInit)):
            raise ValueError("flow.boundary=exact_dirichlet needs an oracle initial kind "
                             "(grim_reaper_t0, translator or manufactured)")
        if isinstance(init, TranslatorInit) and init.alpha != self.flow.alpha:
            raise ValueError("initial.alpha of a translator must equal flow.alpha")
        if isinstance(init, GrimReaperInit):
            half = max(abs(self.grid.origin[0]),
                       abs(self.grid.origin[0] + self.grid.spacing * (self.grid.extents[0] - 1)))
            if half >= 0.5 * math.pi:
                raise ValueError("grim reaper grid must lie inside |x| < pi/2")
            if self.flow.alpha != 1.0:
                log.info("grim reaper initial data with alpha=%s is not an exact solution", self.flow.alpha)
        if isinstance(self.shift.e_dir, list) and len(self.shift.e_dir) != n + 1:
            raise ValueError("shift.e_dir must have length n + 1")
        fam = self.anisotropy
        try:
            desc = AnisotropyDescriptor.from_dict(fam.model_dump())
        except (InvalidDescriptorError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"anisotropy: {exc}") from exc
        if desc.dim != n + 1:
            raise ValueError(f"anisotropy dimension {desc.dim} does not match grid n + 1 = {n + 1}")
        return self


class MatrixSpec(_Strict):
    version: Literal[1] = SCHEMA_VERSION
    experiments: list = Field(default_factory=list)
    product: Optional[dict] = None
    jobs: int = Field(1, ge=1)


# ---------------------------------------------------------------- parsing

def _load_text(text: str, source: str = "<string>"):
    try:
        if source.endswith(".json"):
            return json.loads(text)
        return yaml.safe_load(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}: {exc.msg}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "unknown line"
        raise ConfigError(f"{source}: {where}: {exc}") from exc


def _validation_message(exc: ValidationError, source: str) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return f"{source}: " + "; ".join(parts)


def config_from_dict(data, source: str = "<dict>") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_validation_message(exc, source)) from exc


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(_load_text(text, str(path)), str(path))


def normalize_config(data) -> dict:
    """Canonical dict form: defaults filled in, JSON-compatible types."""
    return config_from_dict(data).model_dump(mode="json")


def emit_config(config: ExperimentConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- building blocks

def build_descriptor(config: ExperimentConfig) -> AnisotropyDescriptor:
    return AnisotropyDescriptor.from_dict(config.anisotropy.model_dump())


def _e_dir(config: ExperimentConfig) -> np.ndarray:
    n = config.grid.n
    e = config.shift.e_dir
    if e == "vertical":
        v = np.zeros(n + 1)
        v[-1] = 1.0
        return v
    if e == "random":
        v = np.random.default_rng(config.seed).standard_normal(n + 1)
    else:
        v = np.asarray(e, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ConfigError("shift.e_dir must be non-zero")
    return v / norm


def _manufactured_poly(init: ManufacturedInit, n: int) -> Polynomial:
    terms = {}
    for row in init.terms:
        powers = tuple(int(p) for p in row[:-1])
        terms[powers] = terms.get(powers, 0.0) + float(row[-1])
    return Polynomial.from_terms(n, terms)


def build_reference(config: ExperimentConfig, desc: AnisotropyDescriptor) -> Optional[OracleSolution]:
    """Exact solution matching the initial kind, or None."""
    init = config.initial
    if isinstance(init, GrimReaperInit):
        return grim_reaper_solution()
    if isinstance(init, TranslatorInit):
        g = config.grid
        half = max(abs(g.origin[0]), abs(g.origin[0] + g.spacing * (g.extents[0] - 1)))
        return translator_profile(init.alpha, init.c, desc, half)
    if isinstance(init, ManufacturedInit):
        poly = _manufactured_poly(init, config.grid.n)
        return OracleSolution("manufactured", poly, math.inf, {"terms": init.terms})
    return None


def build_initial_grid(config: ExperimentConfig, reference: Optional[OracleSolution] = None) -> GraphGrid:
    g = config.grid
    cap = math.inf if config.flow.height_cap is None else config.flow.height_cap
    init = config.initial
    if isinstance(init, SphereCapInit):
        return sphere_cap_initial(init.R, init.center, g.origin, g.spacing, g.extents, cap)
    if isinstance(init, ParaboloidInit):
        center = np.zeros(g.n) if init.center is None else np.asarray(init.center, dtype=float)

        def heights(p):
            return init.offset + init.coeff * np.sum((p - center) ** 2, axis=-1)
    elif isinstance(init, TableInit):
        values = np.asarray(init.values, dtype=float)

        def heights(p):
            return values.copy()
    elif isinstance(init, GrimReaperInit):
        def heights(p):
            return grim_reaper(p[..., 0], 0.0)
    else:
        def heights(p):
            return reference(p, 0.0)
    return grid_from_spec(g.origin, g.spacing, g.extents, heights, cap)


def build_flow_config(config: ExperimentConfig, desc, reference) -> FlowConfig:
    f = config.flow
    source = None
    if isinstance(config.initial, ManufacturedInit):
        source = manufactured_source(reference.profile, desc, f.alpha)
    return FlowConfig(
        alpha=f.alpha, t_end=f.t_end, cfl_safety=f.cfl_safety,
        height_cap=math.inf if f.height_cap is None else f.height_cap,
        boundary=f.boundary, reference=reference if f.boundary == "exact_dirichlet" else None,
        snapshot_stride=f.snapshot_stride, source=source, max_retries=f.max_retries,
        fixed_dt=f.fixed_dt, max_steps=f.max_steps)


def _psi_params(config: ExperimentConfig):
    out = config.output
    if out.psi_N is not None:
        return out.psi_N, out.psi_beta
    for chk in (config.checks.gradient, config.checks.curvature):
        if chk is not None:
            return chk.N, chk.beta
    if config.checks.speed is not None:
        return config.checks.speed.N, 0.0
    return 1.0, 0.0


# ---------------------------------------------------------------- persistence

def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([FLOAT_FMT % v for v in row])


def write_snapshot_csv(path, grid: GraphGrid, desc, alpha, N, beta=0.0):
    header, table = snapshot_table(grid, desc, alpha, N, beta)
    _write_csv(Path(path), header, table)


def write_trace(trace: FlowTrace, out_dir, config: Optional[ExperimentConfig] = None,
                psi=(1.0, 0.0)) -> Path:
    out = Path(out_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    N, beta = psi
    alpha = trace.config.alpha
    files = []
    for k, grid in enumerate(trace.snapshots):
        name = f"snapshots/snapshot_{k:05d}.csv"
        write_snapshot_csv(out / name, grid, trace.desc, alpha, N, beta)
        files.append({"file": name, "t": grid.t})
    diag_rows = [[d.t, d.dt, d.max_speed, d.min_lambda_min, d.retries] for d in trace.diagnostics]
    _write_csv(out / "diagnostics.csv", DIAGNOSTIC_FIELDS, diag_rows)
    first = trace.snapshots[0]
    np.savez(out / "state.npz",
             u=np.stack([g.u for g in trace.snapshots]),
             active=np.stack([g.active for g in trace.snapshots]),
             t=np.array([g.t for g in trace.snapshots]))
    c = trace.config
    manifest = {
        "version": SCHEMA_VERSION,
        "descriptor": trace.desc.to_dict(),
        "grid": {"origin": first.origin.tolist(), "spacing": first.spacing,
                 "extents": list(first.extents)},
        "flow": {"alpha": c.alpha, "t_end": c.t_end, "cfl_safety": c.cfl_safety,
                 "height_cap": None if math.isinf(c.height_cap) else c.height_cap,
                 "boundary": c.boundary, "snapshot_stride": c.snapshot_stride,
                 "max_retries": c.max_retries},
        "psi": {"N": N, "beta": beta},
        "snapshots": files,
        "failure": trace.failure,
        "failure_t": trace.failure_t,
    }
    (out / "trace.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if config is not None:
        (out / "config.json").write_text(emit_config(config))
    return out


def load_trace(trace_dir) -> FlowTrace:
    """Rebuild a FlowTrace from a trace directory, bit-exactly."""
    d = Path(trace_dir)
    try:
        manifest = json.loads((d / "trace.json").read_text())
        state = np.load(d / "state.npz")
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load trace from {d}: {exc}") from exc
    desc = AnisotropyDescriptor.from_dict(manifest["descriptor"])
    fl = manifest["flow"]
    cfg = FlowConfig(alpha=fl["alpha"], t_end=fl["t_end"], cfl_safety=fl["cfl_safety"],
                     height_cap=math.inf if fl["height_cap"] is None else fl["height_cap"],
                     snapshot_stride=fl["snapshot_stride"], max_retries=fl["max_retries"])
    # the reference callable is not persisted; checks never need it
    cfg.boundary = fl["boundary"]
    g = manifest["grid"]
    snaps = [GraphGrid(np.array(g["origin"]), g["spacing"], u, a, float(t))
             for u, a, t in zip(state["u"], state["active"], state["t"])]
    diags = []
    with open(d / "diagnostics.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            diags.append(StepInfo(float(row["t"]), float(row["dt"]), float(row["max_speed"]),
                                  float(row["min_lambda_min"]), int(float(row["retries"]))))
    return FlowTrace(desc, cfg, snaps, diags, manifest["failure"], manifest["failure_t"])


# ---------------------------------------------------------------- checks and reports

def record_to_report(rec: EstimateRecord) -> dict:
    return {"check": rec.name, "theorem": rec.theorem, "bound": rec.bound,
            "observed": rec.observed, "margin": rec.margin, "pass": rec.passed,
            "slack": rec.slack, "location": rec.location, "notes": rec.notes}


def _failed_record(name, theorem, exc) -> dict:
    return {"check": name, "theorem": theorem, "bound": None, "observed": None, "margin": None,
            "pass": False, "slack": None, "location": {}, "notes": {"error": str(exc)}}


def run_checks(trace: FlowTrace, checks: ChecksSpec) -> list:
    """Evaluate the configured checks; checks that raise are reported failing."""
    s = checks.slack
    plan = []
    if checks.gradient is not None:
        plan.append(("gradient", "gradient estimate",
                     lambda: gradient_bound_check(trace, checks.gradient.N, checks.gradient.beta, s)))
    if checks.curvature is not None:
        plan.append(("curvature", "curvature lower bound",
                     lambda: curvature_lower_bound_check(trace, checks.curvature.N,
                                                         checks.curvature.beta, s)))
    if checks.speed is not None:
        plan.append(("speed", "speed estimate",
                     lambda: speed_bound_check(trace, checks.speed.N, s, checks.speed.condition_at)))
    if checks.enclosure is not None:
        plan.append(("enclosure", "shrinking-sphere barrier",
                     lambda: enclosure_check(trace, checks.enclosure.center, checks.enclosure.R, s)))
    if checks.v_evolution is not None:
        plan.append(("v_evolution", "gradient-function evolution identity",
                     lambda: _v_evolution_record(trace, checks.v_evolution)))
    out = []
    for name, theorem, fn in plan:
        try:
            out.append(record_to_report(fn()))
        except (DegenerateWindowError, HypothesisViolationError, PreconditionError) as exc:
            out.append(_failed_record(name, theorem, exc))
    return out


def _v_evolution_record(trace, spec: VEvolutionCheck) -> EstimateRecord:
    res = verify_v_evolution(trace, k=spec.snapshot)
    passed = bool(np.isfinite(res.max_residual) and res.max_residual <= spec.tolerance)
    return EstimateRecord("v_evolution", "gradient-function evolution identity", spec.tolerance,
                          res.max_residual, spec.tolerance - res.max_residual, passed, 1.0, {},
                          {"coarse_time_spacing": res.coarse_time_spacing})


def _write_report(out: Optional[Path], report: dict):
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _finish(report: dict, records: list) -> dict:
    report["checks"] = records
    report["passed"] = all(r["pass"] for r in records)
    report["exit_code"] = EXIT_PASS if report["passed"] else EXIT_CHECK_FAILED
    return report


def run_experiment(config: ExperimentConfig, out_dir=None) -> tuple[int, dict]:
    """Certify, optionally shift, run, check and persist one experiment.

    Returns ``(exit_code, report)``.  Artifacts produced before a failure
    are kept.
    """
    out = Path(out_dir) if out_dir is not None else (
        Path(config.output.dir) if config.output.dir else None)
    report = {"id": config.id, "seed": config.seed, "stage": "certify", "checks": []}

    def fail(code, stage, exc):
        report.update(stage=stage, error=f"{type(exc).__name__}: {exc}", passed=False, exit_code=code)
        _write_report(out, report)
        return code, report

    try:
        desc = build_descriptor(config)
        lo, hi = convexity_certificate(desc)
        report["certificate"] = {"lambda_lo": lo, "lambda_hi": hi}
    except (NotUniformlyConvexError, InvalidDescriptorError, PreconditionError) as exc:
        return fail(EXIT_CONFIG, "certify", exc)

    if config.shift.enabled:
        report["stage"] = "shift"
        try:
            e = _e_dir(config)
            z0 = shift_point(desc, e, config.shift.t0, config.shift.samples)
            margin = verify_shift_property(desc, z0, e, 10 * config.shift.samples)
        except NumericalFailureError as exc:
            return fail(EXIT_NUMERICAL, "shift", exc)
        report["shift"] = {"e_dir": e.tolist(), "z0": z0.tolist(), "margin": margin}
        if margin > 1e-8:
            return fail(EXIT_NUMERICAL, "shift",
                        NumericalFailureError(f"shift point margin {margin:.3g} exceeds 1e-8"))
        desc = recenter(desc, z0)

    report["stage"] = "run"
    try:
        reference = build_reference(config, desc)
        grid0 = build_initial_grid(config, reference)
        flow_cfg = build_flow_config(config, desc, reference)
        trace = run(grid0, desc, flow_cfg)
    except (PreconditionError, InvalidArgumentError) as exc:
        return fail(EXIT_CONFIG, "run", exc)
    except GaussFlowError as exc:
        return fail(EXIT_NUMERICAL, "run", exc)
    report["run"] = {"steps": len(trace.diagnostics), "snapshots": len(trace.snapshots),
                     "t_final": trace.final.t, "retries": sum(d.retries for d in trace.diagnostics),
                     "failure": trace.failure}
    if reference is not None:
        err = _oracle_error(trace, reference)
        if err is not None:
            report["run"]["max_error_vs_reference"] = err
    if out is not None:
        write_trace(trace, out, config, _psi_params(config))
    if trace.failed:
        return fail(EXIT_NUMERICAL, "run", NumericalFailureError(trace.failure))

    report["stage"] = "checks"
    try:
        records = run_checks(trace, config.checks)
    except NotEnclosedError as exc:
        return fail(EXIT_CONFIG, "checks", exc)
    report["stage"] = "done"
    _finish(report, records)
    _write_report(out, report)
    return report["exit_code"], report


def _oracle_error(trace: FlowTrace, reference) -> Optional[float]:
    g = trace.final
    m = g.active
    try:
        exact = reference(g.points()[m], g.t)
    except GaussFlowError:
        return None
    return float(np.max(np.abs(g.u[m] - exact)))


def verify_trace(trace_dir, config: Optional[ExperimentConfig] = None) -> tuple[int, dict]:
    """Re-run the checks on a persisted trace (config defaults to its echo)."""
    d = Path(trace_dir)
    if config is None:
        config = parse_config(d / "config.json")
    trace = load_trace(d)
    report = {"id": config.id, "trace": str(d), "stage": "checks"}
    try:
        records = run_checks(trace, config.checks)
    except NotEnclosedError as exc:
        report.update(error=str(exc), passed=False, exit_code=EXIT_CONFIG, checks=[])
        return EXIT_CONFIG, report
    _finish(report, records)
    return report["exit_code"], report


# ---------------------------------------------------------------- oracle export

def export_oracle(config: ExperimentConfig, out_dir, times=None) -> list:
    """Write the reference profile on the config grid at the given times."""
    desc = build_descriptor(config)
    reference = build_reference(config, desc)
    if reference is None:
        raise ConfigError(f"initial.kind={config.initial.kind} has no oracle profile")
    times = [0.0, config.flow.t_end] if times is None else list(times)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    N, beta = _psi_params(config)
    g = config.grid
    written = []
    for k, t in enumerate(times):
        grid = grid_from_spec(g.origin, g.spacing, g.extents, lambda p: reference(p, t), t=t)
        path = out / f"oracle_{reference.id}_{k:05d}.csv"
        write_snapshot_csv(path, grid, desc, config.flow.alpha, N, beta)
        written.append(str(path))
    return written


# ---------------------------------------------------------------- suites

def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def expand_matrix(data: dict, base_dir: Path = Path(".")) -> list:
    """Experiment dicts from a matrix document.

    ``experiments`` lists inline configs or paths; ``product`` has a ``base``
    config and ``axes``, each a list of partial overrides carrying a ``label``.
    The cartesian product is deep-merged onto the base; ids join the labels.
    """
    try:
        spec = MatrixSpec.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(_validation_message(exc, "matrix")) from exc
    configs = []
    for item in spec.experiments:
        if isinstance(item, str):
            path = base_dir / item
            configs.append(_load_text(path.read_text(), str(path)))
        else:
            configs.append(item)
    if spec.product:
        base = spec.product.get("base", {})
        axes = spec.product.get("axes", [])
        for combo in itertools.product(*axes):
            merged = base
            labels = []
            for choice in combo:
                choice = dict(choice)
                labels.append(str(choice.pop("label")))
                merged = _deep_merge(merged, choice)
            merged = dict(merged)
            merged["id"] = "-".join([str(base.get("id", "x"))] + labels)
            configs.append(merged)
    return configs


def _suite_worker(args):
    data, out_root, seed = args
    exp_id = data.get("id", "experiment") if isinstance(data, dict) else "experiment"
    try:
        cfg = config_from_dict(data, f"experiment {exp_id}")
        if seed is not None:
            cfg = cfg.model_copy(update={"seed": seed})
        out = None if out_root is None else Path(out_root) / cfg.id
        code, report = run_experiment(cfg, out)
    except ConfigError as exc:
        code, report = EXIT_CONFIG, {"id": exp_id, "error": str(exc), "passed": False,
                                     "exit_code": EXIT_CONFIG, "checks": []}
    return exp_id, code, report


def verify_suite(matrix, out_dir=None, jobs: Optional[int] = None, seed: Optional[int] = None,
                 base_dir=None) -> tuple[int, dict]:
    """Run every experiment of a matrix; reports merge by experiment id.

    ``matrix`` is a path or an already-loaded dict.
    """
    if isinstance(matrix, (str, Path)):
        path = Path(matrix)
        data = _load_text(path.read_text(), str(path))
        base_dir = path.parent if base_dir is None else Path(base_dir)
    else:
        data = matrix
    configs = expand_matrix(data, Path(base_dir or "."))
    ids = [c.get("id", "experiment") if isinstance(c, dict) else "?" for c in configs]
    if len(set(ids)) != len(ids):
        raise ConfigError("experiment ids in a suite must be unique")
    jobs = jobs or (data or {}).get("jobs", 1)
    work = [(c, None if out_dir is None else str(out_dir), seed) for c in configs]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_suite_worker, work))
    else:
        results = [_suite_worker(w) for w in work]
    results.sort(key=lambda r: r[0])
    summary = [{"id": i, "exit_code": c, "passed": c == EXIT_PASS,
                "failed_checks": [r["check"] for r in rep.get("checks", []) if not r["pass"]],
                "error": rep.get("error")} for i, c, rep in results]
    failures = sum(1 for s in summary if not s["passed"])
    report = {"experiments": {i: rep for i, _, rep in results}, "summary": summary,
              "total": len(summary), "failures": failures}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "suite_report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True, default=str) + "\n")
    worst = max((s["exit_code"] for s in summary), default=EXIT_PASS)
    return worst, report


def format_summary(report: dict) -> str:
    lines = [f"{'id':<40} {'exit':>4}  failed checks"]
    for s in report["summary"]:
        failed = ",".join(s["failed_checks"]) or ("-" if s["passed"] else s["error"] or "")
        lines.append(f"{s['id']:<40} {s['exit_code']:>4}  {failed}")
    lines.append(f"{report['total']} experiments, {report['failures']} failed")
    return "\n".join(lines)
