"""Parameter sweeps, convergence harnesses and bath ablations.

Sweeps traverse magnetic field, transverse zero-field splitting, or
first-shell nuclear polarization, computing a fitted T2 (plus optional
curves and modulation spectra) at every point.  Points are independent jobs
run through a bounded worker pool; per-point cluster evaluation nests
beneath.  Time grids are auto-scaled per point by a coarse pilot run, since
coherence times span three orders of magnitude across the field range.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np

from .cce import (
    BathState,
    CceError,
    ClusterPolicy,
    CoherenceCurve,
    GcceResult,
    gcce_coherence,
)
from .eseem import EseemError, FitResult, fit_decay, modulation_spectrum
from .spin_model import BathSpin, CentralSpinParams, MagneticField, gslac_field


class SweepError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run context


@dataclass(frozen=True)
class RunContext:
    """Everything needed to evaluate a coherence curve at one setting."""

    central: CentralSpinParams
    bath: list[BathSpin]
    policy: ClusterPolicy
    field: MagneticField = MagneticField.along_c(0.0)
    mode: str = "full"
    bath_state: BathState = dataclass_field(default_factory=BathState)
    threads: int = 1
    time_points: int = 501
    t_max_us: float | None = None  # None: auto-scale from a pilot run


def first_shell_nitrogen_indices(bath: list[BathSpin]) -> list[int]:
    """Indices of the three first-neighbor nitrogens (within 2 angstrom)."""
    return [
        i for i, s in enumerate(bath)
        if s.species.label.startswith("N")
        and float(np.linalg.norm(s.position)) < 2.0
    ]


def apply_sweep_point(ctx: RunContext, axis: str, value: float) -> RunContext:
    if axis == "B_z":
        return replace(ctx, field=MagneticField.along_c(value))
    if axis == "E":
        if value < 0:
            raise SweepError("E is stored as a magnitude and must be >= 0")
        return replace(ctx, central=replace(ctx.central, e_mhz=float(value)))
    if axis == "polarization":
        idx = first_shell_nitrogen_indices(ctx.bath)
        if not idx:
            raise SweepError("polarization sweep: no first-shell nitrogens in bath")
        state = BathState(polarized={i: float(value) for i in idx},
                          axis=ctx.bath_state.axis)
        return replace(ctx, bath_state=state)
    raise SweepError(f"unknown sweep axis {axis!r}")


# ---------------------------------------------------------------------------
# region bookkeeping


def region_label(bz_mt: float, central: CentralSpinParams) -> str:
    """Reporting label for the field regions (metadata, not physics)."""
    b = abs(bz_mt)
    g = gslac_field(central)
    if b < 10.0:
        return "near_zero_field"
    if b < g - 30.0:
        return "low_field"
    if b <= g + 30.0:
        return "gslac"
    if b < 180.0:
        return "post_gslac"
    if b < 350.0:
        return "transition"
    return "high_field"


_REGION_SPAN_US = {
    "near_zero_field": 1.5,
    "low_field": 2.5,
    "gslac": 0.6,
    "post_gslac": 4.0,
    "transition": 80.0,
    "high_field": 200.0,
}


def auto_time_span(ctx: RunContext, target_t2_multiple: float = 6.0) -> float:
    """Pilot-run estimate of the time span covering the decay at this point.

    Runs a cheap order-limited expansion on a coarse grid, fits the envelope
    and returns ``target_t2_multiple`` times the fitted T2 (bounded).  Falls
    back to region defaults when nothing decays.
    """
    span = _REGION_SPAN_US[region_label(ctx.field.vector[2], ctx.central)]
    pilot_policy = replace(
        ctx.policy,
        max_order=min(2, ctx.policy.max_order),
        max_clusters_per_order=min(ctx.policy.max_clusters_per_order or 800, 800),
    )
    for _ in range(4):
        times = np.linspace(0.0, span, 241)
        result = gcce_coherence(
            ctx.bath, pilot_policy, ctx.central, ctx.field, times,
            mode=ctx.mode, bath_state=ctx.bath_state, threads=ctx.threads,
        )
        try:
            fit = fit_decay(result.total)
        except EseemError:
            return span
        if fit.no_decay:
            span *= 4.0
            continue
        new_span = target_t2_multiple * fit.t2_us
        if new_span < 0.3 * span:
            span = max(new_span, 1e-4)
            continue
        return float(min(max(new_span, 1e-4), 8.0 * span))
    return float(span)


def coherence_at(ctx: RunContext) -> GcceResult:
    """Evaluate the gCCE coherence for this context, auto-scaling the grid."""
    span = ctx.t_max_us if ctx.t_max_us is not None else auto_time_span(ctx)
    times = np.linspace(0.0, span, ctx.time_points)
    return gcce_coherence(
        ctx.bath, ctx.policy, ctx.central, ctx.field, times,
        mode=ctx.mode, bath_state=ctx.bath_state, threads=ctx.threads,
    )


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    """Sweep axis, points and requested outputs."""

    axis: str  # "B_z" | "E" | "polarization"
    points: tuple
    outputs: tuple = ("T2",)
    overrides: dict = dataclass_field(default_factory=dict)  # point index -> policy kwargs

    def __post_init__(self):
        if self.axis not in ("B_z", "E", "polarization"):
            raise SweepError(f"unknown sweep axis {self.axis!r}")
        pts = tuple(float(p) for p in self.points)
        if not pts or not np.all(np.isfinite(pts)):
            raise SweepError("sweep points must be nonempty and finite")
        object.__setattr__(self, "points", pts)
        for o in self.outputs:
            if o not in ("T2", "curves", "spectra"):
                raise SweepError(f"unknown sweep output {o!r}")


@dataclass
class SweepRow:
    """Result record of one sweep point."""

    point: float
    fit: FitResult | None
    region: str
    degraded_fraction: float
    result: GcceResult | None = None
    spectrum: list | None = None
    error: str | None = None

    def table_row(self) -> dict:
        t2 = self.fit.t2_us if self.fit else math.nan
        n = self.fit.stretch_n if self.fit else math.nan
        return {
            "point": self.point,
            "T2_us": t2,
            "stretch_n": n,
            "region": self.region,
            "degraded_fraction": self.degraded_fraction,
        }


def _run_point(ctx: RunContext, spec: SweepSpec, k: int, point: float) -> SweepRow:
    point_ctx = apply_sweep_point(ctx, spec.axis, point)
    if k in spec.overrides:
        point_ctx = replace(point_ctx, policy=replace(point_ctx.policy, **spec.overrides[k]))
    bz = point_ctx.field.vector[2]
    region = region_label(bz, point_ctx.central)
    try:
        result = coherence_at(point_ctx)
        fit = fit_decay(result.total)
        spectrum = None
        if "spectra" in spec.outputs:
            try:
                spectrum = modulation_spectrum(result.total)
            except EseemError:
                spectrum = []
        keep = result if "curves" in spec.outputs else None
        return SweepRow(
            point=point, fit=fit, region=region,
            degraded_fraction=result.degraded_fraction,
            result=keep, spectrum=spectrum,
        )
    except (CceError, EseemError, SweepError, ValueError) as exc:
        return SweepRow(
            point=point, fit=None, region=region,
            degraded_fraction=math.nan, error=str(exc),
        )


def run_sweep(spec: SweepSpec, ctx: RunContext, point_workers: int = 1) -> list[SweepRow]:
    """Evaluate every sweep point; failures are recorded, not raised."""
    if point_workers > 1:
        with ThreadPoolExecutor(max_workers=point_workers) as pool:
            futures = [
                pool.submit(_run_point, ctx, spec, k, p)
                for k, p in enumerate(spec.points)
            ]
            return [f.result() for f in futures]
    return [_run_point(ctx, spec, k, p) for k, p in enumerate(spec.points)]


def write_sweep_table(path, rows: list[SweepRow], config_hash: str = "") -> None:
    with open(path, "w") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("point,T2_us,stretch_n,region,degraded_fraction\n")
        for row in rows:
            r = row.table_row()
            fh.write(
                f"{r['point']:.9g},{r['T2_us']:.9g},{r['stretch_n']:.9g},"
                f"{r['region']},{r['degraded_fraction']:.9g}\n"
            )


# ---------------------------------------------------------------------------
# convergence


@dataclass
class ConvergenceReport:
    """T2 sensitivity of one sweep point to the expansion knobs.

    Knob scans are kept as ordered (setting, T2) pairs; convergence compares
    the last two settings against the 10% tolerance.
    """

    point: float
    t2_by_order: dict[int, float]
    t2_by_r_bath: list
    t2_by_cap: list
    degraded_fraction: float
    tolerance: float = 0.10

    def _converged(self, values: list[float]) -> bool:
        finite = [v for v in values if math.isfinite(v)]
        if len(finite) < 2:
            return True
        a, b = finite[-2], finite[-1]
        return abs(b - a) / max(abs(b), 1e-30) <= self.tolerance

    @property
    def order_converged(self) -> bool:
        return self._converged([self.t2_by_order[k] for k in sorted(self.t2_by_order)])

    @property
    def r_bath_converged(self) -> bool:
        return self._converged([t2 for _s, t2 in self.t2_by_r_bath])

    @property
    def cap_converged(self) -> bool:
        return self._converged([t2 for _s, t2 in self.t2_by_cap])

    def as_dict(self) -> dict:
        return {
            "point": self.point,
            "t2_by_order": {str(k): self.t2_by_order[k] for k in sorted(self.t2_by_order)},
            "t2_by_r_bath": [[s, t2] for s, t2 in self.t2_by_r_bath],
            "t2_by_cap": [[s, t2] for s, t2 in self.t2_by_cap],
            "order_converged": self.order_converged,
            "r_bath_converged": self.r_bath_converged,
            "cap_converged": self.cap_converged,
            "degraded_fraction": self.degraded_fraction,
        }


def _fit_t2(curve: CoherenceCurve) -> float:
    try:
        fit = fit_decay(curve)
    except EseemError:
        return math.nan
    return math.inf if fit.no_decay else fit.t2_us


def convergence_study(
    ctx: RunContext,
    r_bath_values: tuple = (),
    cap_values: tuple = (),
) -> ConvergenceReport:
    """T2 at every order up to the policy's, plus knob sensitivities.

    Per-order T2 values come from the cumulative curves of a single run;
    radius and cap sensitivities re-run the expansion per setting.
    """
    result = coherence_at(ctx)
    span = float(result.total.times_us[-1])
    fixed = replace(ctx, t_max_us=span)

    t2_by_order = {
        n: _fit_t2(result.cumulative[n]) for n in sorted(result.cumulative)
    }
    t2_by_r_bath = []
    for r in r_bath_values:
        sub = replace(fixed, policy=replace(ctx.policy, r_bath_ang=float(r)))
        t2_by_r_bath.append((float(r), _fit_t2(coherence_at(sub).total)))
    t2_by_cap = []
    for cap in cap_values:
        sub = replace(fixed, policy=replace(ctx.policy, max_clusters_per_order=int(cap)))
        t2_by_cap.append((int(cap), _fit_t2(coherence_at(sub).total)))

    return ConvergenceReport(
        point=ctx.field.vector[2],
        t2_by_order=t2_by_order,
        t2_by_r_bath=t2_by_r_bath,
        t2_by_cap=t2_by_cap,
        degraded_fraction=result.degraded_fraction,
    )


# ---------------------------------------------------------------------------
# ablations


def ablate_bath(variant: str, bath: list[BathSpin]) -> list[BathSpin]:
    """Bath with a species or shell removed; order is preserved."""
    if variant == "nitrogen_only":
        out = [s for s in bath if s.species.label.startswith("N")]
    elif variant == "boron_only":
        out = [s for s in bath if s.species.label.startswith("B")]
    elif variant == "drop_first_shell":
        first = {
            i for i, s in enumerate(bath)
            if s.species.label.startswith("N")
            and float(np.linalg.norm(s.position)) < 2.0
        }
        out = [s for i, s in enumerate(bath) if i not in first]
    else:
        raise SweepError(f"unknown ablation variant {variant!r}")
    if not out:
        raise SweepError(f"ablation {variant!r} leaves an empty bath")
    return out


def ablation_curves(
    variant: str, ctx: RunContext, t_max_us: float | None = None
) -> GcceResult:
    """Coherence of the ablated bath under the identical policy.

    Polarization assignments do not carry over (bath indices change), so the
    ablated run uses the default maximally mixed bath state.
    """
    sub_bath = ablate_bath(variant, ctx.bath)
    sub = replace(ctx, bath=sub_bath, bath_state=BathState(),
                  t_max_us=t_max_us if t_max_us is not None else ctx.t_max_us)
    return coherence_at(sub)
