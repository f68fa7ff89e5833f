"""Analytical ESEEM, decay fitting and modulation-spectrum extraction.

The first-order echo-envelope-modulation formula for a pure-dephasing
(pseudo-secular) coupling is evaluated in closed form,

    L1(t) = prod_i [ 1 - 8/3 I_i(I_i+1) k_i^2
                     sin^2( sqrt((w_i + A_par)^2 + A_perp^2) t/4 )
                     sin^2( w_i t/4 ) ],

    k^2 = A_perp^2 / ((w_i + A_par)^2 + A_perp^2),

with w_i the signed nuclear Larmor frequency g_N mu_N B_z, A_par = A_zz and
A_perp = sqrt(A_zx^2 + A_zy^2).  Frequencies are linear (MHz), times are
microseconds, so the sine arguments carry an explicit 2 pi.  The formula is
exact for spin-1/2 and a (0, -1) qubit; for I >= 1 with quadrupole coupling
it is a known approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from .constants import MU_B_MHZ_PER_MT, MU_N_MHZ_PER_MT
from .cce import CoherenceCurve
from .spin_model import BathSpin, CentralSpinParams, MagneticField


class EseemError(ValueError):
    pass


class GslacVicinityError(EseemError):
    """Effective-coupling estimate requested too close to the anticrossing."""


# ---------------------------------------------------------------------------
# first-order ESEEM


@dataclass(frozen=True)
class EseemParams:
    """Single-spin inputs of the first-order ESEEM product formula."""

    spin_i: float
    k2: float
    omega_mhz: float  # signed Larmor frequency g_N mu_N B_z
    a_par_mhz: float
    a_perp_mhz: float

    def __post_init__(self):
        if not 0.0 <= self.k2 <= 1.0:
            raise EseemError(f"modulation depth k^2 = {self.k2} outside [0, 1]")
        if self.a_perp_mhz == 0.0 and self.k2 != 0.0:
            raise EseemError("k^2 must vanish when A_perp = 0")


def eseem_params_for(spin: BathSpin, field: MagneticField) -> EseemParams:
    """ESEEM parameters of one bath spin for a field along the c axis."""
    b = field.vector
    if abs(b[0]) > 1e-12 or abs(b[1]) > 1e-12:
        raise EseemError("ESEEM formula implemented for B parallel to c only")
    omega = spin.species.g_n * MU_N_MHZ_PER_MT * b[2]
    a_par = spin.a_mhz[2, 2]
    a_perp = math.hypot(spin.a_mhz[2, 0], spin.a_mhz[2, 1])
    denom = (omega + a_par) ** 2 + a_perp**2
    k2 = a_perp**2 / denom if denom > 0 else 0.0
    return EseemParams(
        spin_i=spin.species.spin_i, k2=k2, omega_mhz=omega,
        a_par_mhz=a_par, a_perp_mhz=a_perp,
    )


def eseem_factor(params: EseemParams, times_us) -> np.ndarray:
    """Single-spin modulation factor of the first-order ESEEM product."""
    t = np.asarray(times_us, dtype=float)
    nu_branch = math.hypot(params.omega_mhz + params.a_par_mhz, params.a_perp_mhz)
    depth = 8.0 / 3.0 * params.spin_i * (params.spin_i + 1.0) * params.k2
    return 1.0 - depth * (
        np.sin(2.0 * np.pi * nu_branch * t / 4.0) ** 2
        * np.sin(2.0 * np.pi * params.omega_mhz * t / 4.0) ** 2
    )


def eseem_L1(params: list[EseemParams], times_us) -> np.ndarray:
    """Product of single-spin factors; the first-order coherence envelope."""
    t = np.asarray(times_us, dtype=float)
    out = np.ones_like(t)
    for p in params:
        out = out * eseem_factor(p, t)
    return out


# ---------------------------------------------------------------------------
# effective electron-mediated nuclear coupling


def effective_flip_coupling(
    a1_mhz: np.ndarray,
    a2_mhz: np.ndarray,
    central: CentralSpinParams,
    field: MagneticField,
) -> float:
    """Magnitude estimate of the electron-mediated two-nucleus coupling (MHz).

    Second-order scaling: product of the two nonsecular (S_x, S_y row)
    hyperfine norms over the qubit energy gap |D - g_e mu_B B_z|.  A region
    diagnostic, not a propagation input.
    """
    gap = abs(central.d_mhz - central.g_e * MU_B_MHZ_PER_MT * field.vector[2])
    if gap <= 1.0:
        raise GslacVicinityError(
            f"qubit gap {gap:.3g} MHz is inside the anticrossing vicinity"
        )
    n1 = float(np.linalg.norm(np.asarray(a1_mhz)[0:2, :]))
    n2 = float(np.linalg.norm(np.asarray(a2_mhz)[0:2, :]))
    return n1 * n2 / gap


# ---------------------------------------------------------------------------
# decay fitting


@dataclass(frozen=True)
class FitResult:
    """Stretched-exponential fit A exp(-(t/T2)^n) of a coherence envelope."""

    t2_us: float
    stretch_n: float
    amplitude: float
    residual_rms: float
    no_decay: bool = False


def _local_maxima(y: np.ndarray) -> np.ndarray:
    idx = [0] if len(y) < 3 or y[0] >= y[1] else []
    for k in range(1, len(y) - 1):
        if y[k] >= y[k - 1] and y[k] >= y[k + 1] and (y[k] > y[k - 1] or y[k] > y[k + 1]):
            idx.append(k)
    return np.array(sorted(set(idx)), dtype=int)


def _stretched(t, amp, t2, n):
    return amp * np.exp(-((t / t2) ** n))


def fit_decay(curve: CoherenceCurve) -> FitResult:
    """Fit |L(t)| to A exp(-(t/T2)^n) over its envelope.

    Modulated curves (modulation depth > 0.1) are fitted through their local
    maxima, smooth curves directly.  The fit window ends where the envelope
    first drops below 0.05 (windowing on raw |L| would end at the first
    modulation node instead of at actual decay).  A curve whose envelope
    still exceeds 0.9 near the final time returns a ``no_decay`` result
    instead of raising.
    """
    if not curve.normalized:
        raise EseemError("fit_decay expects a normalized curve")
    t = np.asarray(curve.times_us, dtype=float)
    y = curve.magnitude()
    if len(t) < 20:
        raise EseemError("need at least 20 samples to fit a decay")

    tail = y[int(0.9 * len(y)):]
    if len(tail) and float(np.max(tail)) > 0.9:
        return FitResult(
            t2_us=math.inf, stretch_n=1.0, amplitude=float(y[0]),
            residual_rms=0.0, no_decay=True,
        )

    max_idx = _local_maxima(y)
    use_envelope = False
    if len(max_idx) >= 4:
        env = np.interp(t, t[max_idx], y[max_idx])
        depth = 1.0 - float(np.min(y / np.maximum(env, 1e-12)))
        use_envelope = depth > 0.1
    if use_envelope:
        t_ser, y_ser = t[max_idx], y[max_idx]
    else:
        t_ser, y_ser = t, y

    below = np.nonzero(y_ser < 0.05)[0]
    end = int(below[0]) + 1 if len(below) else len(y_ser)
    end = max(end, min(8 if use_envelope else 20, len(y_ser)))
    t_fit, y_fit = t_ser[:end], y_ser[:end]
    if len(t_fit) < 4:
        raise EseemError("too few envelope samples to fit a decay")

    amp0 = min(max(float(y_fit[0]), 0.3), 1.2)
    target = amp0 / math.e
    cross = np.nonzero(y_fit < target)[0]
    t2_0 = float(t_fit[cross[0]]) if len(cross) else float(t_fit[-1]) / 2.0
    t2_0 = max(t2_0, 1e-9)
    try:
        popt, _ = curve_fit(
            _stretched, t_fit, y_fit,
            p0=[amp0, t2_0, 2.0],
            bounds=([0.2, 1e-12, 0.5], [1.2, 1e9, 4.0]),
            maxfev=20000,
        )
    except RuntimeError as exc:
        raise EseemError(f"decay fit did not converge: {exc}") from exc
    amp, t2, n = popt
    resid = y_fit - _stretched(t_fit, *popt)
    return FitResult(
        t2_us=float(t2), stretch_n=float(n), amplitude=float(amp),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


# ---------------------------------------------------------------------------
# modulation spectrum


def modulation_spectrum(
    curve: CoherenceCurve,
    nyquist_floor_mhz: float = 100.0,
    threshold: float = 0.05,
) -> list[tuple[float, float]]:
    """Peaks of the Fourier magnitude of |L(t)| after envelope removal.

    The envelope is interpolated through local maxima of |L| and subtracted,
    which strips both the decay and slow beats so that fast coherent
    modulation stands out.  Returns (frequency MHz, weight) pairs sorted by
    descending weight; peak positions are refined by parabolic
    interpolation.  A constant curve yields an empty list.
    """
    t = np.asarray(curve.times_us, dtype=float)
    y = curve.magnitude()
    if len(t) < 8:
        raise EseemError("time grid too short for a spectrum")
    dt = np.diff(t)
    if np.max(np.abs(dt - dt[0])) > 1e-9 * max(abs(t[-1]), 1.0):
        raise EseemError("modulation_spectrum requires a uniform time grid")
    nyquist = 0.5 / dt[0]
    if nyquist < nyquist_floor_mhz:
        raise EseemError(
            f"grid too coarse: Nyquist {nyquist:.1f} MHz below "
            f"{nyquist_floor_mhz:.1f} MHz"
        )

    max_idx = _local_maxima(y)
    if len(max_idx) >= 3:
        env = np.interp(t, t[max_idx], y[max_idx])
    else:
        env = np.full_like(y, float(np.mean(y)))
    resid = y - env
    resid = resid - resid.mean()
    if np.max(np.abs(resid)) < 1e-12 * max(float(np.max(y)), 1.0):
        return []

    window = np.hanning(len(resid))
    mag = np.abs(np.fft.rfft(resid * window))
    freqs = np.fft.rfftfreq(len(resid), d=dt[0])

    floor = threshold * float(np.max(mag))
    peaks = []
    for k in range(2, len(mag) - 1):
        if mag[k] >= mag[k - 1] and mag[k] >= mag[k + 1] and mag[k] > floor:
            denom = mag[k - 1] - 2.0 * mag[k] + mag[k + 1]
            shift = 0.5 * (mag[k - 1] - mag[k + 1]) / denom if denom != 0 else 0.0
            f = freqs[k] + shift * (freqs[1] - freqs[0])
            peaks.append((float(f), float(mag[k])))
    peaks.sort(key=lambda p: -p[1])
    return peaks
