"""Brute-force full-Hilbert-space Hahn-echo propagation.

Ground truth for the cluster expansion: the full density matrix of the
electron plus the entire bath is evolved through the echo sequence with a
single eigendecomposition per run, no cluster approximation and no division
tricks.  Deliberately kept as a separate code path from the engine (density
matrices instead of batched pure states) so the two routes stay independent
checks of one another.  Practical only for small baths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bath import pair_couplings
from .cce import BathState, CoherenceCurve, _electron_frames
from .spin_model import (
    BathSpin,
    CentralSpinParams,
    MagneticField,
    build_cluster_hamiltonian,
    cluster_dims,
)


class OracleLimitError(ValueError):
    """Bath exceeds the exact-propagation dimension cap."""


@dataclass(frozen=True)
class OracleLimit:
    max_dim: int = 4096

    def __post_init__(self):
        if self.max_dim < 3:
            raise OracleLimitError("oracle max_dim must be at least 3")


def _full_density_matrix(spins, bath_state: BathState):
    rho = np.eye(1, dtype=complex)
    for idx, spin in enumerate(spins):
        w, v = bath_state.spin_state(idx, spin)
        rho = np.kron(rho, (v * w) @ v.conj().T)
    return rho


def exact_coherence(
    central: CentralSpinParams,
    bath: list[BathSpin],
    field: MagneticField,
    times_us,
    mode: str = "full",
    bath_state: BathState | None = None,
    limit: OracleLimit = OracleLimit(),
    r_pair_ang: float = 8.0,
    return_states: bool = False,
):
    """Exact Hahn-echo coherence of the whole bath.

    Returns a normalized CoherenceCurve; with ``return_states`` also returns
    the list of full density matrices rho(t) for invariant checks.
    """
    bath_state = bath_state or BathState()
    dims = cluster_dims(bath)
    dim = int(np.prod(dims))
    if dim > limit.max_dim:
        raise OracleLimitError(
            f"bath dimension {dim} exceeds oracle limit {limit.max_dim}"
        )
    pairs = pair_couplings(bath, None, r_pair_ang)
    h = build_cluster_hamiltonian(central, bath, pairs, field, mode, limit.max_dim)

    plus, pulse_e, sigma_e = _electron_frames(central, field)
    d_bath = dim // 3
    eye_b = np.eye(d_bath, dtype=complex)
    rho_e = np.outer(plus, plus.conj())
    rho0 = np.kron(rho_e, _full_density_matrix(bath, bath_state))
    pulse = np.kron(pulse_e, eye_b)
    sigma = np.kron(sigma_e, eye_b)

    evals, v = np.linalg.eigh(h)
    rho0_e = v.conj().T @ rho0 @ v
    w_mat = v.conj().T @ pulse @ v
    obs = v.conj().T @ sigma @ v

    times = np.asarray(times_us, dtype=float)
    values = np.empty(len(times), dtype=complex)
    states = [] if return_states else None
    for k, t in enumerate(times):
        phase = np.exp(-2j * np.pi * evals * (t / 2.0))
        m = (phase[:, None] * w_mat) * phase[None, :]
        rho_t = m @ rho0_e @ m.conj().T
        values[k] = np.trace(obs @ rho_t)
        if return_states:
            states.append(v @ rho_t @ v.conj().T)

    curve = CoherenceCurve(
        times_us=times,
        values=values / values[0],
        normalized=True,
        raw_l0_magnitude=abs(values[0]),
    )
    return (curve, states) if return_states else curve


def reduced_electron_state(rho: np.ndarray) -> np.ndarray:
    """Partial trace over the bath of a full (3 d_b x 3 d_b) density matrix."""
    dim = rho.shape[0]
    d_bath = dim // 3
    return np.einsum("aibi->ab", rho.reshape(3, d_bath, 3, d_bath))
