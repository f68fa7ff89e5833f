"""Spin-system value types and cluster Hamiltonian assembly.

The central spin is the S = 1 electron spin of a boron-vacancy defect; bath
spins are lattice nuclei.  A "cluster" Hamiltonian acts on the Hilbert space
electron x nucleus_1 x ... x nucleus_n, with the electron factor first and
nuclei in the order given.  The full Hamiltonian is

    H = D (Sz^2 - S(S+1)/3) + E/2 (S+^2 + S-^2) + g_e mu_B B.S
        - sum_i g_N^i mu_N B.I_i + sum_i I_i.Q_i.I_i
        + sum_(i<j) I_i.J_ij.I_j + sum_i S.A_i.I_i

in MHz, with B in mT.  In ``pseudo_secular`` mode the hyperfine term keeps
only Sz (x) (A_zx Ix + A_zy Iy + A_zz Iz), which forbids electron spin flips
driven by the bath.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from functools import lru_cache

import numpy as np

from .constants import (
    G_ELECTRON,
    MU_B_MHZ_PER_MT,
    MU_N_MHZ_PER_MT,
    NUCLEAR_TABLE,
)

#: spin quantum numbers the code accepts.  1/2, 1 and 3/2 cover 15N, 14N and
#: 11B; 3 is included so that natural-boron baths (19.9% 10B) remain usable.
SUPPORTED_SPINS = (0.5, 1.0, 1.5, 3.0)


class SpinModelError(ValueError):
    """Invalid spin-system input (bad tensor, bad level choice, ...)."""


class ClusterTooLargeError(SpinModelError):
    """Cluster Hilbert-space dimension exceeds the configured cap."""


# ---------------------------------------------------------------------------
# spin operators


@lru_cache(maxsize=None)
def _spin_matrices_cached(twice_i: int):
    i = twice_i / 2.0
    dim = twice_i + 1
    m = i - np.arange(dim)  # basis ordered m = +I ... -I
    iz = np.diag(m).astype(complex)
    # <m+1| I+ |m> = sqrt(I(I+1) - m(m+1))
    raise_elems = np.sqrt(i * (i + 1) - m[1:] * (m[1:] + 1))
    iplus = np.zeros((dim, dim), dtype=complex)
    iplus[np.arange(dim - 1), np.arange(1, dim)] = raise_elems
    ix = (iplus + iplus.conj().T) / 2.0
    iy = (iplus - iplus.conj().T) / 2.0j
    for op in (ix, iy, iz, iplus):
        op.setflags(write=False)
    return ix, iy, iz, iplus


def spin_matrices(spin: float):
    """Return (Ix, Iy, Iz) for a spin quantum number, basis m = +I ... -I."""
    twice = round(2 * spin)
    if not np.isclose(twice, 2 * spin) or twice < 1:
        raise SpinModelError(f"not a half-integer spin: {spin}")
    return _spin_matrices_cached(twice)[:3]


def spin_raising(spin: float):
    return _spin_matrices_cached(round(2 * spin))[3]


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class SpinSpecies:
    """Nuclear isotope identity: spin, g-factor, quadrupole constant."""

    label: str
    spin_i: float
    g_n: float
    c_q_mhz: float = 0.0

    def __post_init__(self):
        if self.spin_i not in SUPPORTED_SPINS:
            raise SpinModelError(
                f"{self.label}: unsupported nuclear spin {self.spin_i}"
            )
        if self.spin_i == 0.5 and self.c_q_mhz != 0.0:
            raise SpinModelError(
                f"{self.label}: quadrupole coupling is undefined for I = 1/2"
            )

    @property
    def dim(self) -> int:
        return round(2 * self.spin_i) + 1


def make_species(name: str, c_q_mhz: float | None = None) -> SpinSpecies:
    """Species from the nuclear data table; ``c_q_mhz`` overrides the table.

    14N carries no table default for C_q and requires an explicit value
    (pass 0.0 to switch the quadrupole interaction off deliberately).
    """
    try:
        row = NUCLEAR_TABLE[name]
    except KeyError:
        raise SpinModelError(f"unknown isotope {name!r}") from None
    cq = row["c_q_mhz"] if c_q_mhz is None else c_q_mhz
    if cq is None:
        raise SpinModelError(
            f"{name}: quadrupole constant not tabulated, pass c_q_mhz explicitly"
        )
    return SpinSpecies(label=name, spin_i=row["spin"], g_n=row["g"], c_q_mhz=cq)


@dataclass(frozen=True)
class CentralSpinParams:
    """Electron spin (S = 1) parameters and the qubit level choice."""

    d_mhz: float = 3470.0
    e_mhz: float = 50.0
    g_e: float = G_ELECTRON
    qubit_levels: tuple[int, int] = (0, -1)
    spin_s: float = 1.0

    def __post_init__(self):
        if self.spin_s != 1.0:
            raise SpinModelError("only S = 1 central spins are supported")
        q0, q1 = self.qubit_levels
        if q0 == q1 or {q0, q1} - {-1, 0, 1}:
            raise SpinModelError(
                f"qubit levels must be two distinct m_S values: {self.qubit_levels}"
            )


@dataclass(frozen=True)
class MagneticField:
    """External magnetic field vector in mT."""

    b_mt: tuple[float, float, float]

    def __post_init__(self):
        if len(self.b_mt) != 3 or not np.all(np.isfinite(self.b_mt)):
            raise SpinModelError(f"bad field vector {self.b_mt}")
        object.__setattr__(self, "b_mt", tuple(float(b) for b in self.b_mt))

    @classmethod
    def along_c(cls, bz_mt: float) -> "MagneticField":
        return cls((0.0, 0.0, float(bz_mt)))

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.b_mt)


_Q_TOL = 1e-9


@dataclass(frozen=True)
class BathSpin:
    """One lattice nuclear spin with its coupling tensors (MHz, angstrom)."""

    position: tuple[float, float, float]
    species: SpinSpecies
    a_mhz: np.ndarray
    q_mhz: np.ndarray = dataclass_field(default=None)

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (3,):
            raise SpinModelError("position must be a 3-vector")
        object.__setattr__(self, "position", tuple(pos))
        a = np.array(self.a_mhz, dtype=float)
        if a.shape != (3, 3):
            raise SpinModelError("hyperfine tensor must be 3x3")
        a.setflags(write=False)
        object.__setattr__(self, "a_mhz", a)
        q = self.q_mhz
        q = np.zeros((3, 3)) if q is None else np.array(q, dtype=float)
        if q.shape != (3, 3):
            raise SpinModelError("quadrupole tensor must be 3x3")
        if np.max(np.abs(q - q.T)) > _Q_TOL or abs(np.trace(q)) > _Q_TOL:
            raise SpinModelError("quadrupole tensor must be symmetric traceless")
        q.setflags(write=False)
        object.__setattr__(self, "q_mhz", q)


@dataclass(frozen=True)
class PairCoupling:
    """Nuclear dipole-dipole coupling tensor between bath spins i < j."""

    i: int
    j: int
    j_mhz: np.ndarray

    def __post_init__(self):
        t = np.array(self.j_mhz, dtype=float)
        if t.shape != (3, 3):
            raise SpinModelError("pair coupling tensor must be 3x3")
        t.setflags(write=False)
        object.__setattr__(self, "j_mhz", t)


def quadrupole_tensor(species: SpinSpecies) -> np.ndarray:
    """Axially symmetric quadrupole tensor along c from the scalar C_q.

    I.Q.I with Q = C_q / (4 I (2I - 1)) diag(-1, -1, 2) equals the standard
    C_q/(4I(2I-1)) [3 Iz^2 - I(I+1)] form.  Zero for I = 1/2.
    """
    i = species.spin_i
    if i < 1.0 or species.c_q_mhz == 0.0:
        return np.zeros((3, 3))
    q = species.c_q_mhz / (4.0 * i * (2.0 * i - 1.0))
    return q * np.diag([-1.0, -1.0, 2.0])


# ---------------------------------------------------------------------------
# operator embedding


def _embed(ops_by_slot: dict[int, np.ndarray], dims: list[int]) -> np.ndarray:
    """Kronecker product placing each operator at its tensor slot."""
    out = np.ones((1, 1), dtype=complex)
    for slot, d in enumerate(dims):
        op = ops_by_slot.get(slot)
        out = np.kron(out, op if op is not None else np.eye(d))
    return out


def electron_level_index(m_s: int) -> int:
    """Basis index of an m_S level; electron basis ordered (+1, 0, -1)."""
    return 1 - m_s


def cluster_dims(spins: list[BathSpin]) -> list[int]:
    return [3] + [s.species.dim for s in spins]


def build_cluster_hamiltonian(
    central: CentralSpinParams,
    spins: list[BathSpin],
    pairs: list[PairCoupling],
    field: MagneticField,
    mode: str = "full",
    hilbert_cap: int = 4096,
) -> np.ndarray:
    """Assemble the cluster Hamiltonian (MHz) for the electron plus ``spins``.

    Parameters
    ----------
    pairs : nuclear dipole tensors; indices refer to positions in ``spins``.
    mode : "full" keeps the complete hyperfine tensors, "pseudo_secular"
        keeps only the Sz (x) (A_zx, A_zy, A_zz).I row.
    hilbert_cap : maximum allowed matrix dimension.

    Returns a Hermitian ``dim x dim`` complex array with
    dim = 3 prod_i (2 I_i + 1).
    """
    if mode not in ("full", "pseudo_secular"):
        raise SpinModelError(f"unknown hyperfine mode {mode!r}")
    dims = cluster_dims(spins)
    dim = int(np.prod(dims))
    if dim > hilbert_cap:
        raise ClusterTooLargeError(
            f"cluster too large: dimension {dim} exceeds cap {hilbert_cap}"
        )
    for p in pairs:
        if not (0 <= p.i < len(spins) and 0 <= p.j < len(spins)) or p.i == p.j:
            raise SpinModelError(f"pair index ({p.i}, {p.j}) out of range")

    sx, sy, sz = spin_matrices(1.0)
    splus = spin_raising(1.0)
    b = field.vector

    # electron: zero-field splitting + Zeeman
    h_e = central.d_mhz * (sz @ sz - (2.0 / 3.0) * np.eye(3))
    h_e = h_e + 0.5 * central.e_mhz * (splus @ splus + splus.conj().T @ splus.conj().T)
    h_e = h_e + central.g_e * MU_B_MHZ_PER_MT * (b[0] * sx + b[1] * sy + b[2] * sz)
    h = _embed({0: h_e}, dims)

    s_ops = (sx, sy, sz)
    for k, spin in enumerate(spins):
        slot = k + 1
        ix, iy, iz = spin_matrices(spin.species.spin_i)
        i_ops = (ix, iy, iz)
        local = -spin.species.g_n * MU_N_MHZ_PER_MT * (
            b[0] * ix + b[1] * iy + b[2] * iz
        )
        q = spin.q_mhz
        for a in range(3):
            for c in range(3):
                if q[a, c] != 0.0:
                    local = local + q[a, c] * (i_ops[a] @ i_ops[c])
        h = h + _embed({slot: local}, dims)

        a_t = spin.a_mhz
        if mode == "pseudo_secular":
            vec = a_t[2, 0] * ix + a_t[2, 1] * iy + a_t[2, 2] * iz
            h = h + _embed({0: sz, slot: vec}, dims)
        else:
            for a in range(3):
                vec = a_t[a, 0] * ix + a_t[a, 1] * iy + a_t[a, 2] * iz
                if np.any(vec):
                    h = h + _embed({0: s_ops[a], slot: vec}, dims)

    for p in pairs:
        ops_i = spin_matrices(spins[p.i].species.spin_i)
        ops_j = spin_matrices(spins[p.j].species.spin_i)
        for a in range(3):
            for c in range(3):
                if p.j_mhz[a, c] != 0.0:
                    h = h + p.j_mhz[a, c] * _embed(
                        {p.i + 1: ops_i[a], p.j + 1: ops_j[c]}, dims
                    )
    return h


# ---------------------------------------------------------------------------
# small diagnostics


def zeeman_splitting(species: SpinSpecies, field: MagneticField) -> float:
    """Nuclear Zeeman splitting per unit m change, |g_N mu_N B| in MHz."""
    return abs(species.g_n) * MU_N_MHZ_PER_MT * float(np.linalg.norm(field.vector))


def gslac_field(central: CentralSpinParams) -> float:
    """Field (mT) where the m_S = 0 and m_S = -1 branches cross, D/(g_e mu_B)."""
    if central.d_mhz < 0:
        raise SpinModelError("gslac_field expects D >= 0")
    return central.d_mhz / (central.g_e * MU_B_MHZ_PER_MT)
