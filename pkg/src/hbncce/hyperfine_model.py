"""Model hyperfine dataset for the boron-vacancy bath.

The production workflow ingests a first-principles hyperfine dataset from a
CSV file.  When no such file is available, this module generates a
physically motivated stand-in: the defect's spin density is represented as
point sources on the three first-neighbor nitrogens plus the six
fourth-neighbor nitrogens, distant sites get the point-dipole field of
those sources, and the strongly coupled first shell is parameterized
directly in its local (radial, tangential, c) frame.

Anchor values: the first-neighbor nitrogen A_zz is pinned to 47.14 MHz for
the 14N reference, in-plane sites have exactly vanishing z-mixing elements,
and the three first-shell tensors are related by 120-degree rotations about
the c axis.  Remaining parameters set the overall noise scale and are
calibrated against known coherence-time behavior; they are free model
inputs, not first-principles results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bath import HyperfineDataset, LatticeSpec, lattice_sites
from .constants import DIPOLAR_EN_MHZ_A3, G_ELECTRON, NUCLEAR_TABLE

#: electron spin of the defect; point-source weights sum to 2S.
_TWO_S = 2.0


@dataclass(frozen=True)
class HyperfineModelParams:
    """Knobs of the model dataset (tensors in MHz for 11B / 14N references)."""

    # anchor: first-neighbor nitrogen A_zz (14N)
    n1_azz: float = 47.14
    # first-neighbor nitrogen local tensor, radial and tangential components;
    # calibrated against the coherence-time anchors and the 67 MHz
    # modulation line (see README)
    n1_arr: float = 80.0
    n1_att: float = 25.0
    # spin-density weight on each first-neighbor nitrogen (of 2S = 2 total)
    w_first: float = 0.55
    # fourth-neighbor nitrogen on-site terms: isotropic contact and the
    # p_z-like anisotropy b entering b * diag(-1, -1, 2)
    n4_aiso: float = 2.5
    n4_adip: float = 0.75

    def w_fourth(self) -> float:
        return (_TWO_S - 3.0 * self.w_first) / 6.0


def _first_shell_positions(lattice: LatticeSpec) -> np.ndarray:
    a = lattice.a_ang
    d = a / np.sqrt(3.0)
    angles = np.deg2rad([90.0, 210.0, 330.0])
    return np.stack([d * np.cos(angles), d * np.sin(angles), np.zeros(3)], axis=1)


def _rotated_first_shell_tensor(pos: np.ndarray, params: HyperfineModelParams):
    """diag(A_rr, A_tt, A_zz) in the site's local frame, rotated to crystal."""
    r_hat = -pos / np.linalg.norm(pos)  # radial: site toward vacancy
    z_hat = np.array([0.0, 0.0, 1.0])
    t_hat = np.cross(z_hat, r_hat)
    rot = np.stack([r_hat, t_hat, z_hat], axis=1)
    local = np.diag([params.n1_arr, params.n1_att, params.n1_azz])
    return rot @ local @ rot.T


def build_model_dataset(
    lattice: LatticeSpec,
    coverage_radius_ang: float,
    params: HyperfineModelParams | None = None,
) -> HyperfineDataset:
    """Generate the model dataset covering sites within ``coverage_radius_ang``."""
    params = params or HyperfineModelParams()
    if params.w_fourth() < 0:
        raise ValueError("w_first too large: negative fourth-neighbor weight")

    a = lattice.a_ang
    d1 = a / np.sqrt(3.0)
    d4 = a * np.sqrt(7.0 / 3.0)

    # spin-density sources live on the first and fourth nitrogen shells;
    # derive them from a lattice patch wide enough even when the requested
    # coverage is tiny
    src_pos, src_elem = lattice_sites(lattice, radius=max(d4 + 0.5, coverage_radius_ang))
    src_d = np.linalg.norm(src_pos, axis=1)
    src_plane = np.abs(src_pos[:, 2]) < 1e-6
    src_n = np.array([e == "N" for e in src_elem])
    n1_src = src_n & src_plane & (np.abs(src_d - d1) < 1e-3)
    n4_src = src_n & src_plane & (np.abs(src_d - d4) < 1e-3)
    if n1_src.sum() != 3 or n4_src.sum() != 6:
        raise ValueError(
            f"unexpected shell multiplicities: {n1_src.sum()} first-neighbor, "
            f"{n4_src.sum()} fourth-neighbor nitrogens"
        )
    sources = np.vstack([src_pos[n1_src], src_pos[n4_src]])
    weights = np.concatenate(
        [np.full(3, params.w_first), np.full(6, params.w_fourth())]
    )

    positions, elements = lattice_sites(lattice, radius=coverage_radius_ang)
    dists = np.linalg.norm(positions, axis=1)
    in_plane = np.abs(positions[:, 2]) < 1e-6
    is_n = np.array([e == "N" for e in elements])
    n1_mask = is_n & in_plane & (np.abs(dists - d1) < 1e-3)
    n4_mask = is_n & in_plane & (np.abs(dists - d4) < 1e-3)

    # point-dipole field of all sources at every site (site, source, 3, 3)
    sep = positions[:, None, :] - sources[None, :, :]
    r = np.linalg.norm(sep, axis=2)
    self_site = r < 1e-6
    r_safe = np.where(self_site, 1.0, r)
    n_hat = sep / r_safe[:, :, None]
    kernel = 3.0 * np.einsum("spa,spb->spab", n_hat, n_hat) - np.eye(3)
    contrib = kernel * (weights / _TWO_S / r_safe**3)[:, :, None, None]
    contrib[self_site] = 0.0
    dip = contrib.sum(axis=1)  # per-site geometric factor, unit g_N

    g_ref = {"B": NUCLEAR_TABLE["B11"]["g"], "N": NUCLEAR_TABLE["N14"]["g"]}
    ds = HyperfineDataset(reference_isotopes={"B": "B11", "N": "N14"})
    onsite_n4 = params.n4_aiso * np.eye(3) + params.n4_adip * np.diag([-1.0, -1.0, 2.0])
    for k, (pos, elem) in enumerate(zip(positions, elements)):
        if n1_mask[k]:
            tensor = _rotated_first_shell_tensor(pos, params)
        else:
            tensor = DIPOLAR_EN_MHZ_A3 * G_ELECTRON * g_ref[elem] * dip[k]
            if n4_mask[k]:
                tensor = tensor + onsite_n4
        ds.add(pos, elem, tensor)
    return ds
