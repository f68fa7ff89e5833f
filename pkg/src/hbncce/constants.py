"""Physical constants and the nuclear data table.

All simulation quantities are kept in linear-frequency units: Hamiltonian
matrix elements in MHz, magnetic fields in mT, distances in angstrom and
times in microseconds.  Propagators are formed as exp(-i 2 pi H t).

Base values are CODATA-2018; nuclear g-factors and quadrupole moments come
from the standard nuclear-moment compilations (Stone).  Nothing in here is
fitted.  Bump ``CONSTANTS_VERSION`` whenever a value changes so that run
provenance records stay meaningful.
"""

from __future__ import annotations

CONSTANTS_VERSION = "2018-codata/stone-2016.v1"

# CODATA-2018 base values (SI).
PLANCK_J_S = 6.62607015e-34          # J s (exact)
MU_B_J_PER_T = 9.2740100783e-24      # J/T
MU_N_J_PER_T = 5.0507837461e-27      # J/T
MU0_OVER_4PI = 1.0e-7                # T^2 m^3 / J

# Free-electron g-factor magnitude, used as a positive number so that the
# electron Zeeman term reads +g_e mu_B B.S as in the spin Hamiltonian.
G_ELECTRON = 2.0023

# Derived linear-frequency unit factors.
MU_B_MHZ_PER_MT = MU_B_J_PER_T / PLANCK_J_S * 1e-9   # (Hz/T -> MHz/mT)
MU_N_MHZ_PER_MT = MU_N_J_PER_T / PLANCK_J_S * 1e-9

# Dipole-dipole prefactors in MHz angstrom^3 (per unit g-factor product):
#   nuclear-nuclear:   (mu0/4pi) mu_N^2 / h
#   electron-nuclear:  (mu0/4pi) mu_B mu_N / h
DIPOLAR_NN_MHZ_A3 = MU0_OVER_4PI * MU_N_J_PER_T**2 / PLANCK_J_S * 1e24
DIPOLAR_EN_MHZ_A3 = MU0_OVER_4PI * MU_B_J_PER_T * MU_N_J_PER_T / PLANCK_J_S * 1e24

# Nuclear data table: spin quantum number, g-factor (mu/I in units of mu_N),
# and the quadrupole coupling constant C_q (MHz) of the nucleus sitting on a
# bulk hBN lattice site.  C_q of 11B is the ab initio bulk value; 10B is the
# 11B value scaled by the ratio of the nuclear quadrupole moments
# Q(10B)/Q(11B) = 84.59 mb / 40.59 mb.  C_q of 14N in hBN is not pinned here
# and must be supplied by the caller (see IsotopeConfig); 15N has I = 1/2 and
# no quadrupole moment.
NUCLEAR_TABLE = {
    "B11": {"spin": 1.5, "g": 1.7924, "c_q_mhz": 3.72},
    "B10": {"spin": 3.0, "g": 0.6002, "c_q_mhz": 3.72 * 84.59 / 40.59},
    "N15": {"spin": 0.5, "g": -0.5664, "c_q_mhz": 0.0},
    "N14": {"spin": 1.0, "g": 0.4038, "c_q_mhz": None},
}

# Natural isotopic abundances of the two elements in hBN.
NATURAL_ABUNDANCE = {
    "B": {"B11": 0.801, "B10": 0.199},
    "N": {"N14": 0.996, "N15": 0.004},
}


def electron_zeeman_mhz_per_mt(g_e: float = G_ELECTRON) -> float:
    """Electron Zeeman energy per mT of field, in MHz (about 28.02)."""
    return g_e * MU_B_MHZ_PER_MT
