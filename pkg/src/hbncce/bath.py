"""hBN nuclear-spin bath construction.

Generates AA'-stacked hBN lattice sites around a boron vacancy, attaches
hyperfine tensors from an ingested first-principles dataset, assigns
isotopes (fixed or natural abundance), fills quadrupole tensors, and
computes nuclear dipole-dipole coupling tensors.

The hyperfine dataset is a CSV with header

    x_ang,y_ang,z_ang,element,Axx,Axy,Axz,Ayx,Ayy,Ayz,Azx,Azy,Azz

with positions in angstrom relative to the vacancy and tensors in MHz for
one reference isotope per element (by default 11B and 14N).  Substituting
another isotope rescales the tensor by the ratio of nuclear g-factors.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .constants import DIPOLAR_NN_MHZ_A3, NATURAL_ABUNDANCE, NUCLEAR_TABLE
from .spin_model import (
    BathSpin,
    PairCoupling,
    SpinModelError,
    SpinSpecies,
    make_species,
    quadrupole_tensor,
)


class BathError(ValueError):
    """Bath generation or dataset ingestion failure."""


# ---------------------------------------------------------------------------
# lattice geometry


@dataclass(frozen=True)
class LatticeSpec:
    """hBN lattice geometry and the bath cutoff radius (angstrom)."""

    a_ang: float = 2.504
    c_interlayer_ang: float = 3.33
    stacking: str = "AA'"
    radius_ang: float = 16.0
    defect_site: str = "boron"

    def __post_init__(self):
        if self.radius_ang <= 0:
            raise BathError("bath radius must be positive")
        if self.stacking != "AA'":
            raise BathError(f"unsupported stacking {self.stacking!r}")
        if self.defect_site != "boron":
            raise BathError("only the boron-vacancy defect site is supported")


def lattice_sites(lattice: LatticeSpec, radius: float | None = None):
    """All lattice sites within ``radius`` of the vacancy (vacancy excluded).

    Returns ``(positions, elements)`` with positions an (N, 3) float array
    and elements a list of "B"/"N" labels.  The vacancy sits at the origin
    on a boron site of layer z = 0.  In AA' stacking, adjacent layers carry
    the two sublattices exchanged, so nitrogen sits directly above boron.
    """
    r = lattice.radius_ang if radius is None else float(radius)
    a = lattice.a_ang
    c = lattice.c_interlayer_ang
    a1 = np.array([a, 0.0, 0.0])
    a2 = np.array([a / 2.0, a * np.sqrt(3.0) / 2.0, 0.0])
    tau = np.array([a / 2.0, a / (2.0 * np.sqrt(3.0)), 0.0])

    n_layers = int(np.floor(r / c))
    m_max = int(np.ceil(r / (a * np.sqrt(3.0) / 2.0))) + 2
    mm, nn = np.meshgrid(np.arange(-m_max, m_max + 1), np.arange(-m_max, m_max + 1))
    bravais = mm.reshape(-1, 1) * a1 + nn.reshape(-1, 1) * a2

    positions = []
    elements = []
    for k in range(-n_layers, n_layers + 1):
        z = np.array([0.0, 0.0, k * c])
        first = bravais + z
        second = bravais + tau + z
        if k % 2 == 0:
            layer_pos = [first, second]
            layer_elem = ["B", "N"]
        else:
            layer_pos = [first, second]
            layer_elem = ["N", "B"]
        for pos, elem in zip(layer_pos, layer_elem):
            keep = np.linalg.norm(pos, axis=1) <= r
            pos = pos[keep]
            for p in pos:
                positions.append(p)
                elements.append(elem)

    positions = np.array(positions).reshape(-1, 3)
    # drop the vacancy site itself
    keep = np.linalg.norm(positions, axis=1) > 1e-6
    positions = positions[keep]
    elements = [e for e, k in zip(elements, keep) if k]
    order = np.lexsort(
        (np.round(positions[:, 0], 6), np.round(positions[:, 1], 6),
         np.round(positions[:, 2], 6))
    )
    return positions[order], [elements[i] for i in order]


# ---------------------------------------------------------------------------
# hyperfine dataset


_POS_TOL = 1e-3  # angstrom; spec'd site-matching tolerance


def _cell_key(pos, element: str):
    return (
        int(round(pos[0] / _POS_TOL)),
        int(round(pos[1] / _POS_TOL)),
        int(round(pos[2] / _POS_TOL)),
        element,
    )


class HyperfineDataset:
    """Site -> hyperfine tensor map for one reference isotope per element."""

    CSV_HEADER = [
        "x_ang", "y_ang", "z_ang", "element",
        "Axx", "Axy", "Axz", "Ayx", "Ayy", "Ayz", "Azx", "Azy", "Azz",
    ]

    def __init__(self, reference_isotopes: dict[str, str] | None = None):
        self.reference_isotopes = dict(reference_isotopes or {"B": "B11", "N": "N14"})
        self._entries: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def add(self, position, element: str, tensor) -> None:
        pos = np.asarray(position, dtype=float)
        t = np.asarray(tensor, dtype=float).reshape(3, 3)
        self._entries[_cell_key(pos, element)] = (pos, t)

    def lookup(self, position, element: str):
        """Tensor at a site, matched within 1e-3 angstrom; None if absent."""
        pos = np.asarray(position, dtype=float)
        base = _cell_key(pos, element)
        hit = self._entries.get(base)
        if hit is not None and np.max(np.abs(hit[0] - pos)) <= _POS_TOL:
            return hit[1]
        # positions near a rounding boundary may land in a neighbor cell
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    key = (base[0] + dx, base[1] + dy, base[2] + dz, element)
                    hit = self._entries.get(key)
                    if hit is not None and np.max(np.abs(hit[0] - pos)) <= _POS_TOL:
                        return hit[1]
        return None

    def items(self):
        return [(pos.copy(), key[3], t.copy()) for key, (pos, t) in self._entries.items()]

    # -- persistence --------------------------------------------------------

    def to_csv(self, path) -> None:
        rows = sorted(
            self._entries.items(), key=lambda kv: (kv[0][2], kv[0][1], kv[0][0], kv[0][3])
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            for key, (pos, t) in rows:
                writer.writerow(
                    [f"{pos[0]:.6f}", f"{pos[1]:.6f}", f"{pos[2]:.6f}", key[3]]
                    + [f"{v:.8g}" for v in t.reshape(9)]
                )

    @classmethod
    def from_csv(cls, path, reference_isotopes=None) -> "HyperfineDataset":
        ds = cls(reference_isotopes)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != cls.CSV_HEADER:
                raise BathError(f"unexpected dataset header in {path}: {header}")
            for row in reader:
                if not row:
                    continue
                pos = [float(row[0]), float(row[1]), float(row[2])]
                elem = row[3].strip()
                if elem not in ("B", "N"):
                    raise BathError(f"unknown element {elem!r} in {path}")
                ds.add(pos, elem, [float(v) for v in row[4:13]])
        return ds

    # -- validation ---------------------------------------------------------

    def detect_defect_layer(self, c_interlayer_ang: float = 3.33) -> float:
        """z-offset of the layer hosting the vacancy.

        Sites in the defect layer have vanishing z-mixing hyperfine elements
        (A_xz, A_yz, A_zx, A_zy); the layer where that holds best is the
        defect layer.  Detected, not assumed, because published datasets do
        not fix the indexing convention.
        """
        layers: dict[int, list[float]] = {}
        for pos, _elem, t in self.items():
            k = int(round(pos[2] / c_interlayer_ang))
            mix = abs(t[0, 2]) + abs(t[1, 2]) + abs(t[2, 0]) + abs(t[2, 1])
            norm = np.linalg.norm(t) + 1e-30
            layers.setdefault(k, []).append(mix / norm)
        if not layers:
            raise BathError("empty hyperfine dataset")
        scores = {k: float(np.mean(v)) for k, v in layers.items()}
        best = min(scores, key=lambda k: (scores[k], abs(k)))
        return best * c_interlayer_ang

    def validate_lattice_positions(self, lattice: LatticeSpec, radius: float) -> None:
        """Check that every entry within ``radius`` sits on a lattice site."""
        pos, elems = lattice_sites(lattice, radius=radius)
        site_keys = {_cell_key(p, e) for p, e in zip(pos, elems)}
        bad = []
        for p, elem, _t in self.items():
            if np.linalg.norm(p) > radius:
                continue
            if _cell_key(p, elem) not in site_keys:
                bad.append((tuple(np.round(p, 4)), elem))
        if bad:
            raise BathError(
                f"{len(bad)} dataset entries are not on lattice sites, e.g. {bad[:5]}"
            )


# ---------------------------------------------------------------------------
# isotope configuration and bath generation


@dataclass(frozen=True)
class IsotopeConfig:
    """Isotope content of the bath; ``natural`` draws from abundances."""

    boron_isotope: str = "B11"
    nitrogen_isotope: str = "N15"
    rng_seed: int = 0
    n14_quadrupole_mhz: float | None = None

    def __post_init__(self):
        if self.boron_isotope not in ("B11", "B10", "natural"):
            raise BathError(f"bad boron isotope {self.boron_isotope!r}")
        if self.nitrogen_isotope not in ("N15", "N14", "natural"):
            raise BathError(f"bad nitrogen isotope {self.nitrogen_isotope!r}")

    def needs_n14_cq(self) -> bool:
        return self.nitrogen_isotope in ("N14", "natural")


def _species_for(config: IsotopeConfig, isotope: str) -> SpinSpecies:
    if isotope == "N14":
        if config.n14_quadrupole_mhz is None:
            raise BathError(
                "14N in the bath requires an explicit n14_quadrupole_mhz value"
            )
        return make_species("N14", c_q_mhz=config.n14_quadrupole_mhz)
    return make_species(isotope)


def _draw_isotope(element: str, choice: str, rng: np.random.Generator) -> str:
    if choice != "natural":
        return choice
    table = NATURAL_ABUNDANCE[element]
    names = sorted(table)
    probs = np.array([table[n] for n in names])
    return names[int(rng.choice(len(names), p=probs / probs.sum()))]


def generate_bath(
    lattice: LatticeSpec,
    isotopes: IsotopeConfig,
    dataset: HyperfineDataset,
) -> list[BathSpin]:
    """Build the nuclear-spin bath inside ``lattice.radius_ang``.

    Every site must be covered by the dataset; isotope substitution rescales
    the hyperfine tensor by g(target)/g(reference).  The returned list is
    sorted by descending hyperfine Frobenius norm.
    """
    z0 = dataset.detect_defect_layer(lattice.c_interlayer_ang)
    positions, elements = lattice_sites(lattice)
    rng = np.random.default_rng(isotopes.rng_seed)

    ref_g = {
        elem: NUCLEAR_TABLE[iso]["g"]
        for elem, iso in dataset.reference_isotopes.items()
    }

    spins = []
    missing = []
    for pos, elem in zip(positions, elements):
        tensor = dataset.lookup(pos + np.array([0.0, 0.0, z0]), elem)
        if tensor is None:
            missing.append((tuple(np.round(pos, 4)), elem))
            continue
        choice = isotopes.boron_isotope if elem == "B" else isotopes.nitrogen_isotope
        iso = _draw_isotope(elem, choice, rng)
        species = _species_for(isotopes, iso)
        scale = species.g_n / ref_g[elem]
        spins.append(
            BathSpin(
                position=tuple(pos),
                species=species,
                a_mhz=tensor * scale,
                q_mhz=quadrupole_tensor(species),
            )
        )
    if missing:
        shown = ", ".join(f"{p} {e}" for p, e in missing[:8])
        raise BathError(
            f"missing hyperfine entry for {len(missing)} sites within "
            f"{lattice.radius_ang} angstrom: {shown}"
        )

    def sort_key(s: BathSpin):
        return (-float(np.linalg.norm(s.a_mhz)), s.position)

    return sorted(spins, key=sort_key)


# ---------------------------------------------------------------------------
# pairwise dipolar couplings


def dipolar_tensor(s1: BathSpin, s2: BathSpin, i: int = 0, j: int = 1) -> PairCoupling:
    """Nuclear dipole-dipole tensor J between two bath spins, in MHz.

    J_ab = (mu0/4pi) g1 g2 mu_N^2 / (h d^3) (delta_ab - 3 n_a n_b) with n the
    unit separation vector.
    """
    r = np.asarray(s2.position) - np.asarray(s1.position)
    d = float(np.linalg.norm(r))
    if d <= 0.1:
        raise BathError(f"bath spins too close for a dipolar tensor: d = {d} angstrom")
    n = r / d
    kernel = np.eye(3) - 3.0 * np.outer(n, n)
    tensor = DIPOLAR_NN_MHZ_A3 * s1.species.g_n * s2.species.g_n / d**3 * kernel
    return PairCoupling(i=i, j=j, j_mhz=tensor)


def pair_couplings(
    bath: list[BathSpin], indices: list[int] | None = None, r_pair_ang: float = 8.0
) -> list[PairCoupling]:
    """Dipolar tensors for all pairs (restricted to ``indices``) within r_pair.

    Beyond the cutoff the couplings are sub-kHz and dropped.  Indices in the
    returned PairCouplings refer to positions within ``indices`` (or the full
    bath if None), matching the cluster-Hamiltonian convention.
    """
    idx = list(range(len(bath))) if indices is None else list(indices)
    out = []
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            s1, s2 = bath[idx[a]], bath[idx[b]]
            d = np.linalg.norm(np.asarray(s2.position) - np.asarray(s1.position))
            if d <= r_pair_ang:
                out.append(dipolar_tensor(s1, s2, i=a, j=b))
    return out


def hyperfine_shell_profile(bath: list[BathSpin], count: int):
    """Ranked (1-based) Frobenius norms of the strongest hyperfine tensors."""
    if count > len(bath):
        raise BathError(f"count {count} exceeds bath size {len(bath)}")
    norms = sorted((float(np.linalg.norm(s.a_mhz)) for s in bath), reverse=True)
    return [(rank + 1, norms[rank]) for rank in range(count)]


# ---------------------------------------------------------------------------
# bath snapshots


def bath_to_json(bath: list[BathSpin]) -> dict:
    return {
        "format": "hbncce-bath/1",
        "spins": [
            {
                "position": list(s.position),
                "species": {
                    "label": s.species.label,
                    "spin_i": s.species.spin_i,
                    "g_n": s.species.g_n,
                    "c_q_mhz": s.species.c_q_mhz,
                },
                "a_mhz": s.a_mhz.reshape(9).tolist(),
                "q_mhz": s.q_mhz.reshape(9).tolist(),
            }
            for s in bath
        ],
    }


def bath_from_json(doc: dict) -> list[BathSpin]:
    if doc.get("format") != "hbncce-bath/1":
        raise BathError(f"unknown bath snapshot format {doc.get('format')!r}")
    out = []
    for rec in doc["spins"]:
        sp = rec["species"]
        try:
            species = SpinSpecies(
                label=sp["label"], spin_i=sp["spin_i"], g_n=sp["g_n"],
                c_q_mhz=sp["c_q_mhz"],
            )
            out.append(
                BathSpin(
                    position=tuple(rec["position"]),
                    species=species,
                    a_mhz=np.array(rec["a_mhz"]).reshape(3, 3),
                    q_mhz=np.array(rec["q_mhz"]).reshape(3, 3),
                )
            )
        except SpinModelError as exc:
            raise BathError(f"bad bath snapshot entry: {exc}") from exc
    return out


def save_bath(bath: list[BathSpin], path) -> None:
    with open(path, "w") as fh:
        json.dump(bath_to_json(bath), fh, indent=1)


def load_bath(path) -> list[BathSpin]:
    with open(path) as fh:
        return bath_from_json(json.load(fh))
