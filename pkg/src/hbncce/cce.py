"""Generalized cluster-correlation expansion of the Hahn-echo coherence.

The coherence function is the off-diagonal element of the reduced electron
density matrix, L(t) = Tr(sigma_+ rho_e(t)), evaluated after the sequence

    (|q0> + |q1>)/sqrt(2)  --U(t/2)--  pi pulse  --U(t/2)--  read sigma_+

with an ideal instantaneous pi pulse that swaps the two qubit levels and
leaves m_S = +1 and the bath untouched.  The expansion factorizes

    L(t) = l0(t) * prod_n prod_(j in C_n) ltilde_j^(n)(t)

where ltilde of a cluster is its raw curve divided by l0 and by the
irreducible contributions of all its proper sub-clusters, so each factor
carries only genuine n-spin correlations.  The product over all clusters
telescopes to the exact propagation when the expansion order equals the
bath size.

Propagation is exact: one eigendecomposition per cluster, no time stepping.
Bath density matrices are handled exactly as tensor products (no stochastic
state sampling); each product eigenvector is propagated as a pure state and
re-weighted, which is cheaper than evolving the full density matrix.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.spatial import cKDTree

from .bath import pair_couplings
from .spin_model import (
    BathSpin,
    CentralSpinParams,
    MagneticField,
    SpinModelError,
    build_cluster_hamiltonian,
    electron_level_index,
)


class CceError(ValueError):
    """Cluster-expansion input or dependency failure."""


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True, order=True)
class Cluster:
    """An ordered set of bath-spin indices; the unit of gCCE computation."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(set(idx)) != len(idx) or not idx:
            raise CceError(f"cluster indices must be distinct and nonempty: {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def order(self) -> int:
        return len(self.indices)

    def subclusters(self):
        """All proper nonempty subsets, as Clusters."""
        out = []
        n = len(self.indices)
        for mask in range(1, 2**n - 1):
            out.append(Cluster(tuple(self.indices[k] for k in range(n) if mask >> k & 1)))
        return out


@dataclass(frozen=True)
class ClusterPolicy:
    """Cluster enumeration and evaluation controls."""

    max_order: int = 2
    r_bath_ang: float | None = None
    r_connect_ang: float = 4.5
    max_clusters_per_order: int | None = None
    strongest_first: bool = True
    r_pair_ang: float = 8.0
    division_floor: float = 1e-2
    ratio_cap: float = 4.0
    mean_field_min_azz_mhz: float | None = 30.0
    hilbert_cap: int = 4096

    def __post_init__(self):
        if not 1 <= self.max_order <= 4:
            raise CceError(f"max_order must be 1..4, got {self.max_order}")
        if self.max_clusters_per_order is not None and self.max_clusters_per_order < 1:
            raise CceError("max_clusters_per_order must be positive")


@dataclass(frozen=True)
class BathState:
    """Initial bath state: maximally mixed, with optional polarized spins.

    ``polarized`` maps bath index -> p, the initial population of the
    lowest-m ("down") level along ``axis``.  p = 0.5 is maximally mixed;
    p = 0 or 1 are the pure up/down states.  Intermediate values use the
    spin-temperature weights w_m ~ ((1-p)/p)^m, which reduce to populations
    (1-p, p) for spin 1/2.
    """

    polarized: dict = dataclass_field(default_factory=dict)
    axis: str = "z"

    def __post_init__(self):
        for idx, p in self.polarized.items():
            if not 0.0 <= p <= 1.0:
                raise CceError(f"polarization p={p} for spin {idx} outside [0, 1]")
        if self.axis not in ("x", "y", "z"):
            raise CceError(f"bad polarization axis {self.axis!r}")

    def spin_state(self, bath_index: int, spin: BathSpin):
        """(weights, column eigenvectors) of this spin's density matrix."""
        dim = spin.species.dim
        p = self.polarized.get(bath_index)
        if p is None:
            return np.full(dim, 1.0 / dim), np.eye(dim, dtype=complex)
        i = spin.species.spin_i
        m = i - np.arange(dim)  # +I ... -I
        if p <= 0.0:
            w = np.zeros(dim)
            w[0] = 1.0
        elif p >= 1.0:
            w = np.zeros(dim)
            w[-1] = 1.0
        else:
            logw = m * np.log((1.0 - p) / p)
            logw -= logw.max()
            w = np.exp(logw)
            w /= w.sum()
        if self.axis == "z":
            vecs = np.eye(dim, dtype=complex)
        else:
            from .spin_model import spin_matrices

            ops = dict(zip("xyz", spin_matrices(i)))
            evals, vecs = np.linalg.eigh(ops[self.axis])
            vecs = vecs[:, np.argsort(-evals)]  # order +I ... -I
        return w, vecs

    def z_populations(self, bath_index: int, spin: BathSpin) -> np.ndarray:
        """Diagonal of this spin's density matrix in the I_z basis."""
        w, v = self.spin_state(bath_index, spin)
        return np.real(np.einsum("mk,k,mk->m", v, w, v.conj()))


@dataclass
class CoherenceCurve:
    """Complex L(t) on a time grid (microseconds)."""

    times_us: np.ndarray
    values: np.ndarray
    normalized: bool
    raw_l0_magnitude: float = 0.5

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def normalized_copy(self) -> "CoherenceCurve":
        if self.normalized:
            return self
        v0 = self.values[0]
        if v0 == 0:
            raise CceError("cannot normalize a curve vanishing at t = 0")
        return CoherenceCurve(
            times_us=self.times_us,
            values=self.values / v0,
            normalized=True,
            raw_l0_magnitude=abs(v0),
        )


@dataclass(frozen=True)
class ClusterContribution:
    """Irreducible contribution of one cluster, with a degradation flag."""

    cluster: Cluster
    curve: np.ndarray
    degraded: bool


# ---------------------------------------------------------------------------
# cluster enumeration


def _cluster_strengths(tuples, bath, fro_a, positions, r_pair):
    """Summed coupling per cluster: hyperfine norms plus a small dipolar
    term between members (tie-breaking); vectorized over all clusters."""
    arr = np.asarray(tuples, dtype=int)
    fro = np.asarray(fro_a)
    g = np.array([s.species.g_n for s in bath])
    strength = fro[arr].sum(axis=1)
    order = arr.shape[1]
    for a in range(order):
        for b in range(a + 1, order):
            d = np.linalg.norm(positions[arr[:, a]] - positions[arr[:, b]], axis=1)
            mutual = np.abs(g[arr[:, a]] * g[arr[:, b]]) / np.maximum(d, 1e-6) ** 3
            strength += np.where(d <= r_pair, mutual, 0.0)
    return strength


def enumerate_clusters(bath: list[BathSpin], policy: ClusterPolicy) -> list[Cluster]:
    """Connected clusters up to ``policy.max_order``.

    Singletons are all bath spins within r_bath; higher orders are connected
    sets of the within-r_connect proximity graph.  When an order exceeds
    ``max_clusters_per_order`` it is truncated, keeping the strongest summed
    coupling first (if ``strongest_first``) or the lowest index tuples.
    Ordering is deterministic for a fixed policy.
    """
    positions = np.array([s.position for s in bath]).reshape(-1, 3)
    eligible = np.arange(len(bath))
    if policy.r_bath_ang is not None:
        eligible = eligible[np.linalg.norm(positions, axis=1) <= policy.r_bath_ang]
    eligible_set = set(int(i) for i in eligible)
    fro_a = [float(np.linalg.norm(s.a_mhz)) for s in bath]

    neighbors: dict[int, list[int]] = {int(i): [] for i in eligible}
    if len(eligible) >= 2 and policy.max_order >= 2:
        tree = cKDTree(positions[eligible])
        for a, b in sorted(tree.query_pairs(policy.r_connect_ang)):
            ia, ib = int(eligible[a]), int(eligible[b])
            neighbors[ia].append(ib)
            neighbors[ib].append(ia)

    per_order: dict[int, list[tuple[int, ...]]] = {
        1: [(int(i),) for i in eligible]
    }
    for order in range(2, policy.max_order + 1):
        seen = set()
        for prev in per_order.get(order - 1, []):
            for v in prev:
                for nb in neighbors.get(v, []):
                    if nb in prev or nb not in eligible_set:
                        continue
                    cand = tuple(sorted(prev + (nb,)))
                    seen.add(cand)
        per_order[order] = sorted(seen)

    cap = policy.max_clusters_per_order
    kept: dict[int, list] = {}
    for order in range(1, policy.max_order + 1):
        tuples = per_order.get(order, [])
        if cap is not None and len(tuples) > cap:
            if policy.strongest_first:
                strength = _cluster_strengths(
                    tuples, bath, fro_a, positions, policy.r_pair_ang
                )
                ranked = sorted(
                    range(len(tuples)), key=lambda k: (-strength[k], tuples[k])
                )
                tuples = [tuples[k] for k in ranked]
            tuples = tuples[:cap]
        kept[order] = tuples
    # the factorization needs every member's singleton: re-add any that the
    # order-1 cap dropped but higher orders still reference
    members = {i for order in range(2, policy.max_order + 1)
               for ix in kept.get(order, []) for i in ix}
    singles = set(kept.get(1, []))
    singles.update((i,) for i in members)
    kept[1] = sorted(singles)
    out = []
    for order in range(1, policy.max_order + 1):
        out.extend(Cluster(ix) for ix in sorted(kept.get(order, [])))
    return out


# ---------------------------------------------------------------------------
# Hahn-echo propagation


def electron_branches(central: CentralSpinParams, field: MagneticField) -> np.ndarray:
    """Electron eigenbranches labeled by their dominant m_S character.

    Returns a 3x3 complex matrix whose column j is the eigenvector of the
    bare electron Hamiltonian (ZFS + Zeeman) adiabatically connected to the
    m_S level of basis index j.  The transverse ZFS mixes m_S = +1 and -1 at
    low field, so qubit states, pulses and the readout operator are defined
    on these branches; for E = 0 or large fields they reduce to the bare
    levels.  Assignment is by maximum overlap (unique via a greedy match on
    the overlap matrix); degenerate subspaces fall back to bare vectors so
    the control operations stay deterministic.
    """
    h_e = build_cluster_hamiltonian(central, [], [], field, "full")
    evals, vecs = np.linalg.eigh(h_e)

    # replace degenerate blocks by bare vectors (e.g. m_S = +-1 at E = 0, B = 0)
    cols = [vecs[:, k].copy() for k in range(3)]
    k = 0
    while k < 3:
        j = k
        while j + 1 < 3 and abs(evals[j + 1] - evals[k]) < 1e-9 * max(1.0, abs(evals[k])):
            j += 1
        if j > k:
            block = np.zeros((3, j - k + 1), dtype=complex)
            for c in range(k, j + 1):
                block[:, c - k] = cols[c]
            proj = block @ block.conj().T
            bare_order = np.argsort(-np.real(np.diag(proj)))
            basis = []
            for b in bare_order[: j - k + 1]:
                v = proj[:, b].astype(complex)
                for u in basis:
                    v -= u * (u.conj() @ v)
                norm = np.linalg.norm(v)
                if norm > 1e-12:
                    basis.append(v / norm)
            for c, v in enumerate(basis):
                cols[k + c] = v
        k = j + 1

    overlap = np.array([[abs(c[i]) ** 2 for c in cols] for i in range(3)])
    assignment = [-1, -1, -1]  # bare index -> column
    used = set()
    for _ in range(3):
        i, j = np.unravel_index(
            np.argmax([[overlap[a][b] if assignment[a] < 0 and b not in used
                        else -1.0 for b in range(3)] for a in range(3)]),
            (3, 3),
        )
        assignment[i] = j
        used.add(j)

    out = np.zeros((3, 3), dtype=complex)
    for bare, col in enumerate(assignment):
        v = cols[col]
        anchor = np.argmax(np.abs(v))
        phase = v[anchor] / abs(v[anchor])
        out[:, bare] = v / phase
    return out


def _electron_frames(central: CentralSpinParams, field: MagneticField):
    """(plus state, pi-pulse matrix, sigma_+ matrix) on the 3-level electron.

    All three are built on the eigenbranches of the bare electron
    Hamiltonian: the pulse swaps the two qubit branches and leaves the third
    untouched, and sigma_+ reads the inter-branch coherence.  A fixed
    control frame independent of the nuclear state, exactly refocusing the
    isolated electron (|l0| = 0.5 at any field and E).
    """
    branches = electron_branches(central, field)
    b0 = branches[:, electron_level_index(central.qubit_levels[0])]
    b1 = branches[:, electron_level_index(central.qubit_levels[1])]
    b2 = branches[:, [electron_level_index(m) for m in (-1, 0, 1)
                      if m not in central.qubit_levels][0]]
    plus = (b0 + b1) / np.sqrt(2.0)
    pulse = np.outer(b0, b1.conj()) + np.outer(b1, b0.conj()) + np.outer(b2, b2.conj())
    sigma_plus = np.outer(b0, b1.conj())
    return plus, pulse, sigma_plus


def _bath_columns(spins, indices, bath_state: BathState, pure_m=None):
    """Tensor-product eigendecomposition of the bath density matrix.

    ``pure_m`` maps bath indices to an I_z level index; those spins enter as
    that pure basis state instead of their bath_state density matrix.
    """
    pure_m = pure_m or {}
    weights = np.array([1.0])
    cols = np.eye(1, dtype=complex)
    for bath_index, spin in zip(indices, spins):
        if bath_index in pure_m:
            w = np.array([1.0])
            v = np.zeros((spin.species.dim, 1), dtype=complex)
            v[pure_m[bath_index], 0] = 1.0
        else:
            w, v = bath_state.spin_state(bath_index, spin)
        weights = np.kron(weights, w)
        cols = np.kron(cols, v)
    keep = weights > 1e-14
    return weights[keep], cols[:, keep]


def _propagate_hahn(h, frames, weights, bath_cols, times_us):
    """Raw L(t) for one assembled cluster Hamiltonian."""
    dim = h.shape[0]
    d_bath = dim // 3
    plus, pulse_e, sigma_e = frames

    evals, v = np.linalg.eigh(h)
    psi0 = np.kron(plus.reshape(3, 1), bath_cols)
    eye_b = np.eye(d_bath, dtype=complex)
    pulse = np.kron(pulse_e, eye_b)
    sigma = np.kron(sigma_e, eye_b)

    psi0_e = v.conj().T @ psi0
    w_mat = v.conj().T @ pulse @ v
    obs = v.conj().T @ sigma @ v

    times = np.asarray(times_us, dtype=float)
    ncols = psi0_e.shape[1]
    out = np.empty(len(times), dtype=complex)
    chunk = max(1, int(3e6 / max(dim * ncols, 1)))
    for start in range(0, len(times), chunk):
        t = times[start:start + chunk]
        phase = np.exp(-2j * np.pi * np.outer(t / 2.0, evals))  # (T, dim)
        a = phase[:, :, None] * psi0_e[None, :, :]
        b = np.matmul(w_mat[None, :, :], a)
        b *= phase[:, :, None]
        c = np.matmul(obs[None, :, :], b)
        out[start:start + chunk] = np.einsum(
            "tdc,tdc,c->t", b.conj(), c, weights, optimize=True
        )
    return out


def electron_only_curve(
    central: CentralSpinParams, field: MagneticField, times_us, hilbert_cap: int = 4096
) -> np.ndarray:
    """l0(t): the Hahn-echo curve of the isolated electron spin."""
    h = build_cluster_hamiltonian(central, [], [], field, "full", hilbert_cap)
    frames = _electron_frames(central, field)
    return _propagate_hahn(h, frames, np.array([1.0]), np.eye(1, dtype=complex), times_us)


def mean_field_sources(
    bath: list[BathSpin],
    policy: "ClusterPolicy",
    central: CentralSpinParams,
    field: MagneticField,
) -> list[int]:
    """Bath spins treated as enumerated quasi-static Overhauser sources.

    Spins whose longitudinal hyperfine column exceeds the policy threshold
    (in practice the first-neighbor nitrogens) detune the electron levels by
    up to H_max = sum_k I_k |A(:, z)|.  When H_max is small against every
    electron level gap the detuning is perturbative and conditioning is
    skipped, so the expansion away from the anticrossings keeps its plain
    product form and cost.
    """
    if policy.mean_field_min_azz_mhz is None:
        return []
    strong = [
        (float(np.linalg.norm(bath[i].a_mhz[:, 2])), i)
        for i in range(len(bath))
        if float(np.linalg.norm(bath[i].a_mhz[:, 2])) >= policy.mean_field_min_azz_mhz
    ]
    if not strong:
        return []
    h_max = sum(bath[i].species.spin_i * a for a, i in strong)
    from .constants import MU_B_MHZ_PER_MT

    bz = abs(field.vector[2])
    gap_sq = abs(central.d_mhz - central.g_e * MU_B_MHZ_PER_MT * bz)
    gap_dq = float(np.hypot(2.0 * central.g_e * MU_B_MHZ_PER_MT * bz,
                            2.0 * central.e_mhz))
    if h_max <= 0.15 * min(gap_sq, gap_dq):
        return []
    return sorted(i for _a, i in strong)


def enumerate_source_configs(
    sources: list[int], bath: list[BathSpin], bath_state: BathState
) -> list[tuple[dict[int, int], float]]:
    """All I_z configurations of the source spins with their weights.

    Returns (level-index map, weight) pairs; level index 0 is m = +I.  The
    weights come from the bath state's z populations, so polarized sources
    are conditioned consistently.
    """
    configs: list[tuple[dict[int, int], float]] = [({}, 1.0)]
    for k in sources:
        pops = bath_state.z_populations(k, bath[k])
        new = []
        for levels, p in configs:
            for level, pw in enumerate(pops):
                if pw < 1e-14:
                    continue
                d = dict(levels)
                d[k] = level
                new.append((d, p * pw))
        configs = new
    return configs


def overhauser_field(
    levels: dict[int, int], cluster_indices: tuple, bath: list[BathSpin]
) -> tuple[float, float, float]:
    """Electron field (hx, hy, hz in MHz) from frozen sources outside a cluster."""
    hx = hy = hz = 0.0
    inside = set(cluster_indices)
    for k, level in levels.items():
        if k in inside:
            continue
        spin = bath[k]
        m = spin.species.spin_i - level
        col = spin.a_mhz[:, 2]
        hx += m * col[0]
        hy += m * col[1]
        hz += m * col[2]
    return hx, hy, hz


def _electron_field_term(h_vec, d_bath: int) -> np.ndarray:
    from .spin_model import spin_matrices

    sx, sy, sz = spin_matrices(1.0)
    eye_b = np.eye(d_bath, dtype=complex)
    return np.kron(h_vec[0] * sx + h_vec[1] * sy + h_vec[2] * sz, eye_b)


def hahn_echo_cluster_curve(
    cluster: Cluster,
    central: CentralSpinParams,
    bath: list[BathSpin],
    field: MagneticField,
    times_us,
    mode: str = "full",
    bath_state: BathState | None = None,
    r_pair_ang: float = 8.0,
    hilbert_cap: int = 4096,
    electron_field_mhz: tuple[float, float, float] | None = None,
    pure_m: dict[int, int] | None = None,
) -> np.ndarray:
    """Raw (unnormalized) cluster coherence curve; |L(0)| = 0.5.

    ``electron_field_mhz`` adds a static effective field h.S on the electron
    (the frozen-environment Overhauser term); ``pure_m`` starts selected
    cluster spins in a pure I_z level instead of their bath-state density
    matrix.  Both hooks serve the conditioned expansion and default off.
    """
    bath_state = bath_state or BathState()
    spins = [bath[i] for i in cluster.indices]
    pairs = pair_couplings(bath, list(cluster.indices), r_pair_ang)
    h = build_cluster_hamiltonian(central, spins, pairs, field, mode, hilbert_cap)
    if electron_field_mhz is not None and any(electron_field_mhz):
        h = h + _electron_field_term(electron_field_mhz, h.shape[0] // 3)
    weights, cols = _bath_columns(spins, cluster.indices, bath_state, pure_m)
    frames = _electron_frames(central, field)
    return _propagate_hahn(h, frames, weights, cols, times_us)


# ---------------------------------------------------------------------------
# factorization


def irreducible_contribution(
    cluster: Cluster,
    raw_curves: dict[Cluster, np.ndarray],
    l0: np.ndarray,
    contributions: dict[Cluster, ClusterContribution],
    division_floor: float = 1e-2,
    ratio_cap: float = 4.0,
    unit_ceiling: bool = False,
) -> ClusterContribution:
    """ltilde of ``cluster`` given its raw curve and all sub-contributions.

    The denominator is l0 times the product of every proper sub-cluster's
    ltilde present in ``contributions``.  The pointwise division is
    regularized: where the denominator magnitude falls below
    ``division_floor`` or the ratio magnitude exceeds ``ratio_cap`` (both
    symptoms of the known pathology where sub-cluster curves vanish, near
    level anticrossings and past full decay), the last stable ratio is held
    and the contribution is flagged degraded.  Held values carry the last
    stable phase but are clamped to unit magnitude; without the clamp,
    thousands of clusters frozen just above 1 past full decay multiply into
    an exploding product.  With ``unit_ceiling`` (set by the engine whenever
    the expansion is conditioned on enumerated strong-spin configurations,
    i.e. in the breakdown regimes near zero field and the anticrossing) every
    contribution is clipped to unit magnitude, so the regularized product
    can dampen but never amplify; coherence in those regimes is thereby
    underestimated, never inflated.  ``division_floor = 0`` disables
    regularization entirely; the unregularized division telescopes exactly
    at full expansion order.
    """
    try:
        raw = raw_curves[cluster]
    except KeyError:
        raise CceError(f"raw curve missing for cluster {cluster.indices}") from None
    den = l0.copy()
    for sub in cluster.subclusters():
        contrib = contributions.get(sub)
        if contrib is None:
            if sub.order == 1:
                raise CceError(
                    f"missing order-1 sub-cluster {sub.indices} of {cluster.indices}"
                )
            continue  # sub-cluster outside the enumerated set: treated as 1
        den = den * contrib.curve

    if division_floor <= 0.0:
        return ClusterContribution(cluster, raw / den, False)

    abs_den = np.abs(den)
    safe = abs_den >= division_floor
    ratio = np.divide(raw, den, out=np.ones_like(raw), where=safe)
    bad = ~safe | (np.abs(ratio) > ratio_cap)
    degraded = bool(bad.any())
    if degraded:
        held = 1.0 + 0.0j
        for k in range(len(ratio)):
            if bad[k]:
                ratio[k] = held
            else:
                mag = abs(ratio[k])
                held = ratio[k] / mag if mag > 1.0 else ratio[k]
    if unit_ceiling:
        mag = np.abs(ratio)
        over = mag > 1.0
        if over.any():
            ratio[over] /= mag[over]
            degraded = True
    return ClusterContribution(cluster, ratio, degraded)


@dataclass
class GcceResult:
    """Total coherence plus the per-order decomposition and bookkeeping."""

    total: CoherenceCurve
    order_factors: dict[int, CoherenceCurve]
    cumulative: dict[int, CoherenceCurve]
    l0: np.ndarray
    cluster_counts: dict[int, int]
    degraded_per_order: dict[int, int]

    @property
    def degraded_fraction(self) -> float:
        n = sum(self.cluster_counts.values())
        return sum(self.degraded_per_order.values()) / n if n else 0.0

    def census(self) -> dict:
        return {
            "clusters_per_order": {str(k): v for k, v in sorted(self.cluster_counts.items())},
            "degraded_per_order": {str(k): v for k, v in sorted(self.degraded_per_order.items())},
            "degraded_fraction": self.degraded_fraction,
        }


def gcce_coherence(
    bath: list[BathSpin],
    policy: ClusterPolicy,
    central: CentralSpinParams,
    field: MagneticField,
    times_us,
    mode: str = "full",
    bath_state: BathState | None = None,
    threads: int = 1,
    clusters: list[Cluster] | None = None,
) -> GcceResult:
    """Full gCCE coherence function with per-order aggregates.

    When the longitudinal hyperfine of the strongest spins competes with the
    electron level gaps (close to zero field and around the anticrossing),
    the expansion is conditioned on those spins' enumerated I_z
    configurations: per configuration, frozen sources outside a cluster
    detune the electron, sources inside a cluster start in the matching pure
    level, and the factorization runs self-consistently; the totals are the
    exact weighted average over configurations.  This deterministic
    enumeration replaces the stochastic bath-state sampling customary for
    such regimes and leaves full-order exactness intact (the mixed bath
    state is precisely the weighted sum of the pure configurations).

    Cluster curves are evaluated independently (optionally in a thread pool,
    exploiting BLAS parallelism) and reduced in deterministic order, so
    results are reproducible for a fixed policy regardless of thread count.
    """
    bath_state = bath_state or BathState()
    times = np.asarray(times_us, dtype=float)
    if clusters is None:
        clusters = enumerate_clusters(bath, policy)
    clusters = sorted(clusters, key=lambda c: (c.order, c.indices))

    sources = mean_field_sources(bath, policy, central, field)
    configs = enumerate_source_configs(sources, bath, bath_state)

    h_e = build_cluster_hamiltonian(central, [], [], field, "full",
                                    policy.hilbert_cap)

    # distinct propagations: configurations sharing the same inside-cluster
    # levels and outside Overhauser field reuse one raw curve (the three
    # equivalent first-shell nitrogens collapse 8 configurations to 4)
    def h_key(h_vec):
        return (round(h_vec[0], 6), round(h_vec[1], 6), round(h_vec[2], 6))

    def job_key(cluster: Cluster, levels: dict[int, int]):
        inside = tuple((k, levels[k]) for k in cluster.indices if k in levels)
        return cluster, inside, h_key(overhauser_field(levels, cluster.indices, bath))

    unique_jobs: dict = {}
    l0_keys: dict = {}
    for levels, _w in configs:
        hk = h_key(overhauser_field(levels, (), bath))
        l0_keys.setdefault(hk, None)
        for cluster in clusters:
            unique_jobs.setdefault(job_key(cluster, levels), None)

    def run_job(key):
        cluster, inside, h_vec = key
        return hahn_echo_cluster_curve(
            cluster, central, bath, field, times,
            mode=mode, bath_state=bath_state,
            r_pair_ang=policy.r_pair_ang, hilbert_cap=policy.hilbert_cap,
            electron_field_mhz=h_vec, pure_m=dict(inside),
        )

    job_list = sorted(unique_jobs, key=lambda k: (k[0].order, k[0].indices, k[1], k[2]))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_job, job_list))
    else:
        results = [run_job(k) for k in job_list]
    raw_cache = dict(zip(job_list, results))
    frames = _electron_frames(central, field)
    for hk in l0_keys:
        h = h_e if not any(hk) else h_e + _electron_field_term(hk, 1)
        l0_keys[hk] = _propagate_hahn(h, frames, np.array([1.0]),
                                      np.eye(1, dtype=complex), times)

    counts = {}
    for c in clusters:
        counts[c.order] = counts.get(c.order, 0) + 1
    degraded: dict[int, set] = {}
    orders = sorted(counts)

    # per configuration: divide, form per-order products, accumulate the
    # weighted averages of l0, the cumulative curves and the total
    l0_avg = np.zeros(len(times), dtype=complex)
    total_avg = np.zeros(len(times), dtype=complex)
    order_avg = {n: np.zeros(len(times), dtype=complex) for n in orders}
    cum_avg = {n: np.zeros(len(times), dtype=complex) for n in orders}
    for levels, weight in configs:
        l0 = l0_keys[h_key(overhauser_field(levels, (), bath))]
        raw_curves = {
            cluster: raw_cache[job_key(cluster, levels)] for cluster in clusters
        }
        contributions: dict[Cluster, ClusterContribution] = {}
        order_factors: dict[int, np.ndarray] = {}
        for cluster in clusters:  # sorted by order: dependencies first
            contrib = irreducible_contribution(
                cluster, raw_curves, l0, contributions,
                policy.division_floor, policy.ratio_cap,
                unit_ceiling=bool(sources),
            )
            contributions[cluster] = contrib
            n = cluster.order
            order_factors[n] = order_factors.get(n, 1.0) * contrib.curve
            if contrib.degraded:
                degraded.setdefault(n, set()).add(cluster)
        l0_avg += weight * l0
        running = l0.copy()
        for n in orders:
            order_avg[n] += weight * order_factors[n]
            running = running * order_factors[n]
            cum_avg[n] += weight * running
        total_avg += weight * running

    def normalized(values: np.ndarray) -> CoherenceCurve:
        v = values / values[0]
        # the truncated product can exceed the physical bound |L| <= 1 by its
        # own approximation error (fractions of a percent); project it back
        mag = np.abs(v)
        over = mag > 1.0
        if over.any():
            v = v.copy()
            v[over] /= mag[over]
        return CoherenceCurve(
            times_us=times, values=v, normalized=True,
            raw_l0_magnitude=abs(values[0]),
        )

    return GcceResult(
        total=normalized(total_avg),
        order_factors={n: normalized(v) for n, v in order_avg.items()},
        cumulative={n: normalized(v) for n, v in cum_avg.items()},
        l0=l0_avg,
        cluster_counts=counts,
        degraded_per_order={n: len(s) for n, s in degraded.items()},
    )


# ---------------------------------------------------------------------------
# exports


def write_curves_csv(path, result: GcceResult, config_hash: str = "") -> None:
    """Per-order and total curves: t_us, re, im, abs columns per block."""
    times = result.total.times_us
    curves = {"total": result.total}
    for n, c in sorted(result.cumulative.items()):
        curves[f"gcce{n}"] = c
    for n, c in sorted(result.order_factors.items()):
        curves[f"order{n}"] = c
    with open(path, "w") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        names = list(curves)
        cols = ["t_us"] + [f"{n}_{c}" for n in names for c in ("re", "im", "abs")]
        fh.write(",".join(cols) + "\n")
        for k, t in enumerate(times):
            row = [f"{t:.9g}"]
            for name in names:
                v = curves[name].values[k]
                row += [f"{v.real:.9g}", f"{v.imag:.9g}", f"{abs(v):.9g}"]
            fh.write(",".join(row) + "\n")


def write_census_json(path, result: GcceResult, config_hash: str = "") -> None:
    doc = result.census()
    if config_hash:
        doc["config_hash"] = config_hash
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
