"""Physics behavior mirrored from the documented field regions.

Moderate-cost integration tests (seconds to a couple of minutes total):
species-resolved decay ordering near zero field, first-order flatness of a
nitrogen bath at 50 mT, the field-independent modulation line and its beat
identity, and the order decomposition in the low-field window.
"""

import numpy as np
import pytest

from hbncce import (
    BathState,
    CentralSpinParams,
    Cluster,
    ClusterPolicy,
    IsotopeConfig,
    LatticeSpec,
    MagneticField,
    build_cluster_hamiltonian,
    fit_decay,
    gcce_coherence,
    generate_bath,
    modulation_spectrum,
    pair_couplings,
)
from hbncce.sweeps import ablate_bath
from hbncce.hyperfine_model import build_model_dataset


@pytest.fixture(scope="module")
def bath12():
    lattice = LatticeSpec(radius_ang=12.0)
    dataset = build_model_dataset(lattice, coverage_radius_ang=13.0)
    return generate_bath(lattice, IsotopeConfig(), dataset)


@pytest.fixture(scope="module")
def central():
    return CentralSpinParams()


class TestLowFieldRegion:
    def test_nitrogen_only_first_order_flat(self, bath12, central):
        # in-plane nitrogens have no pseudo-secular transverse coupling, so a
        # nitrogen bath shows no first-order decay over the T2 window; in
        # full mode the strongly coupled first shell adds a small (about 1%
        # per spin) electron-flip wiggle on an otherwise flat envelope
        nitrogen = ablate_bath("nitrogen_only", bath12)
        policy = ClusterPolicy(max_order=1, r_connect_ang=4.0)
        times = np.linspace(0.0, 0.222, 201)
        res_ps = gcce_coherence(nitrogen, policy, central,
                                MagneticField.along_c(50.0), times,
                                mode="pseudo_secular", threads=2)
        assert float(np.min(res_ps.total.magnitude())) > 0.999

        res = gcce_coherence(nitrogen, policy, central,
                             MagneticField.along_c(50.0), times, threads=2)
        fit = fit_decay(res.total)
        assert fit.no_decay
        mags = res.total.magnitude()
        assert float(np.min(mags)) > 0.97
        # envelope through modulation tops stays put
        from hbncce.eseem import _local_maxima

        tops = _local_maxima(mags)
        assert float(np.min(mags[tops])) > 0.99

    def test_boron_only_first_order_decays(self, bath12, central):
        boron = ablate_bath("boron_only", bath12)
        policy = ClusterPolicy(max_order=1, r_connect_ang=4.0)
        times = np.linspace(0.0, 1.5, 401)
        res = gcce_coherence(boron, policy, central,
                             MagneticField.along_c(50.0), times, threads=2)
        fit = fit_decay(res.total)
        assert not fit.no_decay
        assert 1.0 < fit.stretch_n < 4.0  # stretched-Gaussian-like envelope
        assert 0.05 < fit.t2_us < 1.0

    def test_third_order_negligible_at_50mt(self, bath12, central):
        policy = ClusterPolicy(max_order=3, r_connect_ang=4.0,
                               max_clusters_per_order=400)
        times = np.linspace(0.0, 1.5, 401)
        res = gcce_coherence(bath12, policy, central,
                             MagneticField.along_c(50.0), times, threads=2)
        t2_2 = fit_decay(res.cumulative[2]).t2_us
        t2_3 = fit_decay(res.cumulative[3]).t2_us
        assert abs(t2_3 - t2_2) / t2_2 < 0.10

    def test_polarization_weakly_affects_t2_at_50mt(self, bath12, central):
        policy = ClusterPolicy(max_order=2, r_connect_ang=4.0,
                               max_clusters_per_order=400)
        times = np.linspace(0.0, 1.5, 401)
        t2 = {}
        for p in (0.0, 0.62):
            state = BathState(polarized={0: p, 1: p, 2: p})
            res = gcce_coherence(bath12, policy, central,
                                 MagneticField.along_c(50.0), times,
                                 bath_state=state, threads=2)
            t2[p] = fit_decay(res.total).t2_us
        assert abs(t2[0.62] - t2[0.0]) / t2[0.0] < 0.15


class TestZeroFieldRegion:
    def test_species_resolved_decay_ordering(self, bath12, central):
        # boron-induced decay is much slower than nitrogen-induced decay
        policy = ClusterPolicy(max_order=2, r_connect_ang=4.0,
                               max_clusters_per_order=400)
        times = np.linspace(0.0, 1.2, 401)
        field = MagneticField.along_c(0.0)
        t2 = {}
        for variant in ("nitrogen_only", "boron_only"):
            sub = ablate_bath(variant, bath12)
            res = gcce_coherence(sub, policy, central, field, times, threads=2)
            fit = fit_decay(res.total)
            t2[variant] = np.inf if fit.no_decay else fit.t2_us
        assert t2["boron_only"] > 2.0 * t2["nitrogen_only"]

    def test_order_decomposition_zero_field(self, bath12, central):
        # first order decays far slower than the converged expansion; the
        # second-to-third-order step is already a refinement
        policy = ClusterPolicy(max_order=3, r_connect_ang=4.0,
                               max_clusters_per_order=400)
        times = np.linspace(0.0, 1.0, 401)
        res = gcce_coherence(bath12, policy, central,
                             MagneticField.along_c(0.0), times, threads=2)
        t2 = {n: fit_decay(c).t2_us for n, c in sorted(res.cumulative.items())}
        assert t2[1] > 1.5 * t2[2]
        assert abs(t2[3] - t2[2]) < abs(t2[2] - t2[1])


class TestModulationBeat:
    def test_beat_identity_against_pair_hamiltonian(self, bath12, central):
        """Spectrum peak equals the sum of the two flip-flip branch
        frequencies read off the two-nitrogen cluster Hamiltonian."""
        field = MagneticField.along_c(50.0)
        nitrogen = ablate_bath("nitrogen_only", bath12)
        # pseudo-secular pair Hamiltonian of two first-shell nitrogens is
        # block-diagonal per m_S; the qubit's m_S = -1 block carries the
        # flip-flip splitting 2(nu1 + nu2)
        pair = [nitrogen[0], nitrogen[1]]
        pairs = pair_couplings(nitrogen, [0, 1], 8.0)
        h = build_cluster_hamiltonian(central, pair, pairs, field,
                                      mode="pseudo_secular")
        dim_b = 4
        block = h[2 * dim_b:, 2 * dim_b:]  # electron basis (+1, 0, -1)
        evals = np.linalg.eigvalsh(block)
        nu_sum = float(evals[-1] - evals[0]) / 2.0  # observed-beat prediction

        policy = ClusterPolicy(max_order=2, r_connect_ang=4.5,
                               max_clusters_per_order=300)
        times = np.linspace(0.0, 3.0, 1401)
        res = gcce_coherence(nitrogen, policy, central, field, times, threads=2)
        peaks = modulation_spectrum(res.total)
        assert peaks
        peak = peaks[0][0]
        assert abs(peak - nu_sum) < 1.5
        assert abs(peak - 67.0) < 5.0
