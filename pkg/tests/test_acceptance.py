"""Acceptance criteria, one test per criterion, tolerances pinned.

Each test prints a PASS/FAIL line.  The coherence-time anchors run the
reduced desk-scale policy (bath radius 14-16 angstrom, expansion order up
to 3, at most 5000 clusters per order) and carry the corresponding +-40%
tolerances; they take minutes per field point on two cores.
"""

import math
import time

import numpy as np
import pytest

from hbncce import (
    BathSpin,
    BathState,
    CentralSpinParams,
    ClusterPolicy,
    IsotopeConfig,
    LatticeSpec,
    MagneticField,
    RunContext,
    ablation_curves,
    coherence_at,
    dipolar_tensor,
    electron_only_curve,
    eseem_L1,
    eseem_params_for,
    exact_coherence,
    fit_decay,
    gcce_coherence,
    generate_bath,
    gslac_field,
    make_species,
    modulation_spectrum,
    quadrupole_tensor,
    spin_matrices,
)
from hbncce.sweeps import ablate_bath, first_shell_nitrogen_indices
from hbncce.hyperfine_model import build_model_dataset


def report(name: str, ok: bool, detail: str):
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# shared desk-scale inputs

ANCHOR_RADIUS = 16.0
# low-field points: order 3; the conditioned zero-field expansion converges
# by ~600 clusters per order.  High-field points: pair-driven dipolar
# flip-flops need the far resonant pairs (r_connect 6) but not order 3.
ANCHOR_POLICY = dict(max_order=3, r_connect_ang=4.0, max_clusters_per_order=1500)
ZERO_FIELD_POLICY = dict(max_order=3, r_connect_ang=4.0, max_clusters_per_order=600)
# high field: the strength ranking is hyperfine-dominated and would keep
# the detuned near-defect pairs while discarding the distant resonant
# flip-flop pairs that set T2; run the full connectivity set instead
# (about 23k pairs at this radius, still desk scale)
HIGH_FIELD_POLICY = dict(max_order=2, r_connect_ang=6.0, max_clusters_per_order=None)
HIGH_FIELD_GRID = 301  # 0.6 us steps on a ~190 us span resolve the decay


@pytest.fixture(scope="module")
def anchor_bath():
    lattice = LatticeSpec(radius_ang=ANCHOR_RADIUS)
    dataset = build_model_dataset(lattice, coverage_radius_ang=ANCHOR_RADIUS + 1.0)
    return generate_bath(lattice, IsotopeConfig(), dataset)


def anchor_ctx(bath, **overrides):
    policy_kw = dict(ANCHOR_POLICY)
    policy_kw.update(overrides.pop("policy", {}))
    return RunContext(
        central=CentralSpinParams(),
        bath=bath,
        policy=ClusterPolicy(**policy_kw),
        threads=2,
        **overrides,
    )


_T2_MEMO: dict = {}


def t2_at(bath, bz_mt, **overrides):
    """Fitted T2 at a field point; memoized across criteria (3/5/6 share
    the expensive high-field points)."""
    key = (bz_mt, repr(sorted(overrides.get("policy", {}).items())),
           overrides.get("mode", "full"),
           repr(overrides.get("bath_state")))
    if key in _T2_MEMO:
        return _T2_MEMO[key]
    ctx = anchor_ctx(bath, field=MagneticField.along_c(bz_mt), **overrides)
    fit = fit_decay(coherence_at(ctx).total)
    _T2_MEMO[key] = fit
    return fit


# ---------------------------------------------------------------------------
# criteria


def test_criterion_1_oracle_exactness():
    """gCCE at full order reproduces exact propagation for random baths."""
    rng = np.random.default_rng(20240811)
    pool = ("N15", "N14", "B11")
    start = time.time()
    worst = 0.0
    central = CentralSpinParams()
    for _ in range(25):
        n = int(rng.integers(1, 5))
        bath = []
        for _k in range(n):
            name = pool[int(rng.integers(0, len(pool)))]
            sp = make_species(name, c_q_mhz=2.0) if name == "N14" else make_species(name)
            bath.append(BathSpin(
                position=tuple(rng.uniform(-6.0, 6.0, 3)),
                species=sp,
                a_mhz=rng.normal(0.0, 25.0, (3, 3)),
                q_mhz=quadrupole_tensor(sp),
            ))
        field = MagneticField.along_c(float(rng.uniform(0.0, 3000.0)))
        times = np.linspace(0.0, 0.6, 31)
        # full-order telescoping is exact; regularization off for the identity
        policy = ClusterPolicy(max_order=n, r_connect_ang=1e3, r_pair_ang=1e3,
                               division_floor=0.0)
        res = gcce_coherence(bath, policy, central, field, times)
        exact = exact_coherence(central, bath, field, times, r_pair_ang=1e3)
        worst = max(worst, float(np.max(np.abs(
            res.total.magnitude() - exact.magnitude()))))
    elapsed = time.time() - start
    report("criterion-1 oracle exactness", worst < 1e-8 and elapsed < 60.0,
           f"max pointwise deviation {worst:.2e} over 25 baths in {elapsed:.1f} s")


def test_criterion_2_eseem_equivalence():
    """Closed-form first-order ESEEM matches exact pseudo-secular propagation."""
    n15 = make_species("N15")
    a = np.array([[14.0, 3.0, 6.0], [2.0, 11.0, 4.5], [5.0, 2.5, 16.0]])
    spin = BathSpin(position=(1.0, 0.8, 3.33), species=n15, a_mhz=a)
    central = CentralSpinParams(e_mhz=0.0)
    times = np.linspace(0.0, 3.0, 600)
    worst = 0.0
    for bz in (10.0, 50.0, 100.0):
        field = MagneticField.along_c(bz)
        exact = exact_coherence(central, [spin], field, times, mode="pseudo_secular")
        analytic = eseem_L1([eseem_params_for(spin, field)], times)
        worst = max(worst, float(np.max(np.abs(exact.magnitude() - np.abs(analytic)))))
    report("criterion-2 ESEEM equivalence", worst < 1e-6,
           f"max deviation {worst:.2e} across 10/50/100 mT")


def test_criterion_3_coherence_time_anchors(anchor_bath):
    """T2 anchors at reduced desk scale, +-40% windows."""
    t0 = time.time()
    fit_zero = t2_at(anchor_bath, 0.0, policy=ZERO_FIELD_POLICY)
    t2_zero = fit_zero.t2_us * 1e3  # ns
    fit_plateau = t2_at(anchor_bath, 20.0)
    t2_plateau = fit_plateau.t2_us * 1e3
    fit_high = t2_at(anchor_bath, 3000.0, policy=HIGH_FIELD_POLICY,
                     time_points=HIGH_FIELD_GRID)
    t2_high = fit_high.t2_us  # us
    ok = (
        abs(t2_zero - 114.0) <= 0.4 * 114.0
        and abs(t2_plateau - 220.0) <= 0.4 * 220.0
        and abs(t2_high - 31.0) <= 0.4 * 31.0
    )
    report(
        "criterion-3 coherence-time anchors", ok,
        f"T2(0 mT) = {t2_zero:.0f} ns (target 114 +-40%), "
        f"T2(20 mT) = {t2_plateau:.0f} ns (target 220 +-40%), "
        f"T2(3 T) = {t2_high:.1f} us (target 31 +-40%); {time.time()-t0:.0f} s",
    )


def test_criterion_4_modulation_frequency():
    """gCCE2 nitrogen-bath modulation peaks at 67 MHz, field-independent."""
    lattice = LatticeSpec(radius_ang=12.0)
    dataset = build_model_dataset(lattice, coverage_radius_ang=13.0)
    bath = generate_bath(lattice, IsotopeConfig(), dataset)
    nitrogen = ablate_bath("nitrogen_only", bath)
    central = CentralSpinParams()
    policy = ClusterPolicy(max_order=2, r_connect_ang=4.5,
                           max_clusters_per_order=400)
    peaks = []
    for bz in (20.0, 50.0, 80.0):
        times = np.linspace(0.0, 3.0, 1401)  # Nyquist 233 MHz, df 0.33 MHz
        res = gcce_coherence(nitrogen, policy, central,
                             MagneticField.along_c(bz), times, threads=2)
        spectrum = modulation_spectrum(res.total)
        assert spectrum, f"no modulation peaks at {bz} mT"
        peaks.append(spectrum[0][0])
    drift = max(peaks) - min(peaks)
    ok = all(abs(p - 67.0) <= 5.0 for p in peaks) and drift < 2.0
    report("criterion-4 modulation frequency", ok,
           f"peaks at 20/50/80 mT = {np.round(peaks, 2)} MHz, drift {drift:.2f} MHz")


def test_criterion_5_pseudo_secular_high_field(anchor_bath):
    """Full vs pseudo-secular T2 at 3 T agree within 10%."""
    fit_full = t2_at(anchor_bath, 3000.0, policy=HIGH_FIELD_POLICY,
                     time_points=HIGH_FIELD_GRID)
    fit_ps = t2_at(anchor_bath, 3000.0, policy=HIGH_FIELD_POLICY,
                   mode="pseudo_secular", time_points=HIGH_FIELD_GRID)
    rel = abs(fit_full.t2_us - fit_ps.t2_us) / fit_full.t2_us
    report("criterion-5 pseudo-secular high field", rel < 0.10,
           f"T2 full {fit_full.t2_us:.2f} us vs pseudo-secular "
           f"{fit_ps.t2_us:.2f} us ({100*rel:.2f}%)")


def test_criterion_6_region_structure(anchor_bath):
    """GSLAC dip, transition rise, and high-field plateau flatness."""
    central = CentralSpinParams()
    t2_50 = t2_at(anchor_bath, 50.0).t2_us
    t2_gslac = t2_at(anchor_bath, gslac_field(central),
                     policy=ZERO_FIELD_POLICY).t2_us
    t2_350 = t2_at(anchor_bath, 350.0, policy=HIGH_FIELD_POLICY,
                   time_points=HIGH_FIELD_GRID).t2_us
    t2_1000 = t2_at(anchor_bath, 1000.0, policy=HIGH_FIELD_POLICY,
                    time_points=HIGH_FIELD_GRID).t2_us
    t2_3000 = t2_at(anchor_bath, 3000.0, policy=HIGH_FIELD_POLICY,
                    time_points=HIGH_FIELD_GRID).t2_us
    plateau = [t2_350, t2_1000, t2_3000]
    flatness = (max(plateau) - min(plateau)) / max(plateau)
    ok = (
        t2_gslac < t2_50 / 5.0
        and t2_350 > 50.0 * t2_50
        and flatness < 0.20
    )
    report(
        "criterion-6 region structure", ok,
        f"T2(gslac) = {t2_gslac*1e3:.0f} ns < T2(50 mT)/5 = {t2_50*1e3/5:.0f} ns; "
        f"T2(350 mT) = {t2_350:.1f} us > 50 x T2(50 mT) = {50*t2_50:.1f} us; "
        f"plateau flatness {100*flatness:.1f}% over 350 mT - 3 T",
    )


def test_criterion_7_ablation_and_polarization(anchor_bath):
    """First-shell removal at B = 0 and polarization insensitivity at 50 mT."""
    ctx = anchor_ctx(anchor_bath, field=MagneticField.along_c(0.0),
                     policy=ZERO_FIELD_POLICY)
    dropped = ablation_curves("drop_first_shell", ctx)
    fit_drop = fit_decay(dropped.total)
    t2_drop = math.inf if fit_drop.no_decay else fit_drop.t2_us

    first_shell = first_shell_nitrogen_indices(anchor_bath)
    assert len(first_shell) == 3
    t2_by_p = {}
    for p in (0.0, 0.3, 0.62, 1.0):
        state = BathState(polarized={i: p for i in first_shell})
        ctx_p = anchor_ctx(anchor_bath, field=MagneticField.along_c(50.0),
                           bath_state=state)
        t2_by_p[p] = fit_decay(coherence_at(ctx_p).total).t2_us
    spread = (max(t2_by_p.values()) - min(t2_by_p.values())) / max(t2_by_p.values())
    ok = t2_drop > 0.5 and spread < 0.15
    report(
        "criterion-7 ablation and polarization", ok,
        f"T2(B=0, first shell removed) = {t2_drop:.2f} us (> 0.5); "
        f"T2(50 mT) over p in (0, 0.3, 0.62, 1): "
        f"{ {k: round(v, 3) for k, v in t2_by_p.items()} } us, spread {100*spread:.1f}%",
    )


def test_criterion_8_invariant_suite(small_bath):
    """Normalization, raw |L0| = 0.5, Hermiticity, d^-3 scaling, determinism."""
    start = time.time()
    central = CentralSpinParams()
    field = MagneticField.along_c(35.0)
    times = np.linspace(0.0, 1.0, 301)
    policy = ClusterPolicy(max_order=2, r_connect_ang=4.0,
                           max_clusters_per_order=80)

    res1 = gcce_coherence(small_bath, policy, central, field, times, threads=2)
    res2 = gcce_coherence(small_bath, policy, central, field, times, threads=1)
    norm_ok = (
        res1.total.values[0] == 1.0 + 0.0j
        and bool(np.all(res1.total.magnitude() <= 1.0 + 1e-6))
    )
    determinism_ok = bool(np.array_equal(res1.total.values, res2.total.values))

    l0_ok = True
    for e_mhz, bz in ((0.0, 0.0), (0.0, 700.0), (50.0, 0.0), (50.0, 3000.0)):
        l0 = electron_only_curve(CentralSpinParams(e_mhz=e_mhz),
                                 MagneticField.along_c(bz), times)
        l0_ok = l0_ok and bool(np.allclose(np.abs(l0), 0.5, atol=1e-9))

    rng = np.random.default_rng(7)
    herm_ok = True
    from hbncce import build_cluster_hamiltonian
    for _ in range(10):
        sp = make_species(("N15", "B11")[int(rng.integers(0, 2))])
        spin = BathSpin(position=tuple(rng.uniform(-4, 4, 3)), species=sp,
                        a_mhz=rng.normal(0, 20, (3, 3)),
                        q_mhz=quadrupole_tensor(sp))
        h = build_cluster_hamiltonian(central, [spin], [],
                                      MagneticField.along_c(float(rng.uniform(0, 3000))))
        herm_ok = herm_ok and np.linalg.norm(h - h.conj().T) / np.linalg.norm(h) < 1e-12

    s1 = BathSpin(position=(0, 0, 0), species=make_species("B11"),
                  a_mhz=np.zeros((3, 3)), q_mhz=quadrupole_tensor(make_species("B11")))
    scale_ok = True
    for d in (2.0, 3.5, 6.0):
        near = dipolar_tensor(s1, BathSpin(position=(d, 0, 0), species=s1.species,
                                           a_mhz=np.zeros((3, 3)),
                                           q_mhz=s1.q_mhz)).j_mhz
        far = dipolar_tensor(s1, BathSpin(position=(2 * d, 0, 0), species=s1.species,
                                          a_mhz=np.zeros((3, 3)),
                                          q_mhz=s1.q_mhz)).j_mhz
        scale_ok = scale_ok and np.allclose(near, 8.0 * far, rtol=1e-12)

    elapsed = time.time() - start
    ok = norm_ok and determinism_ok and l0_ok and herm_ok and scale_ok and elapsed < 60
    report(
        "criterion-8 invariant suite", ok,
        f"normalization {norm_ok}, raw-l0 {l0_ok}, hermiticity {herm_ok}, "
        f"d^-3 {scale_ok}, determinism {determinism_ok}, {elapsed:.1f} s",
    )
