"""Hahn-echo decoherence of the boron-vacancy spin qubit in hBN.

Generalized cluster-correlation expansion (up to order 4) over generated
nuclear-spin baths, with an exact small-bath oracle, closed-form ESEEM
cross-checks, stretched-exponential T2 fitting, and field/parameter sweep
drivers.  See the README for units and the CLI entry points.
"""

from .constants import CONSTANTS_VERSION
from .spin_model import (
    BathSpin,
    CentralSpinParams,
    ClusterTooLargeError,
    MagneticField,
    PairCoupling,
    SpinModelError,
    SpinSpecies,
    build_cluster_hamiltonian,
    gslac_field,
    make_species,
    quadrupole_tensor,
    spin_matrices,
    zeeman_splitting,
)
from .bath import (
    BathError,
    HyperfineDataset,
    IsotopeConfig,
    LatticeSpec,
    dipolar_tensor,
    generate_bath,
    hyperfine_shell_profile,
    lattice_sites,
    load_bath,
    pair_couplings,
    save_bath,
)
from .hyperfine_model import HyperfineModelParams, build_model_dataset
from .cce import (
    BathState,
    CceError,
    Cluster,
    ClusterContribution,
    ClusterPolicy,
    CoherenceCurve,
    GcceResult,
    electron_only_curve,
    enumerate_clusters,
    gcce_coherence,
    hahn_echo_cluster_curve,
    irreducible_contribution,
)
from .oracle import OracleLimit, OracleLimitError, exact_coherence, reduced_electron_state
from .eseem import (
    EseemError,
    EseemParams,
    FitResult,
    GslacVicinityError,
    effective_flip_coupling,
    eseem_L1,
    eseem_params_for,
    fit_decay,
    modulation_spectrum,
)
from .sweeps import (
    ConvergenceReport,
    RunContext,
    SweepRow,
    SweepSpec,
    ablate_bath,
    ablation_curves,
    coherence_at,
    convergence_study,
    first_shell_nitrogen_indices,
    region_label,
    run_sweep,
)

__version__ = "0.1.0"
