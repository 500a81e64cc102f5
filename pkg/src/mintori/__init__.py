"""Numerical construction and certification of T^(n-1)-invariant immersed
minimal Lagrangian tori in CP^n (Fubini-Study)."""

from .errors import (
    AdmissibilityError,
    BracketError,
    ClosureError,
    ConfigError,
    ContractViolationError,
    DegenerateInputError,
    DegenerateMeshError,
    DriftBudgetError,
    MembershipError,
    MintoriError,
    NoReturnError,
    RefinementError,
    RegularityError,
    ResolutionError,
    SingularFieldError,
    WitnessNotFoundError,
)
from .fubini import (
    AmbientPoint,
    CanonicalFiberData,
    TangentVec,
    TorusAlgebraVec,
    calabi_profile,
    canon_eval,
    connection_form,
    einstein_constant,
    einstein_constant_estimate,
    fs_distance,
    fs_g,
    fs_metric,
    fs_omega,
    moment_map,
    normalize_point,
    sigma,
    sigma_transport,
    torus_field,
)
from .weights import (
    MomentPolytope,
    SubtorusFrame,
    WeightVector,
    admissible,
    build_polytope,
    killing_witness,
    make_frame,
)
from .reduced import (
    LevelDatum,
    SPoint,
    SVelocity,
    aw_field,
    circle_act,
    classify_level,
    f_plus,
    f_value,
    h0_profile,
    h_value,
    make_spoint,
    minus_act,
    r_act,
    seed_on_level,
    spoint_distance,
    tau,
    w_field,
)
from .dynamics import (
    PeriodicOrbit,
    ReturnRecord,
    Trajectory,
    find_periodic,
    first_return,
    integrate,
    periodic_targets_in_range,
    q_fold_closure,
    xi_crosscheck,
    xi_scan,
)
from .torus import (
    CertReport,
    TorusMesh,
    certify,
    clifford,
    hausdorff_to,
    killing_variation,
    lagrangian_defect,
    load_mesh,
    mean_curvature_defect,
    orbit_volume_profile,
    perturb_mesh,
    real_locus_band,
    reconstruct,
    save_mesh,
    segment_mu_grid,
)

__version__ = "0.1.0"
