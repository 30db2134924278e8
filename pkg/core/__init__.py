from .errors import (
    SymnetError, InputError, ParameterError, ConfigError, FormatError, CertificateError,
    UnsupportedCertificateError, DwellTimeViolation, NetworkError, SynthesisInfeasible,
    RefinementError, InvariantViolation,
)
from .matcert import SymMatrix, is_psd, is_nsd, is_pd, min_eig, max_eig, sym_eigvals, pos_neg_split, min_dominance_scale
from .system import Box, BoxUnion, Grid, ModeDynamics, PowerK, SwitchedSubsystem, quantize_set, span, validate_switching_signal
from .transition import AugState, successor_concrete, generate_run, check_run_equivalence
from .abstraction import SymbolicModel, abstract_successors, build_symbolic_model, persist, load
from .certificates import (
    StorageCertificate, AugStorageFn, CertificateReport, verify_delta_p_affine, scan_theta, compute_mu,
    gamma_bound, min_dwell_time, construct_Qtilde, derive_augmented_storage, validate_storage_mc,
    verify_certificate,
)
from .composition import (
    NetworkSpec, AltSimFn, RelationBound, interconnect_concrete, assemble_Rdelta, check_composition_lmi,
    check_internal_input_match, internal_input_override, compose_alt_sim, error_bound, compose_symbolic_network,
)
from .synthesis import (
    SafetySpec, Controller, build_spec_product, safety_fixed_point, restrict_internal_inputs,
    refine_controller, save_controller, load_controller, export_domain_csv,
)
from .sim import (
    TrajectoryLog, simulate_closed_loop, paired_runs, check_mismatch_bound, export_csv, summarize,
)

__all__ = [
    'SymnetError', 'InputError', 'ParameterError', 'ConfigError', 'FormatError', 'CertificateError',
    'UnsupportedCertificateError', 'DwellTimeViolation', 'NetworkError', 'SynthesisInfeasible',
    'RefinementError', 'InvariantViolation',
    'SymMatrix', 'is_psd', 'is_nsd', 'is_pd', 'min_eig', 'max_eig', 'sym_eigvals', 'pos_neg_split',
    'min_dominance_scale',
    'Box', 'BoxUnion', 'Grid', 'ModeDynamics', 'PowerK', 'SwitchedSubsystem', 'quantize_set', 'span',
    'validate_switching_signal',
    'AugState', 'successor_concrete', 'generate_run', 'check_run_equivalence',
    'SymbolicModel', 'abstract_successors', 'build_symbolic_model', 'persist', 'load',
    'StorageCertificate', 'AugStorageFn', 'CertificateReport', 'verify_delta_p_affine', 'scan_theta',
    'compute_mu', 'gamma_bound', 'min_dwell_time', 'construct_Qtilde', 'derive_augmented_storage',
    'validate_storage_mc', 'verify_certificate',
    'NetworkSpec', 'AltSimFn', 'RelationBound', 'interconnect_concrete', 'assemble_Rdelta',
    'check_composition_lmi', 'check_internal_input_match', 'internal_input_override', 'compose_alt_sim',
    'error_bound', 'compose_symbolic_network',
    'SafetySpec', 'Controller', 'build_spec_product', 'safety_fixed_point', 'restrict_internal_inputs',
    'refine_controller', 'save_controller', 'load_controller', 'export_domain_csv',
    'TrajectoryLog', 'simulate_closed_loop', 'paired_runs', 'check_mismatch_bound', 'export_csv',
    'summarize',
]
