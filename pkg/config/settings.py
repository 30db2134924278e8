class Config:
    # Certificate checks
    THETA_GRID = tuple(round(1.01 + 0.01 * k, 2) for k in range(20))

    # Composition / error bound
    DEFAULT_PSI = 0.99

    # Monte-Carlo certificate validation
    NETWORK_MC_SAMPLES = 1_000

    # Workers for data-parallel stages
    WORKERS = 1

    # Synthesis
    RED_MODE = 1

    # Simulation
    DEFAULT_POLICY = 'fair'
    DEFAULT_SEED = 0

    # Artifacts
    OUTPUT_DIR_NAME = 'out'
    MODEL_SUFFIX = '.symmodel'
    CONTROLLER_SUFFIX = '.ctrl'


# Stage Configuration
STAGE_ROLES = {
    "certificate": {
        "name": "Certificate Checking Stage",
        "description": "Verifies the per-mode storage certificates and derives augmented storage functions",
        "capabilities": ["lmi_check", "theta_scan", "dwell_time_bound", "monte_carlo_validation"]
    },
    "abstraction": {
        "name": "Symbolic Abstraction Stage",
        "description": "Builds and persists the symbolic model of every subsystem",
        "capabilities": ["grid_quantization", "successor_enumeration", "model_persistence"]
    },
    "composition": {
        "name": "Composition Check Stage",
        "description": "Checks the interconnection conditions and computes the output mismatch bound",
        "capabilities": ["composition_lmi", "internal_input_match", "error_bound"]
    },
    "synthesis": {
        "name": "Safety Synthesis Stage",
        "description": "Synthesizes local safety controllers under assume-guarantee input restrictions",
        "capabilities": ["fairness_product", "safety_fixed_point", "controller_export"]
    },
    "simulation": {
        "name": "Closed-Loop Simulation Stage",
        "description": "Simulates the concrete network under the refined controllers",
        "capabilities": ["closed_loop_simulation", "paired_runs", "csv_export"]
    },
    "coordinator": {
        "name": "Pipeline Coordinator Stage",
        "description": "Orchestrates the pipeline for a command and gathers the reports",
        "capabilities": ["workflow_management", "stage_coordination", "report_aggregation"]
    }
}
