from .base_stage import BaseStage, StageRegistry, RunContext
from .certificate_stage import CertificateStage
from .abstraction_stage import AbstractionStage
from .composition_stage import CompositionStage
from .synthesis_stage import SynthesisStage
from .simulation_stage import SimulationStage
from .coordinator_stage import CoordinatorStage, run

__all__ = [
    'BaseStage',
    'StageRegistry',
    'RunContext',
    'CertificateStage',
    'AbstractionStage',
    'CompositionStage',
    'SynthesisStage',
    'SimulationStage',
    'CoordinatorStage',
    'run'
]
