from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from config.network_config import NetworkConfig
from config.settings import Config, STAGE_ROLES
from core.errors import SymnetError
from utils.helpers import LoggingUtils, ReportWriter


@dataclass
class RunContext:
    """Everything one pipeline run shares between stages"""

    command: str
    config: NetworkConfig
    config_path: Path
    writer: ReportWriter
    workers: int = Config.WORKERS
    tol: Optional[float] = None
    strict: bool = True
    artifacts: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def warn(self, message: str) -> None:
        self.warnings.append(message)


class BaseStage(ABC):
    """Abstract base class for all pipeline stages"""

    def __init__(self, stage_type: str, config: Config = None):
        self.stage_type = stage_type
        self.config = config or Config()
        self.stage_info = STAGE_ROLES.get(stage_type, {})
        self.name = self.stage_info.get('name', f'{stage_type.title()} Stage')
        self.description = self.stage_info.get('description', '')
        self.capabilities = self.stage_info.get('capabilities', [])
        self.status = 'initialized'
        self.last_action = None
        self.results = {}

    def log_action(self, action: str, details: Dict[str, Any] = None) -> None:
        """Log stage actions"""
        details = details or {}
        LoggingUtils.log_stage_action(self.name, action, details)
        self.last_action = {'action': action, 'details': details}

    def update_status(self, status: str, details: Dict[str, Any] = None) -> None:
        """Update stage status"""
        self.status = status
        self.log_action(f'Status updated to: {status}', details)

    def get_info(self) -> Dict[str, Any]:
        """Get stage information"""
        return {
            'type': self.stage_type,
            'name': self.name,
            'description': self.description,
            'capabilities': self.capabilities,
            'status': self.status,
            'last_action': self.last_action
        }

    @abstractmethod
    def process(self, ctx: RunContext) -> Dict[str, Any]:
        """Run the stage on the shared context and return its results"""
        pass

    @abstractmethod
    def validate_input(self, ctx: RunContext) -> bool:
        """Check that the context holds what the stage needs"""
        pass

    def run(self, ctx: RunContext) -> Dict[str, Any]:
        """process() with the error contract: never raises, failures go through handle_error"""
        try:
            self.update_status('processing')
            if not self.validate_input(ctx):
                return self.handle_error(SymnetError(f"{self.name}: missing inputs"), 'Input validation failed')
            result = self.process(ctx)
            self.results = result.get('results') or {}
            self.update_status('completed' if result.get('success') else 'failed')
            result.setdefault('stage_info', self.get_info())
            return result
        except SymnetError as e:
            return self.handle_error(e, self.stage_type)

    def failure(self, message: str, exit_code: int, results: Dict[str, Any] = None) -> Dict[str, Any]:
        """A check that ran to completion but did not pass"""
        self.log_action(f'Check failed: {message}')
        return {
            'success': False,
            'error': {'error_type': 'CheckFailed', 'error_message': message, 'context': self.stage_type,
                      'exit_code': exit_code},
            'results': results,
            'exit_code': exit_code,
        }

    def handle_error(self, error: Exception, context: str = "") -> Dict[str, Any]:
        """Handle errors gracefully"""
        exit_code = getattr(error, 'exit_code', 2)
        error_details = {
            'error_type': type(error).__name__,
            'error_message': str(error),
            'context': context,
            'details': {k: v for k, v in getattr(error, 'details', {}).items() if k != 'log'},
            'exit_code': exit_code,
        }

        self.log_action(f'Error occurred: {error_details["error_type"]}', error_details)
        self.update_status('error', {'error_type': error_details['error_type']})

        return {
            'success': False,
            'error': error_details,
            'results': None,
            'exit_code': exit_code,
        }


class StageRegistry:
    """Registry for managing all stages"""

    def __init__(self):
        self.stages: Dict[str, BaseStage] = {}

    def register_stage(self, stage_id: str, stage: BaseStage) -> None:
        """Register a new stage"""
        self.stages[stage_id] = stage

    def get_stage(self, stage_id: str) -> Optional[BaseStage]:
        """Get stage by ID"""
        return self.stages.get(stage_id)

    def get_all_stages(self) -> Dict[str, BaseStage]:
        """Get all registered stages"""
        return self.stages.copy()

    def get_system_status(self) -> Dict[str, Any]:
        """Get overall pipeline status"""
        return {
            'total_stages': len(self.stages),
            'stages_status': {
                stage_id: stage.get_info()
                for stage_id, stage in self.stages.items()
            }
        }
