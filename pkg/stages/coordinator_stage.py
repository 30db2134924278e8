from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from config.network_config import COMMANDS, load_config, with_overrides
from config.settings import Config
from core.errors import ConfigError, SymnetError
from utils.helpers import ReportWriter
from .abstraction_stage import AbstractionStage
from .base_stage import BaseStage, RunContext, StageRegistry
from .certificate_stage import CertificateStage
from .composition_stage import CompositionStage
from .simulation_stage import SimulationStage
from .synthesis_stage import SynthesisStage

# CLI flags that override a config field
FLAG_FIELDS = {'psi': 'spec.psi', 'seed': 'simulation.seed', 'policy': 'simulation.policy'}


def output_dir(config_path: Path, out: Optional[str] = None) -> Path:
    if out:
        return Path(out)
    return config_path.parent / Config.OUTPUT_DIR_NAME / config_path.stem


class CoordinatorStage(BaseStage):
    """Stage responsible for orchestrating the pipeline of one command"""

    def __init__(self, config: Config = None):
        super().__init__('coordinator', config)
        self.registry = StageRegistry()
        self._initialize_stages()
        self.warnings: List[str] = []

    def _initialize_stages(self):
        """Initialize all specialized stages"""
        self.registry.register_stage('certificate', CertificateStage(self.config))
        self.registry.register_stage('abstraction', AbstractionStage(self.config))
        self.registry.register_stage('composition', CompositionStage(self.config))
        self.registry.register_stage('synthesis', SynthesisStage(self.config))
        self.registry.register_stage('simulation', SimulationStage(self.config))
        self.log_action('All stages initialized')

    def plan(self, ctx: RunContext) -> List[Tuple[str, bool]]:
        """(stage id, strict) in execution order; only the command's own stages are strict"""
        cfg = ctx.config
        has_cert = cfg.certificate is not None
        if ctx.command == 'check-cert':
            return [('certificate', True)]
        if ctx.command == 'abstract':
            return ([('certificate', False)] if has_cert else []) + [('abstraction', True)]
        if ctx.command == 'compose-check':
            return [('certificate', False), ('abstraction', False), ('composition', True)]
        steps = ([('certificate', False)] if has_cert else []) + [('abstraction', False)]
        if has_cert:
            steps.append(('composition', False))
        steps.append(('synthesis', True))
        if ctx.command == 'simulate':
            steps.append(('simulation', True))
        return steps

    def validate_input(self, ctx: RunContext) -> bool:
        return ctx.command in COMMANDS

    def process(self, ctx: RunContext) -> Dict[str, Any]:
        """Execute the stages of the command, stopping at the first failure"""
        stage_results: Dict[str, Any] = {}
        if ctx.command == 'report':
            return self._report(ctx)
        for stage_id, strict in self.plan(ctx):
            stage = self.registry.get_stage(stage_id)
            ctx.strict = strict
            self.log_action(f'Starting {stage_id} phase', {'strict': strict})
            result = stage.run(ctx)
            stage_results[stage_id] = result
            self.log_action(f'{stage_id} phase completed', {'success': result['success']})
            if not result['success']:
                self.results = {'command': ctx.command, 'stages': stage_results}
                self._write_pipeline(ctx, result.get('exit_code', 2))
                return {'success': False, 'error': result.get('error'), 'results': self.results,
                        'exit_code': result.get('exit_code', 2)}
        self.results = {'command': ctx.command, 'stages': stage_results}
        self._write_pipeline(ctx, 0)
        return {'success': True, 'results': self.results, 'exit_code': 0}

    def _write_pipeline(self, ctx: RunContext, exit_code: int) -> None:
        ctx.writer.json('pipeline.json', {
            'command': ctx.command,
            'config': ctx.config_path.name,
            'exit_code': exit_code,
            'warnings': ctx.warnings,
            'stage_status': self.get_stage_performance(),
        })

    def _report(self, ctx: RunContext) -> Dict[str, Any]:
        reports = {k: v for k, v in ctx.writer.collect().items() if k != 'report'}
        report = self.get_comprehensive_report(reports)
        ctx.writer.json('report.json', report)
        self.results = {'command': 'report', 'report': report}
        return {'success': True, 'results': self.results, 'exit_code': 0}

    def execute(self, command: str, config_path, flags: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Load the config, build the run context and run the command"""
        flags = flags or {}
        self.warnings = []
        if command not in COMMANDS:
            return self.handle_error(ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}"),
                                     'Command validation failed')
        config_path = Path(config_path)
        try:
            cfg = load_config(config_path, overrides=flags.get('set'))
            updates = {FLAG_FIELDS[k]: flags[k] for k in FLAG_FIELDS if flags.get(k) is not None}
            if updates:
                cfg = with_overrides(cfg, updates)
            cfg.require(command)
            writer = ReportWriter(output_dir(config_path, flags.get('out')))
        except SymnetError as e:
            return self.handle_error(e, 'Configuration failed')
        except OSError as e:
            return self.handle_error(ConfigError(f"cannot create the output directory: {e}"), 'Configuration failed')

        ctx = RunContext(command=command, config=cfg, config_path=config_path, writer=writer,
                         workers=int(flags.get('workers') or self.config.WORKERS), tol=flags.get('tol'))
        result = self.run(ctx)
        self.warnings = ctx.warnings
        result.setdefault('exit_code', 0 if result['success'] else 2)
        return result

    def get_stage_performance(self) -> Dict[str, Any]:
        """Status of every registered stage"""
        performance = {}
        for stage_id, stage in self.registry.get_all_stages().items():
            performance[stage_id] = {
                'status': stage.status,
                'last_action': stage.last_action['action'] if stage.last_action else None,
                'has_results': bool(stage.results)
            }
        return performance

    def get_comprehensive_report(self, reports: Dict[str, Any]) -> Dict[str, Any]:
        """Merge the artifact reports of an output directory into one document"""
        return {
            'executive_summary': self._generate_executive_summary(reports),
            'artifacts': reports,
            'stage_status': self.registry.get_system_status(),
        }

    def _generate_executive_summary(self, reports: Dict[str, Any]) -> Dict[str, Any]:
        summary: Dict[str, Any] = {'available': sorted(reports)}
        if 'certificates' in reports:
            summary['certificates_verified'] = reports['certificates'].get('verified')
        if 'composition' in reports:
            comp = reports['composition']
            summary.update({k: comp.get(k) for k in ('sigma_tilde', 'eps_tilde', 'eps_hat')})
        if 'synthesis' in reports:
            summary['domain_sizes'] = [s['domain_size'] for s in reports['synthesis'].get('subsystems', [])]
        if 'simulation' in reports:
            summary['trajectory_valid'] = reports['simulation'].get('trajectory_check', {}).get('is_valid')
        return summary

    def summary_lines(self) -> List[str]:
        """Short human-readable digest of the last run"""
        lines = []
        stages = (self.results or {}).get('stages', {})
        cert = (stages.get('certificate') or {}).get('results') or {}
        if 'verified' in cert:
            lines.append(f"certificates verified: {cert['verified']}")
            for rep in cert.get('reports', []):
                margins = ', '.join(f"{row['lmi_margin']:.4g}" for row in rep['modes'] if row['lmi_margin'] is not None)
                lines.append(f"  {rep['subsystem']}: {rep['storage_kind']} storage, LMI margins [{margins}], "
                             f"mu {rep['mu_computed']:.4f}, k_d min {rep['dwell_min']}")
        comp = (stages.get('composition') or {}).get('results') or {}
        if 'sigma_tilde' in comp:
            lines.append(f"sigma~ = {comp['sigma_tilde']:.6g}  eps~ = {comp['eps_tilde']:.6g}  "
                         f"eps^ = {comp['eps_hat']:.6g}  (psi = {comp['psi']})")
        syn = (stages.get('synthesis') or {}).get('results') or {}
        for row in syn.get('subsystems', []):
            lines.append(f"  {row['subsystem']}: controller domain {row['domain_size']} states")
        sim = (stages.get('simulation') or {}).get('results') or {}
        if 'summary' in sim:
            s = sim['summary']
            lines.append(f"simulated {s['steps']} steps: max state {s.get('max_state', 0):.4g}, "
                         f"longest red run {s.get('longest_red_run')}")
        if 'report' in (self.results or {}):
            lines.append(f"report written with {len(self.results['report']['artifacts'])} artifact reports")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return lines


def run(command: str, config_path, flags: Optional[Dict[str, Any]] = None) -> int:
    """Run one command; returns the process exit status"""
    coordinator = CoordinatorStage()
    return coordinator.execute(command, config_path, flags)['exit_code']
