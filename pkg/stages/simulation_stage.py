from typing import Any, Dict

from config.network_config import build_safety_spec, initial_states
from core.errors import InvariantViolation, RefinementError
from core.sim import check_mismatch_bound, export_csv, paired_runs, simulate_closed_loop, summarize
from utils.helpers import DataValidator
from .base_stage import BaseStage, RunContext


class SimulationStage(BaseStage):
    """Runs the concrete network in closed loop with the refined controllers"""

    def __init__(self, config=None):
        super().__init__('simulation', config)

    def validate_input(self, ctx: RunContext) -> bool:
        if ctx.config.simulation is None or not ctx.artifacts.get('controllers'):
            self.log_action('Missing [simulation] section or controllers')
            return False
        return True

    def process(self, ctx: RunContext) -> Dict[str, Any]:
        sim = ctx.config.simulation
        spec = ctx.config.spec
        net = ctx.artifacts['network']
        x0 = initial_states(ctx.config)
        try:
            log = simulate_closed_loop(net, ctx.artifacts['controllers'], x0, sim.horizon,
                                       seed=sim.seed, policy=sim.policy)
        except RefinementError as exc:
            partial = exc.details.get('log')
            if partial is not None and len(partial):
                export_csv(partial, ctx.writer.mark('trajectory_partial.csv'))
            raise
        export_csv(log, ctx.writer.mark('trajectory.csv'))

        mismatch = None
        paired = None
        bound = ctx.artifacts.get('bound')
        if sim.paired_steps and ctx.artifacts.get('models'):
            modes = log.applied_modes()[:sim.paired_steps]
            run = paired_runs(net, ctx.artifacts['models'], x0, modes, ctx.artifacts.get('alt_sim'))
            paired = {'steps': run.steps, 'initial_value': run.initial_value}
            if bound is not None:
                mismatch = check_mismatch_bound(net, run.abstract, run.concrete, bound, run.initial_value)
                paired['eps_hat'] = bound.eps_hat
                paired['within_bound'] = None if mismatch is None else mismatch <= bound.eps_hat + 1e-9

        summary = summarize(log, red_mode=spec.red_mode, mismatch=mismatch)
        safety = build_safety_spec(ctx.config)
        check = DataValidator.validate_trajectory(log.to_frame(), safety.safe_set, [s.C1 for s in net.subsystems],
                                                  log.initial_modes, red_limit=spec.fairness,
                                                  red_mode=spec.red_mode)
        payload = {'summary': summary, 'trajectory_check': check, 'paired_run': paired,
                   'policy': sim.policy, 'seed': sim.seed, 'horizon': sim.horizon}
        ctx.writer.json('simulation.json', payload)
        self.log_action('Closed loop simulated', {'steps': summary['steps'], 'valid': check['is_valid']})
        if not check['is_valid']:
            raise InvariantViolation(
                f"closed-loop run under feasible controllers leaves the safety specification "
                f"(unsafe at t={check['unsafe_times'][:5]}, longest red run {check['longest_red_run']})",
                unsafe_times=check['unsafe_times'], longest_red_run=check['longest_red_run'])
        if paired is not None and paired.get('within_bound') is False:
            raise InvariantViolation(f"output mismatch {mismatch:.6g} exceeds the bound {bound.eps_hat:.6g}",
                                     mismatch=mismatch, eps_hat=bound.eps_hat)
        return {'success': True, 'results': payload}
