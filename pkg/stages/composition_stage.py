from typing import Any, Dict

from core.composition import (
    check_composition_lmi, check_internal_input_match, compose_alt_sim, error_bound, validate_network_mc,
)
from core.errors import CertificateError
from .base_stage import BaseStage, RunContext


class CompositionStage(BaseStage):
    """Checks the interconnection conditions and derives the output mismatch bound"""

    def __init__(self, config=None):
        super().__init__('composition', config)

    def validate_input(self, ctx: RunContext) -> bool:
        missing = [k for k in ('network', 'models', 'aug_fns') if not ctx.artifacts.get(k)]
        if missing:
            self.log_action('Missing upstream artifacts', {'missing': missing})
            return False
        if any(fn is None for fn in ctx.artifacts['aug_fns']):
            self.log_action('No augmented storage function for some subsystem')
            return False
        return True

    def process(self, ctx: RunContext) -> Dict[str, Any]:
        net = ctx.artifacts['network']
        models = ctx.artifacts['models']
        aug_fns = ctx.artifacts['aug_fns']
        psi = ctx.config.spec.psi if ctx.config.spec is not None else self.config.DEFAULT_PSI

        lmi_ok, lmi_max_eig = check_composition_lmi(net, [fn.R for fn in aug_fns], ctx.tol)
        match = check_internal_input_match(net, models)
        fn = compose_alt_sim(net, aug_fns)
        bound = error_bound(fn, psi)
        ctx.artifacts['alt_sim'] = fn
        ctx.artifacts['bound'] = bound

        payload = {
            'composition_lmi': {'holds': lmi_ok, 'max_eigenvalue': lmi_max_eig},
            'internal_input_match': {'holds': match.matched, 'counterexample': match.counterexample},
            'sigma_tilde': fn.sigma_tilde,
            'eps_tilde': fn.eps_tilde,
            'alpha_tilde': fn.alpha_tilde.as_list(),
            'weights': list(fn.weights),
        }
        payload.update(bound.to_dict())
        mc_samples = ctx.config.abstraction.mc_samples if ctx.config.abstraction is not None else 0
        if mc_samples:
            seed = ctx.config.simulation.seed if ctx.config.simulation is not None else 0
            payload['network_mc_max_violation'] = validate_network_mc(
                net, models, fn, samples=min(mc_samples, self.config.NETWORK_MC_SAMPLES), seed=seed)
        ctx.writer.json('composition.json', payload)
        self.log_action('Composition checked', {'lmi': lmi_ok, 'input_match': match.matched,
                                                'eps_hat': bound.eps_hat})

        problems = []
        if not lmi_ok:
            problems.append(f"composition LMI fails (max eigenvalue {lmi_max_eig:.3e})")
        if not match:
            problems.append(f"abstract internal inputs do not match the routed outputs: {match.counterexample}")
        if problems:
            message = '; '.join(problems)
            if ctx.strict:
                return self.failure(message, CertificateError.exit_code, payload)
            ctx.warn(message)
        return {'success': True, 'results': payload}
