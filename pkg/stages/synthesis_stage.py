from typing import Any, Dict, List, Tuple

from config.network_config import assumed_input_set, build_safety_spec
from core.errors import ConfigError, InvariantViolation
from core.synthesis import (
    Controller, build_spec_product, export_domain_csv, restrict_internal_inputs, safety_fixed_point,
    save_controller, verify_invariance,
)
from .base_stage import BaseStage, RunContext


class SynthesisStage(BaseStage):
    """Synthesizes one safety controller per subsystem under the assumed neighbour outputs"""

    def __init__(self, config=None):
        super().__init__('synthesis', config)

    def validate_input(self, ctx: RunContext) -> bool:
        if ctx.config.spec is None or not ctx.artifacts.get('models'):
            self.log_action('Missing [spec] section or symbolic models')
            return False
        return True

    def _shrink(self, ctx: RunContext) -> float:
        shrink = ctx.config.spec.shrink
        bound = ctx.artifacts.get('bound')
        if shrink == 'auto':
            if bound is None:
                raise ConfigError("spec.shrink: auto needs the mismatch bound from the composition check",
                                  section='spec', key='shrink')
            return bound.eps_hat
        if bound is not None and shrink < bound.eps_hat:
            ctx.warn(f"shrink {shrink} is below the mismatch bound {bound.eps_hat:.4g}; "
                     "the concrete guarantee covers the abstract runs only")
        return float(shrink)

    def process(self, ctx: RunContext) -> Dict[str, Any]:
        net = ctx.artifacts['network']
        models = ctx.artifacts['models']
        spec = build_safety_spec(ctx.config)
        shrink = self._shrink(ctx)
        assumed = assumed_input_set(ctx.config)
        bound = ctx.artifacts.get('bound')

        cache: Dict[Tuple[str, str], Controller] = {}
        controllers: List[Controller] = []
        rows = []
        for i, model in enumerate(models):
            if assumed is not None:
                model = restrict_internal_inputs(model, assumed, net.input_rows(i))
            key = (model.digest(), spec.digest())
            if key not in cache:
                product = build_spec_product(model, spec)
                ctrl = safety_fixed_point(product, shrink)
                if not verify_invariance(ctrl, product):
                    raise InvariantViolation(f"{model.name}: synthesized domain is not invariant")
                cache[key] = ctrl
            ctrl = cache[key]
            controllers.append(ctrl)

            name = net.subsystems[i].name
            ctrl_file = f"{name}{self.config.CONTROLLER_SUFFIX}"
            domain_file = f"{name}_domain.csv"
            save_controller(ctrl, ctx.writer.mark(ctrl_file), bound.eps_hat if bound is not None else None)
            export_domain_csv(ctrl, ctx.writer.mark(domain_file))
            rows.append({
                'subsystem': name,
                'controller_file': ctrl_file,
                'domain_file': domain_file,
                'domain_size': ctrl.size,
                'iterations': ctrl.meta['iterations'],
                'internal_inputs': model.n_inputs,
            })

        ctx.artifacts['controllers'] = controllers
        payload = {'shrink': shrink, 'spec': spec.to_dict(), 'subsystems': rows}
        ctx.writer.json('synthesis.json', payload)
        self.log_action('Controllers synthesized', {'controllers': len(controllers), 'shrink': shrink})
        return {'success': True, 'results': payload}
