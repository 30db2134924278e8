from typing import Any, Dict, List, Optional

import numpy as np

from config.network_config import build_network, build_subsystems
from core.abstraction import SymbolicModel, build_symbolic_model, persist
from core.certificates import validate_storage_mc
from core.composition import internal_input_override
from .base_stage import BaseStage, RunContext

MC_TOL = 1e-9


def _override_key(points: Optional[np.ndarray]) -> bytes:
    return b'' if points is None else np.ascontiguousarray(points).tobytes()


class AbstractionStage(BaseStage):
    """Builds, validates and persists the symbolic model of every subsystem"""

    def __init__(self, config=None):
        super().__init__('abstraction', config)

    def validate_input(self, ctx: RunContext) -> bool:
        if ctx.config.abstraction is None:
            self.log_action('Missing [abstraction] section')
            return False
        return True

    def process(self, ctx: RunContext) -> Dict[str, Any]:
        cfg = ctx.config
        block = cfg.abstraction
        subsystems = ctx.artifacts.get('subsystems') or build_subsystems(cfg)
        ctx.artifacts['subsystems'] = subsystems
        net = ctx.artifacts.get('network') or build_network(cfg, subsystems)
        ctx.artifacts['network'] = net

        if block.inputs == 'routed':
            overrides = internal_input_override(net, [block.eta] * net.N)
        else:
            overrides = [None] * net.N
        varpi = block.varpi if block.varpi is not None else block.eta

        # Subsystems share one template, so equal overrides give equal models
        cache: Dict[bytes, SymbolicModel] = {}
        models: List[SymbolicModel] = []
        rows = []
        aug_fns = ctx.artifacts.get('aug_fns') or [None] * net.N
        mc_cache: Dict[bytes, float] = {}
        for i, (sub, override) in enumerate(zip(subsystems, overrides)):
            key = _override_key(override)
            if key not in cache:
                cache[key] = build_symbolic_model(sub, block.eta, varpi, override, workers=ctx.workers)
            base = cache[key]
            model = SymbolicModel(base.grid, base.eta, base.varpi, base.dwell_time, base.n_modes,
                                  base.internal_inputs, base.C1, base.C2, base.offsets, base.targets,
                                  name=sub.name)
            models.append(model)
            filename = f"{sub.name}{self.config.MODEL_SUFFIX}"
            persist(model, ctx.writer.mark(filename))

            row = {
                'subsystem': sub.name,
                'file': filename,
                'grid_states': model.n_grid,
                'internal_inputs': model.n_inputs,
                'transitions': int(sum(len(t) for t in model.targets)),
                'blocked_pairs': int(model.empty_mask().sum()),
                'digest': model.digest(),
            }
            if block.mc_samples and aug_fns[i] is not None:
                if key not in mc_cache:
                    mc_cache[key] = validate_storage_mc(sub, model, aug_fns[i], samples=block.mc_samples,
                                                        seed=cfg.simulation.seed if cfg.simulation else 0,
                                                        workers=ctx.workers)
                row['mc_max_violation'] = mc_cache[key]
            rows.append(row)

        ctx.artifacts['models'] = models
        ctx.writer.json('abstraction.json', {'eta': block.eta, 'varpi': varpi, 'inputs': block.inputs,
                                             'subsystems': rows})
        self.log_action('Symbolic models built', {'models': len(models), 'distinct': len(cache)})

        violations = [r['mc_max_violation'] for r in rows if 'mc_max_violation' in r]
        worst = max(violations) if violations else None
        results = {'models': rows, 'mc_max_violation': worst}
        if worst is not None and worst > MC_TOL:
            message = f"Monte-Carlo storage validation violated by {worst:.3e}"
            if ctx.strict:
                return self.failure(message, 1, results)
            ctx.warn(message)
        return {'success': True, 'results': results}
