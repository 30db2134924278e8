"""
Closed-loop simulation of a concrete network under refined controllers, paired
concrete/abstract runs, and CSV output of the logs.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .abstraction import BALL_SLACK, SymbolicModel
from .composition import AltSimFn, NetworkSpec, RelationBound
from .errors import InputError, NetworkError, ParameterError, RefinementError
from .synthesis import Controller, refine_controller
from .transition import next_mode_counter

logger = logging.getLogger(__name__)

POLICIES = ('lex', 'random', 'fair')


@dataclass
class TrajectoryLog:
    """One row per step t = 1..horizon: states after the step, current modes, red-run counters"""

    state_dims: List[int]
    times: List[int] = field(default_factory=list)
    states: List[List[np.ndarray]] = field(default_factory=list)
    modes: List[Tuple[int, ...]] = field(default_factory=list)
    counters: List[Tuple[int, ...]] = field(default_factory=list)
    initial_modes: Tuple[int, ...] = ()

    def append(self, t: int, states: Sequence[np.ndarray], modes: Sequence[int], counters: Sequence[int]) -> None:
        self.times.append(int(t))
        self.states.append([np.asarray(x, dtype=float).copy() for x in states])
        self.modes.append(tuple(int(p) for p in modes))
        self.counters.append(tuple(int(c) for c in counters))

    def __len__(self) -> int:
        return len(self.times)

    def applied_modes(self) -> List[Tuple[int, ...]]:
        """Mode tuple in force during each step, starting with the initial modes"""
        if not self.times:
            return []
        return [self.initial_modes] + self.modes[:-1]

    def columns(self) -> List[str]:
        N = len(self.state_dims)
        cols = ['time']
        cols += [f'x_{i + 1}_{j + 1}' for i in range(N) for j in range(self.state_dims[i])]
        cols += [f'mode_{i + 1}' for i in range(N)]
        cols += [f'counter_{i + 1}' for i in range(N)]
        return cols

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for t, xs, ps, cs in zip(self.times, self.states, self.modes, self.counters):
            rows.append([t] + [float(v) for x in xs for v in x] + list(ps) + list(cs))
        frame = pd.DataFrame(rows, columns=self.columns())
        if not rows:
            return frame
        int_cols = ['time'] + [c for c in frame.columns if c.startswith(('mode_', 'counter_'))]
        return frame.astype({c: 'int64' for c in int_cols})


def _choose(allowed: List[int], policy: str, rng: np.random.Generator, last_used: Dict[int, int]) -> int:
    if policy == 'lex':
        return min(allowed)
    if policy == 'random':
        return int(rng.choice(allowed))
    return min(allowed, key=lambda u: (last_used.get(u, -1), u))


def _red_counter(ctrl: Controller, p: int, c: int) -> int:
    if ctrl.spec.fairness_limit is None:
        return 0
    return c + 1 if p == ctrl.spec.red_mode else 0


def simulate_closed_loop(net: NetworkSpec, controllers: Sequence[Controller], x0: Sequence[np.ndarray],
                         horizon: int, seed: int = 0, policy: str = 'fair') -> TrajectoryLog:
    if policy not in POLICIES:
        raise ParameterError(f"unknown policy {policy!r}, expected one of {POLICIES}")
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    if len(controllers) != net.N or len(x0) != net.N:
        raise InputError(f"need one controller and one initial state per subsystem ({net.N})")

    rng = np.random.default_rng(seed)
    xs = [np.asarray(x, dtype=float).reshape(-1) for x in x0]
    log = TrajectoryLog([s.n for s in net.subsystems])
    last_used: List[Dict[int, int]] = [{} for _ in range(net.N)]

    modes, dwell, reds = [], [], []
    for i, (ctrl, x) in enumerate(zip(controllers, xs)):
        candidates = []
        for p in range(1, ctrl.model.n_modes + 1):
            try:
                refine_controller(ctrl, x, p, 0, _red_counter(ctrl, p, 0))
            except RefinementError:
                continue
            candidates.append(p)
        if not candidates:
            raise RefinementError(f"initial state {x.tolist()} of subsystem {i + 1} is outside the controller domain",
                                  step=0, subsystem=i + 1, log=log)
        p0 = _choose(candidates, policy, rng, last_used[i])
        modes.append(p0)
        dwell.append(0)
        reds.append(_red_counter(ctrl, p0, 0))
        last_used[i][p0] = 0
    log.initial_modes = tuple(modes)

    for t in range(horizon):
        inputs = []
        for i, ctrl in enumerate(controllers):
            try:
                allowed = refine_controller(ctrl, xs[i], modes[i], dwell[i], reds[i])
            except RefinementError as exc:
                exc.details.update(step=t, subsystem=i + 1, log=log)
                raise
            inputs.append(_choose(allowed, policy, rng, last_used[i]))
        ws = net.route([s.outputs(x)[1] for s, x in zip(net.subsystems, xs)])
        xs = [s.step(p, x, w) for s, p, x, w in zip(net.subsystems, modes, xs, ws)]
        for i, (sub, ctrl, u) in enumerate(zip(net.subsystems, controllers, inputs)):
            modes[i], dwell[i] = next_mode_counter(modes[i], dwell[i], u, sub.dwell_time)
            reds[i] = _red_counter(ctrl, modes[i], reds[i])
            last_used[i][modes[i]] = t + 1
        log.append(t + 1, xs, modes, reds)
    return log


@dataclass
class PairedRun:
    concrete: np.ndarray
    abstract: np.ndarray
    initial_value: float
    steps: int


def paired_runs(net: NetworkSpec, models: Sequence[SymbolicModel], x0: Sequence[np.ndarray],
                mode_seq: Sequence[Sequence[int]], fn: Optional[AltSimFn] = None) -> PairedRun:
    """
    Concrete network run and its witness abstract run from the nearest grid
    points of x0, both driven by the same mode tuples. The abstract successor is
    the grid point nearest to the abstract image; the run stops early if an
    image has no grid point within eta.
    """
    xs = [np.asarray(x, dtype=float).reshape(-1) for x in x0]
    xhs = []
    for model, x in zip(models, xs):
        pos = int(model.grid.index_of(model.grid.nearest_indices(x)))
        if pos < 0:
            raise NetworkError(f"initial state {x.tolist()} has no nearby grid point")
        xhs.append(model.grid.coords(pos))
    initial = float(fn.value(xs, xhs, [0] * net.N)) if fn is not None else 0.0

    out_c = [np.concatenate([s.outputs(x)[0] for s, x in zip(net.subsystems, xs)])]
    out_a = [np.concatenate([s.outputs(x)[0] for s, x in zip(net.subsystems, xhs)])]
    steps = 0
    for modes in mode_seq:
        ws = net.route([s.outputs(x)[1] for s, x in zip(net.subsystems, xs)])
        whs = net.route([s.outputs(x)[1] for s, x in zip(net.subsystems, xhs)])
        nxt_hat = []
        for sub, model, p, xh, wh in zip(net.subsystems, models, modes, xhs, whs):
            image = sub.step(p, xh, wh)
            pos = int(model.grid.index_of(model.grid.nearest_indices(image)))
            if pos < 0 or np.max(np.abs(model.grid.coords(pos) - image)) > model.eta + BALL_SLACK:
                break
            nxt_hat.append(model.grid.coords(pos))
        if len(nxt_hat) != net.N:
            logger.warning("abstract run left the grid after %d steps", steps)
            break
        xs = [s.step(p, x, w) for s, p, x, w in zip(net.subsystems, modes, xs, ws)]
        xhs = nxt_hat
        out_c.append(np.concatenate([s.outputs(x)[0] for s, x in zip(net.subsystems, xs)]))
        out_a.append(np.concatenate([s.outputs(x)[0] for s, x in zip(net.subsystems, xhs)]))
        steps += 1
    return PairedRun(np.array(out_c), np.array(out_a), initial, steps)


def check_mismatch_bound(net: NetworkSpec, abstract_run: np.ndarray, concrete_run: np.ndarray,
                         bound: RelationBound, initial_value: Optional[float] = None) -> Optional[float]:
    """Largest sup-norm output gap; None when the runs do not start related"""
    if initial_value is not None and initial_value > bound.phi + 1e-12:
        logger.warning("initial states are not related (S~ = %.4g > phi = %.4g); mismatch check skipped",
                       initial_value, bound.phi)
        return None
    a = np.asarray(abstract_run, dtype=float)
    c = np.asarray(concrete_run, dtype=float)
    if a.shape != c.shape:
        raise InputError(f"runs differ in shape: {a.shape} vs {c.shape}")
    gap = float(np.max(np.abs(a - c))) if a.size else 0.0
    if gap > bound.eps_hat + 1e-9:
        logger.error("output mismatch %.6g exceeds the bound %.6g", gap, bound.eps_hat)
    return gap


def export_csv(log: TrajectoryLog, path) -> None:
    log.to_frame().to_csv(path, index=False, float_format='%.9g', lineterminator='\n')


def _longest_run(values: Sequence[int], target: int) -> int:
    best = run = 0
    for v in values:
        run = run + 1 if v == target else 0
        best = max(best, run)
    return best


def summarize(log: TrajectoryLog, red_mode: int = 1, mismatch: Optional[float] = None) -> Dict[str, Any]:
    if not len(log):
        return {'steps': 0, 'max_mismatch': mismatch}
    stacked = np.array([np.concatenate(xs) for xs in log.states])
    N = len(log.state_dims)
    applied = log.applied_modes()
    return {
        'steps': len(log),
        'min_state': float(stacked.min()),
        'max_state': float(stacked.max()),
        'longest_red_run': [_longest_run([m[i] for m in applied], red_mode) for i in range(N)],
        'max_mismatch': mismatch,
    }
