"""
Networks of switched subsystems coupled through a static matrix M, the
compositionality checks on their storage functions, and the output-mismatch
bound of the composed abstraction.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .abstraction import BALL_SLACK, SymbolicModel
from .certificates import AugStorageFn
from .errors import InputError, NetworkError, ParameterError, UnsupportedCertificateError
from .matcert import SymMatrix, block_diag, is_nsd, max_eig
from .system import PowerK, SwitchedSubsystem, mode_tuples, quantize_set
from .transition import next_mode_counter

logger = logging.getLogger(__name__)

# Resolution of the keys used to compare internal input/output point sets
POINT_KEY_SCALE = 1e9


def _point_keys(points: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(points, dtype=float) * POINT_KEY_SCALE).astype(np.int64)


def _unique_points(points: np.ndarray) -> np.ndarray:
    """Deduplicate by key; rows come back in lexicographic key order"""
    if len(points) == 0:
        return points
    _, first = np.unique(_point_keys(points), axis=0, return_index=True)
    return points[first]


class NetworkSpec:
    """Ordered subsystems, coupling matrix and compositional weights"""

    def __init__(self, subsystems: Sequence[SwitchedSubsystem], M, weights: Optional[Sequence[float]] = None,
                 check_well_defined: bool = True):
        self.subsystems = tuple(subsystems)
        if not self.subsystems:
            raise NetworkError("network needs at least one subsystem")
        self.input_dims = [s.input_dim for s in self.subsystems]
        self.output_dims = [s.y2_dim for s in self.subsystems]
        rows, cols = sum(self.input_dims), sum(self.output_dims)
        M = np.asarray(M, dtype=float)
        if M.size == 0:
            M = np.zeros((rows, cols))
        if M.shape != (rows, cols):
            raise NetworkError(f"coupling matrix is {M.shape}, expected ({rows}, {cols}) from the subsystem channels")
        self.M = M
        self.M.setflags(write=False)
        self.weights = [1.0] * len(self.subsystems) if weights is None else [float(v) for v in weights]
        if len(self.weights) != len(self.subsystems) or any(v <= 0 for v in self.weights):
            raise NetworkError("one positive weight per subsystem is required")
        self._in_off = np.concatenate([[0], np.cumsum(self.input_dims)]).astype(int)
        self._out_off = np.concatenate([[0], np.cumsum(self.output_dims)]).astype(int)
        if check_well_defined:
            self.check_well_defined()

    @property
    def N(self) -> int:
        return len(self.subsystems)

    def block(self, i: int, j: int) -> np.ndarray:
        """Coupling block from subsystem j's internal output to subsystem i's internal input"""
        return self.M[self._in_off[i]:self._in_off[i + 1], self._out_off[j]:self._out_off[j + 1]]

    def input_rows(self, i: int) -> np.ndarray:
        """Rows of M feeding subsystem i's internal input"""
        return self.M[self._in_off[i]:self._in_off[i + 1], :]

    def split_inputs(self, stacked: np.ndarray) -> List[np.ndarray]:
        return [stacked[..., self._in_off[i]:self._in_off[i + 1]] for i in range(self.N)]

    def route(self, outputs: Sequence[np.ndarray]) -> List[np.ndarray]:
        """Internal inputs M [y2_1; ...; y2_N] split per subsystem (rows may be batched)"""
        stacked = np.concatenate([np.asarray(y, dtype=float) for y in outputs], axis=-1)
        return self.split_inputs(stacked @ self.M.T)

    def check_well_defined(self) -> None:
        """M maps the product of internal output boxes into the product of internal input sets"""
        boxes = [s.internal_output_box() if s.y2_dim else None for s in self.subsystems]
        lo = np.concatenate([np.asarray(b.lower) for b in boxes if b is not None] or [np.zeros(0)])
        hi = np.concatenate([np.asarray(b.upper) for b in boxes if b is not None] or [np.zeros(0)])
        center, radius = (lo + hi) / 2, (hi - lo) / 2
        img_lo = self.M @ center - np.abs(self.M) @ radius
        img_hi = self.M @ center + np.abs(self.M) @ radius
        for i, sub in enumerate(self.subsystems):
            if not sub.input_dim:
                continue
            a, b = self._in_off[i], self._in_off[i + 1]
            hull = sub.internal_input_set.hull()
            if np.any(img_lo[a:b] < np.asarray(hull.lower) - 1e-9) or np.any(img_hi[a:b] > np.asarray(hull.upper) + 1e-9):
                raise NetworkError(
                    f"{sub.name}: routed internal inputs span [{img_lo[a:b].tolist()}, {img_hi[a:b].tolist()}], "
                    f"outside the internal input set {hull.lower}..{hull.upper}", subsystem=i + 1)


class InterconnectedSystem:
    """Concrete network without internal channels; modes are tuples"""

    def __init__(self, net: NetworkSpec):
        self.net = net

    @property
    def subsystems(self):
        return self.net.subsystems

    def mode_set(self) -> Iterator[Tuple[int, ...]]:
        return mode_tuples(self.subsystems)

    def internal_inputs(self, states: Sequence[np.ndarray]) -> List[np.ndarray]:
        outputs = [s.outputs(x)[1] for s, x in zip(self.subsystems, states)]
        return self.net.route(outputs)

    def step(self, modes: Sequence[int], states: Sequence[np.ndarray]) -> List[np.ndarray]:
        if len(modes) != self.net.N or len(states) != self.net.N:
            raise InputError(f"expected {self.net.N} modes and states")
        ws = self.internal_inputs(states)
        return [s.step(p, x, w) for s, p, x, w in zip(self.subsystems, modes, states, ws)]

    def outputs(self, states: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([s.outputs(x)[0] for s, x in zip(self.subsystems, states)])


def interconnect_concrete(net: NetworkSpec) -> InterconnectedSystem:
    return InterconnectedSystem(net)


def assemble_Rdelta(net: NetworkSpec, R_list: Sequence[Optional[SymMatrix]]) -> Optional[SymMatrix]:
    """Weighted block-diagonal interleave of the subsystems' [w; y2] supply matrices"""
    if len(R_list) != net.N:
        raise NetworkError(f"{len(R_list)} supply matrices for {net.N} subsystems")
    blocks = {(a, b): [] for a in (0, 1) for b in (0, 1)}
    for i, (R, wd, yd) in enumerate(zip(R_list, net.input_dims, net.output_dims)):
        if wd + yd == 0:
            continue
        if R is None or R.dim != wd + yd:
            raise NetworkError(f"subsystem {i + 1}: supply matrix must be {wd + yd}x{wd + yd}", subsystem=i + 1)
        r, mu = R.array, net.weights[i]
        blocks[0, 0].append(mu * r[:wd, :wd])
        blocks[0, 1].append(mu * r[:wd, wd:])
        blocks[1, 0].append(mu * r[wd:, :wd])
        blocks[1, 1].append(mu * r[wd:, wd:])
    if not blocks[0, 0]:
        return None
    top = np.hstack([block_diag(blocks[0, 0]), block_diag(blocks[0, 1])])
    bottom = np.hstack([block_diag(blocks[1, 0]), block_diag(blocks[1, 1])])
    return SymMatrix(np.vstack([top, bottom]))


def composition_matrix(net: NetworkSpec, R_list: Sequence[Optional[SymMatrix]]) -> Optional[SymMatrix]:
    """[M; I]^T R_delta [M; I]"""
    Rd = assemble_Rdelta(net, R_list)
    if Rd is None:
        return None
    q = net.M.shape[1]
    G = np.vstack([net.M, np.eye(q)])
    return SymMatrix(G.T @ Rd.array @ G)


def check_composition_lmi(net: NetworkSpec, R_list: Sequence[Optional[SymMatrix]],
                          tol: Optional[float] = None) -> Tuple[bool, float]:
    """Negative semidefiniteness of the routed supply matrix, with its largest eigenvalue"""
    mat = composition_matrix(net, R_list)
    if mat is None or mat.dim == 0:
        return True, 0.0
    margin = max_eig(mat)
    ok = is_nsd(mat, tol)
    logger.info("composition LMI: max eigenvalue %.3e (%s)", margin, 'holds' if ok else 'fails')
    return ok, margin


def internal_input_override(net: NetworkSpec, etas: Sequence[float]) -> List[Optional[np.ndarray]]:
    """
    Per-subsystem internal input points: the projection onto subsystem i's rows of
    M applied to the product of the quantized internal output sets.
    """
    outputs = [quantize_set(s.state_set, eta).points @ s.C2.T if s.y2_dim else None
               for s, eta in zip(net.subsystems, etas)]
    overrides: List[Optional[np.ndarray]] = []
    for i, sub in enumerate(net.subsystems):
        if not sub.input_dim:
            overrides.append(None)
            continue
        acc = np.zeros((1, sub.input_dim))
        for j in range(net.N):
            blk = net.block(i, j)
            if outputs[j] is None or not np.any(blk):
                continue
            contrib = _unique_points(outputs[j] @ blk.T)
            acc = _unique_points((acc[:, None, :] + contrib[None, :, :]).reshape(-1, sub.input_dim))
        overrides.append(_unique_points(acc))
        logger.info("%s: %d internal input points from the coupling", sub.name, len(acc))
    return overrides


@dataclass
class InputMatch:
    matched: bool
    counterexample: Optional[Dict[str, object]] = None

    def __bool__(self) -> bool:
        return self.matched


def check_internal_input_match(net: NetworkSpec, models: Sequence[SymbolicModel]) -> InputMatch:
    """Each model's internal input points equal the projection of M times the abstract internal outputs"""
    if len(models) != net.N:
        raise NetworkError(f"{len(models)} models for {net.N} subsystems")
    outputs = [_unique_points(m.internal_outputs()) if s.y2_dim else None
               for m, s in zip(models, net.subsystems)]
    for i, (sub, model) in enumerate(zip(net.subsystems, models)):
        if not sub.input_dim:
            continue
        acc = np.zeros((1, sub.input_dim))
        for j in range(net.N):
            blk = net.block(i, j)
            if outputs[j] is None or not np.any(blk):
                continue
            acc = _unique_points((acc[:, None, :] + (outputs[j] @ blk.T)[None, :, :]).reshape(-1, sub.input_dim))
        expected = {tuple(k) for k in _point_keys(acc)}
        actual = {tuple(k) for k in _point_keys(model.internal_inputs)}
        if expected != actual:
            missing = sorted(expected - actual)
            extra = sorted(actual - expected)
            key = missing[0] if missing else extra[0]
            example = {
                'subsystem': i + 1,
                'point': [v / POINT_KEY_SCALE for v in key],
                'kind': 'routed point absent from the model' if missing else 'model point not produced by the coupling',
            }
            logger.warning("internal input mismatch: %s", example)
            return InputMatch(False, example)
    return InputMatch(True)


@dataclass(frozen=True)
class AltSimFn:
    """Network-level function S~ = sum_i mu_i V_i with its constants"""

    alpha_tilde: PowerK
    sigma_tilde: float
    eps_tilde: float
    weights: Tuple[float, ...] = ()
    components: Tuple[AugStorageFn, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if not 0 < self.sigma_tilde < 1:
            raise ParameterError(f"sigma_tilde must lie in (0, 1), got {self.sigma_tilde}")

    def value(self, states: Sequence[np.ndarray], abstract: Sequence[np.ndarray], counters: Sequence[int]):
        return sum(mu * fn.value(x, xh, l)
                   for mu, fn, x, xh, l in zip(self.weights, self.components, states, abstract, counters))


def compose_alt_sim(net: NetworkSpec, aug_list: Sequence[AugStorageFn]) -> AltSimFn:
    """
    sigma~ = max sigma_i, eps~ = sum mu_i eps_i. For identical alpha_i(s) = a s^b
    with b >= 1 and identical weights mu, the worst split gives
    alpha~(s) = mu a N^(1-b) s^b.
    """
    if len(aug_list) != net.N:
        raise NetworkError(f"{len(aug_list)} storage functions for {net.N} subsystems")
    sigma = max(fn.sigma for fn in aug_list)
    eps = sum(mu * fn.eps_offset for mu, fn in zip(net.weights, aug_list))
    alphas = {(round(fn.alpha.coeff, 12), round(fn.alpha.exponent, 12)) for fn in aug_list}
    weights = {round(mu, 12) for mu in net.weights}
    if len(alphas) != 1 or len(weights) != 1:
        raise UnsupportedCertificateError("alpha composition needs identical alpha_i and identical weights",
                                          alphas=sorted(alphas), weights=sorted(weights))
    a, b = aug_list[0].alpha.coeff, aug_list[0].alpha.exponent
    mu = net.weights[0]
    if net.N > 1 and b < 1:
        raise UnsupportedCertificateError(f"alpha exponent {b} < 1 has no closed-form composition")
    alpha = PowerK(mu * a * net.N ** (1.0 - b), b)
    return AltSimFn(alpha, sigma, eps, tuple(net.weights), tuple(aug_list))


@dataclass(frozen=True)
class RelationBound:
    psi: float
    phi: float
    eps_hat: float
    rho: float

    def to_dict(self) -> Dict[str, float]:
        return {'psi': self.psi, 'phi': self.phi, 'eps_hat': self.eps_hat, 'rho': self.rho}


def error_bound(fn: AltSimFn, psi: float) -> RelationBound:
    if not 0 < psi < 1:
        raise ParameterError(f"psi must lie in (0, 1), got {psi}")
    phi = fn.eps_tilde / ((1.0 - fn.sigma_tilde) * psi)
    rho = 1.0 - (1.0 - psi) * (1.0 - fn.sigma_tilde)
    eps_hat = float(fn.alpha_tilde.inverse()(phi)) if phi > 0 else 0.0
    return RelationBound(psi=psi, phi=phi, eps_hat=eps_hat, rho=rho)


class NetworkSymbolicModel:
    """
    Product of subsystem abstractions with internal inputs routed through M.

    Product states are tuples of (grid position, mode, counter) per subsystem;
    successors are computed on demand.
    """

    def __init__(self, models: Sequence[SymbolicModel], net: NetworkSpec):
        self.models = tuple(models)
        self.net = net
        self._input_lookup = [
            {tuple(k): idx for idx, k in enumerate(_point_keys(m.internal_inputs))} for m in self.models
        ]

    @property
    def n_states(self) -> int:
        return math.prod(m.n_states for m in self.models)

    def enumerate_states(self) -> Iterator[Tuple[Tuple[int, int, int], ...]]:
        return itertools.product(*[m.iter_states() for m in self.models])

    def input_indices(self, positions: Sequence[int]) -> List[int]:
        """Internal input point index of each subsystem for the given grid positions"""
        outputs = [m.internal_outputs([pos])[0] for m, pos in zip(self.models, positions)]
        routed = self.net.route(outputs) if self.net.M.size else [np.zeros(0)] * self.net.N
        indices = []
        for i, (model, w) in enumerate(zip(self.models, routed)):
            if model.internal_inputs.shape[1] == 0:
                indices.append(0)
                continue
            idx = self._input_lookup[i].get(tuple(_point_keys(w)))
            if idx is None:
                raise NetworkError(f"subsystem {i + 1}: routed internal input {w.tolist()} is not a model input point",
                                   subsystem=i + 1)
            indices.append(idx)
        return indices

    def successors(self, state: Sequence[Tuple[int, int, int]], modes: Sequence[int]):
        w_idx = self.input_indices([s[0] for s in state])
        parts = [m.successors(x, p, l, u, w) for m, (x, p, l), u, w in zip(self.models, state, modes, w_idx)]
        return [tuple(c) for c in itertools.product(*parts)]


def compose_symbolic_network(models: Sequence[SymbolicModel], net: NetworkSpec) -> NetworkSymbolicModel:
    match = check_internal_input_match(net, models)
    if not match:
        raise NetworkError("abstract internal inputs do not match the routed abstract outputs",
                           **(match.counterexample or {}))
    return NetworkSymbolicModel(models, net)


def validate_network_mc(net: NetworkSpec, models: Sequence[SymbolicModel], fn: AltSimFn,
                        samples: int = 1000, seed: int = 0) -> float:
    """
    Largest sampled violation of S~(next) <= sigma~ S~ + eps~ over joint states,
    with witness abstract successors taken as nearest grid points.
    """
    rng = np.random.default_rng(seed)
    worst = -math.inf
    N = net.N
    for _ in range(samples):
        xs, xhs, ps, ls, us = [], [], [], [], []
        for sub, model in zip(net.subsystems, models):
            xs.append(sub.state_set.sample(rng, 1)[0])
            xhs.append(model.grid.coords(int(rng.integers(model.n_grid))))
            p = int(rng.integers(1, sub.m + 1))
            l = int(rng.integers(0, sub.dwell_time))
            ps.append(p)
            ls.append(l)
            us.append(p if l < sub.dwell_time - 1 else int(rng.integers(1, sub.m + 1)))
        ws = net.route([s.outputs(x)[1] for s, x in zip(net.subsystems, xs)])
        whs = net.route([s.outputs(x)[1] for s, x in zip(net.subsystems, xhs)])

        ok = True
        nxt, nxt_hat, nxt_l = [], [], []
        for i in range(N):
            sub, model = net.subsystems[i], models[i]
            x_next = sub.step(ps[i], xs[i], ws[i])
            image = sub.step(ps[i], xhs[i], whs[i])
            pos = int(model.grid.index_of(model.grid.nearest_indices(image)))
            if pos < 0 or not sub.state_set.contains(x_next)[0] or not sub.state_set.contains(image)[0]:
                ok = False
                break
            witness = model.grid.coords(pos)
            if np.max(np.abs(image - witness)) > model.eta + BALL_SLACK:
                ok = False
                break
            nxt.append(x_next)
            nxt_hat.append(witness)
            nxt_l.append(next_mode_counter(ps[i], ls[i], us[i], sub.dwell_time)[1])
        if not ok:
            continue
        gap = fn.value(nxt, nxt_hat, nxt_l) - (fn.sigma_tilde * fn.value(xs, xhs, ls) + fn.eps_tilde)
        worst = max(worst, float(gap))
    return worst
