"""
Safety controllers on symbolic models: the fairness counter product, the
greatest safe fixed point, assume-guarantee input restriction, refinement to
concrete states, and controller files.
"""

import hashlib
import io
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .abstraction import SymbolicModel
from .errors import FormatError, InputError, ParameterError, RefinementError, SynthesisInfeasible
from .system import BoxUnion
from .transition import next_mode_counter

logger = logging.getLogger(__name__)

CONTROLLER_TAG = '# symnet-controller '
CONTROLLER_VERSION = 1


@dataclass(frozen=True)
class SafetySpec:
    safe_set: BoxUnion
    fairness_limit: Optional[int] = None
    red_mode: int = 1

    def __post_init__(self):
        if self.fairness_limit is not None and self.fairness_limit < 1:
            raise ParameterError(f"fairness limit must be >= 1, got {self.fairness_limit}")
        if self.red_mode < 1:
            raise ParameterError(f"red mode must be a mode index >= 1, got {self.red_mode}")

    @property
    def counter_size(self) -> int:
        return 1 if self.fairness_limit is None else self.fairness_limit + 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            'safe_set': [[list(b.lower), list(b.upper)] for b in self.safe_set.boxes],
            'fairness_limit': self.fairness_limit,
            'red_mode': self.red_mode,
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


class ProductModel:
    """A symbolic model paired with the red-run counter of a safety spec"""

    def __init__(self, model: SymbolicModel, spec: SafetySpec):
        if spec.safe_set.dim != model.C1.shape[0]:
            raise InputError(f"safe set has dimension {spec.safe_set.dim}, external output has {model.C1.shape[0]}")
        if spec.fairness_limit is not None and spec.red_mode > model.n_modes:
            raise InputError(f"red mode {spec.red_mode} exceeds the {model.n_modes} modes of {model.name}")
        self.model = model
        self.spec = spec
        K = model.n_grid
        self._rows = []
        for p in range(1, model.n_modes + 1):
            per_state = model.successor_counts(p).sum(axis=1)
            self._rows.append(np.repeat(np.arange(K), per_state))
        self._stuck = model.empty_mask()

    @property
    def fair(self) -> bool:
        return self.spec.fairness_limit is not None

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        m = self.model
        return (m.n_grid, m.n_modes, m.dwell_time, self.spec.counter_size)

    def next_counter(self, c: int, p_next: int) -> int:
        if not self.fair:
            return 0
        return c + 1 if p_next == self.spec.red_mode else 0

    def allowed_inputs(self, p: int, l: int, c: int) -> List[Tuple[int, int, int, int]]:
        """(u, p', l', c') for every input permitted by the dwell time and the fairness limit"""
        out = []
        k_d = self.model.dwell_time
        for u in range(1, self.model.n_modes + 1):
            if l < k_d - 1 and u != p:
                continue
            p2, l2 = next_mode_counter(p, l, u, k_d)
            c2 = self.next_counter(c, p2)
            if c2 < self.spec.counter_size:
                out.append((u, p2, l2, c2))
        return out

    def consistent(self) -> np.ndarray:
        """Counter values that can occur: c > 0 exactly when the current mode is red"""
        mask = np.ones(self.shape[1:], dtype=bool)
        if self.fair:
            for p in range(1, self.model.n_modes + 1):
                red = p == self.spec.red_mode
                mask[p - 1, :, 0] = not red
                mask[p - 1, :, 1:] = red
        return mask

    def initial_set(self, shrink: float = 0.0) -> np.ndarray:
        """States whose output lies in the deflated safe set, with progressing dynamics"""
        if shrink < 0:
            raise ParameterError(f"shrink must be >= 0, got {shrink}")
        target = self.spec.safe_set.deflate(shrink) if shrink > 0 else self.spec.safe_set
        if target is None:
            raise SynthesisInfeasible(f"safe set is empty after shrinking by {shrink}", iterations=0)
        safe = target.contains(self.model.external_outputs(), tol=1e-9)
        progressing = ~self._stuck.T
        return (safe[:, None, None, None] & progressing[:, :, None, None] & self.consistent()[None])

    def good_moves(self, domain: np.ndarray) -> np.ndarray:
        """(K, m, k_d, C, m) True where input u keeps every successor inside domain"""
        K, m, k_d, C = self.shape
        good = np.zeros((K, m, k_d, C, m), dtype=bool)
        cache: Dict[Tuple[int, int, int, int], np.ndarray] = {}
        for p in range(1, m + 1):
            targets = self.model.targets[p - 1]
            for l in range(k_d):
                for c in range(C):
                    for u, p2, l2, c2 in self.allowed_inputs(p, l, c):
                        key = (p, p2, l2, c2)
                        if key not in cache:
                            outside = ~domain[targets, p2 - 1, l2, c2]
                            bad = np.bincount(self._rows[p - 1], weights=outside.astype(float), minlength=K)
                            cache[key] = (bad == 0) & ~self._stuck[p - 1]
                        good[:, p - 1, l, c, u - 1] = cache[key]
        return good


def build_spec_product(model: SymbolicModel, spec: SafetySpec) -> ProductModel:
    return ProductModel(model, spec)


@dataclass
class Controller:
    """Winning domain over (grid state, mode, counter, red-run counter) and allowed inputs as bitmasks"""

    domain: np.ndarray
    moves: np.ndarray
    model: SymbolicModel
    spec: SafetySpec
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(self.domain.sum())

    def allowed(self, x_idx: int, p: int, l: int, c: int) -> List[int]:
        mask = int(self.moves[x_idx, p - 1, l, c])
        return [u for u in range(1, self.model.n_modes + 1) if mask >> (u - 1) & 1]

    def contains_outputs(self, box_lower, box_upper, p: int = 1, l: int = 0, c: int = 0) -> bool:
        """True when every grid state whose output lies in the given box is in the domain"""
        outs = self.model.external_outputs()
        region = BoxUnion.from_bounds(box_lower, box_upper).contains(outs, tol=1e-9)
        return bool(np.all(self.domain[region, p - 1, l, c]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Controller):
            return NotImplemented
        return np.array_equal(self.domain, other.domain) and np.array_equal(self.moves, other.moves)


def _pack_moves(good: np.ndarray) -> np.ndarray:
    weights = (1 << np.arange(good.shape[-1], dtype=np.uint32)).astype(np.uint32)
    return (good.astype(np.uint32) * weights).sum(axis=-1).astype(np.uint32)


def safety_fixed_point(product: ProductModel, shrink: float = 0.0) -> Controller:
    """Greatest fixed point of Q -> {s in Q | some input keeps all successors in Q}"""
    domain = product.initial_set(shrink)
    limit = int(np.prod(product.shape))
    iterations = 0
    while True:
        iterations += 1
        good = product.good_moves(domain)
        nxt = domain & good.any(axis=-1)
        if np.array_equal(nxt, domain) or iterations > limit:
            break
        domain = nxt
    logger.info("%s: fixed point after %d sweeps, %d of %d product states winning",
                product.model.name, iterations, int(domain.sum()), limit)
    if not domain.any():
        raise SynthesisInfeasible(f"{product.model.name}: safety game has an empty winning domain",
                                  iterations=iterations)
    moves = _pack_moves(good & domain[..., None])
    meta = {
        'model_digest': product.model.digest(),
        'spec_digest': product.spec.digest(),
        'shrink': float(shrink),
        'iterations': iterations,
    }
    return Controller(domain=domain, moves=moves, model=product.model, spec=product.spec, meta=meta)


def verify_invariance(ctrl: Controller, product: ProductModel) -> bool:
    """Every allowed move from every domain state keeps all successors in the domain"""
    good = _pack_moves(product.good_moves(ctrl.domain))
    inside = ctrl.moves[ctrl.domain]
    return bool(np.all(inside != 0) and np.all((inside & ~good[ctrl.domain]) == 0))


def restrict_internal_inputs(model: SymbolicModel, assumed_output_set: BoxUnion, M_row_block) -> SymbolicModel:
    """Keep the internal input points inside M_row_block applied to the assumed neighbour outputs"""
    M_row_block = np.atleast_2d(np.asarray(M_row_block, dtype=float))
    if model.internal_inputs.shape[1] == 0:
        return model
    if M_row_block.shape != (model.internal_inputs.shape[1], assumed_output_set.dim):
        raise InputError(f"coupling block {M_row_block.shape} does not map the assumed set "
                         f"(dim {assumed_output_set.dim}) to the internal input (dim {model.internal_inputs.shape[1]})")
    image = BoxUnion([assumed_output_set.image_box(M_row_block)])
    keep = image.contains(model.internal_inputs, tol=1e-9)
    if not keep.any():
        logger.warning("%s: assumed outputs leave no internal input point; every state is blocked", model.name)
    else:
        logger.info("%s: assume-guarantee keeps %d of %d internal input points",
                    model.name, int(keep.sum()), len(keep))
    return model.select_inputs(keep)


def _nearest_positions(grid, x: np.ndarray) -> List[int]:
    """Grid positions within eta/2 of x; both neighbours of every coordinate sitting on a tie"""
    scaled = x / grid.eta
    low = np.floor(scaled).astype(np.int64)
    tie = np.abs(scaled - low - 0.5) <= 1e-9
    base = grid.nearest_indices(x)
    options = [(base[k], base[k] + 1) if tie[k] and base[k] == low[k] else (base[k],) for k in range(len(x))]
    positions = []
    for multi in itertools.product(*options):
        pos = int(grid.index_of(np.array(multi)))
        if pos >= 0 and np.max(np.abs(grid.coords(pos) - x)) <= grid.eta / 2 + 1e-9 * grid.eta:
            positions.append(pos)
    return positions


def refine_controller(ctrl: Controller, x, p: int, l: int, c: int) -> List[int]:
    """Allowed modes for a concrete state through a grid point within eta/2, lower point first on ties"""
    x = np.asarray(x, dtype=float).reshape(-1)
    positions = _nearest_positions(ctrl.model.grid, x)
    if not positions:
        raise RefinementError(f"state {x.tolist()} is not within eta/2 of the grid", state=x.tolist())
    for pos in positions:
        if ctrl.domain[pos, p - 1, l, c]:
            return ctrl.allowed(pos, p, l, c)
    raise RefinementError(f"state {x.tolist()} (mode {p}, counter {l}, red run {c}) is outside the controller domain",
                          state=x.tolist(), mode=p, counter=l, fairness=c)


def _domain_records(ctrl: Controller) -> pd.DataFrame:
    pos, p, l, c = np.nonzero(ctrl.domain)
    idx = ctrl.model.grid.indices[pos]
    data = {f'i_{k + 1}': idx[:, k] for k in range(idx.shape[1])}
    data.update({'mode': p + 1, 'counter': l, 'fairness': c, 'moves': ctrl.moves[pos, p, l, c]})
    return pd.DataFrame(data)


def save_controller(ctrl: Controller, path, eps_hat: Optional[float] = None) -> None:
    header = dict(ctrl.meta)
    header.update({'version': CONTROLLER_VERSION, 'eps_hat': eps_hat, 'shape': list(ctrl.domain.shape),
                   'spec': ctrl.spec.to_dict()})
    with open(path, 'w', newline='') as fh:
        fh.write(CONTROLLER_TAG + json.dumps(header, sort_keys=True) + '\n')
        _domain_records(ctrl).to_csv(fh, index=False, lineterminator='\n')
    logger.info("saved controller for %s (%d domain states) to %s", ctrl.model.name, ctrl.size, path)


def load_controller(path, model: SymbolicModel, spec: SafetySpec) -> Controller:
    try:
        with open(path, 'r') as fh:
            first = fh.readline()
            body = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read controller file {path}: {exc}") from exc
    if not first.startswith(CONTROLLER_TAG):
        raise FormatError(f"{path} is not a symnet controller file")
    try:
        header = json.loads(first[len(CONTROLLER_TAG):])
        frame = pd.read_csv(io.StringIO(body))
    except (ValueError, pd.errors.ParserError) as exc:
        raise FormatError(f"corrupt controller file {path}: {exc}") from exc
    if header.get('version') != CONTROLLER_VERSION:
        raise FormatError(f"unsupported controller version {header.get('version')}")
    if header.get('model_digest') != model.digest():
        raise FormatError(f"{path} was synthesized for a different symbolic model")
    shape = tuple(header['shape'])
    if shape[:3] != (model.n_grid, model.n_modes, model.dwell_time):
        raise FormatError(f"controller shape {shape} does not fit the model")

    domain = np.zeros(shape, dtype=bool)
    moves = np.zeros(shape, dtype=np.uint32)
    if len(frame):
        idx = frame[[f'i_{k + 1}' for k in range(model.grid.dim)]].to_numpy(dtype=np.int64)
        pos = model.grid.index_of(idx)
        if np.any(pos < 0):
            raise FormatError(f"controller file {path} names states outside the grid")
        key = (pos, frame['mode'].to_numpy() - 1, frame['counter'].to_numpy(), frame['fairness'].to_numpy())
        domain[key] = True
        moves[key] = frame['moves'].to_numpy(dtype=np.uint32)
    meta = {k: header[k] for k in ('model_digest', 'spec_digest', 'shrink', 'iterations') if k in header}
    return Controller(domain=domain, moves=moves, model=model, spec=spec, meta=meta)


def export_domain_csv(ctrl: Controller, path) -> None:
    frame = _domain_records(ctrl)
    coords = ctrl.model.grid.coords(np.nonzero(ctrl.domain)[0])
    out = pd.DataFrame({f'x_{k + 1}': coords[:, k] for k in range(coords.shape[1])})
    out['mode'] = frame['mode'].to_numpy()
    out['counter'] = frame['counter'].to_numpy()
    out['fairness'] = frame['fairness'].to_numpy()
    out['allowed'] = ['|'.join(str(u) for u in range(1, ctrl.model.n_modes + 1) if int(mask) >> (u - 1) & 1)
                      for mask in frame['moves']]
    out.to_csv(path, index=False, float_format='%.9g', lineterminator='\n')
