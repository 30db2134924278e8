"""
Concrete discrete-time switched subsystems with internal inputs and outputs,
box-union sets and their grid quantization.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError, ParameterError

logger = logging.getLogger(__name__)

# Index-space slack when snapping set bounds to multiples of eta
GRID_SLACK = 1e-9


@dataclass(frozen=True)
class PowerK:
    """K-infinity function s -> coeff * s**exponent"""

    coeff: float
    exponent: float

    def __post_init__(self):
        if not (self.coeff > 0 and self.exponent > 0):
            raise ParameterError(f"PowerK needs coeff > 0 and exponent > 0, got ({self.coeff}, {self.exponent})")

    def __call__(self, s):
        return self.coeff * np.power(s, self.exponent)

    def inverse(self) -> 'PowerK':
        return PowerK(self.coeff ** (-1.0 / self.exponent), 1.0 / self.exponent)

    def compose(self, inner: 'PowerK') -> 'PowerK':
        """self o inner"""
        return PowerK(self.coeff * inner.coeff ** self.exponent, self.exponent * inner.exponent)

    def scaled(self, factor: float) -> 'PowerK':
        return PowerK(self.coeff * factor, self.exponent)

    def as_list(self) -> List[float]:
        return [self.coeff, self.exponent]


@dataclass(frozen=True)
class Box:
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)
        if len(lower) != len(upper):
            raise InputError(f"box bounds differ in dimension: {len(lower)} vs {len(upper)}")
        if not all(np.isfinite(lower + upper)):
            raise InputError("box bounds must be finite")
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise InputError(f"box needs lower < upper componentwise, got {lower} / {upper}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def edges(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= np.asarray(self.lower) - tol) & (pts <= np.asarray(self.upper) + tol), axis=1)

    def index_range(self, eta: float) -> Tuple[np.ndarray, np.ndarray]:
        """Integer index bounds of the multiples of eta inside the box"""
        lo = np.ceil(np.asarray(self.lower) / eta - GRID_SLACK).astype(np.int64)
        hi = np.floor(np.asarray(self.upper) / eta + GRID_SLACK).astype(np.int64)
        return lo, hi


class BoxUnion:
    """Finite union of equal-dimension boxes"""

    def __init__(self, boxes: Iterable[Box]):
        boxes = tuple(boxes)
        if not boxes:
            raise InputError("box union needs at least one box")
        dims = {b.dim for b in boxes}
        if len(dims) != 1:
            raise InputError(f"boxes of a union must share their dimension, got {sorted(dims)}")
        self.boxes = boxes

    @classmethod
    def from_bounds(cls, lower: Sequence[float], upper: Sequence[float]) -> 'BoxUnion':
        return cls([Box(tuple(lower), tuple(upper))])

    @property
    def dim(self) -> int:
        return self.boxes[0].dim

    def hull(self) -> Box:
        lower = np.min([b.lower for b in self.boxes], axis=0)
        upper = np.max([b.upper for b in self.boxes], axis=0)
        return Box(tuple(lower), tuple(upper))

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(pts.shape[0], dtype=bool)
        for box in self.boxes:
            inside |= box.contains(pts, tol)
        return inside

    def contains_indices(self, indices: np.ndarray, eta: float) -> np.ndarray:
        """Membership of grid multi-indices, using the same snapping as quantize_set"""
        idx = np.atleast_2d(indices)
        inside = np.zeros(idx.shape[0], dtype=bool)
        for box in self.boxes:
            lo, hi = box.index_range(eta)
            inside |= np.all((idx >= lo) & (idx <= hi), axis=1)
        return inside

    def contains_box(self, box: Box, tol: float = 1e-9) -> bool:
        """True when box lies inside a single member box"""
        return any(
            np.all(np.asarray(box.lower) >= np.asarray(b.lower) - tol)
            and np.all(np.asarray(box.upper) <= np.asarray(b.upper) + tol)
            for b in self.boxes
        )

    def diameter(self) -> float:
        """Euclidean diameter of the union (that of its hull)"""
        return float(np.linalg.norm(self.hull().edges()))

    def image_box(self, matrix: np.ndarray) -> Box:
        """Interval hull of G*S for a linear map G"""
        G = np.atleast_2d(np.asarray(matrix, dtype=float))
        hull = self.hull()
        center = (np.asarray(hull.lower) + np.asarray(hull.upper)) / 2
        radius = hull.edges() / 2
        mid = G @ center
        spread = np.abs(G) @ radius
        # degenerate directions keep a tiny positive width so the result is a valid Box
        spread = np.where(spread > 0, spread, 1e-12)
        return Box(tuple(mid - spread), tuple(mid + spread))

    def deflate(self, amount: float) -> Optional['BoxUnion']:
        """Shrink every box by amount in sup-norm; None when nothing is left"""
        kept = []
        for b in self.boxes:
            lo = np.asarray(b.lower) + amount
            hi = np.asarray(b.upper) - amount
            if np.all(lo < hi):
                kept.append(Box(tuple(lo), tuple(hi)))
        return BoxUnion(kept) if kept else None

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform samples; boxes are chosen proportionally to their volume"""
        volumes = np.array([float(np.prod(b.edges())) for b in self.boxes])
        choice = rng.choice(len(self.boxes), size=count, p=volumes / volumes.sum())
        lower = np.array([b.lower for b in self.boxes])[choice]
        upper = np.array([b.upper for b in self.boxes])[choice]
        return lower + rng.random((count, self.dim)) * (upper - lower)

    def __eq__(self, other) -> bool:
        return isinstance(other, BoxUnion) and self.boxes == other.boxes

    def __repr__(self) -> str:
        return f"BoxUnion({list(self.boxes)!r})"


def span(S: BoxUnion) -> float:
    """Minimum edge length over all boxes"""
    return float(min(np.min(b.edges()) for b in S.boxes))


class Grid:
    """
    The quantized set [S]_eta, stored as lexicographically sorted integer
    multi-indices; coordinates are index * eta, materialized on demand.
    """

    def __init__(self, indices: np.ndarray, eta: float):
        idx = np.asarray(indices, dtype=np.int64)
        if idx.ndim != 2:
            raise InputError("grid indices must be a 2-D array")
        self.indices = idx
        self.indices.setflags(write=False)
        self.eta = float(eta)
        if len(idx):
            self._lo = idx.min(axis=0)
            extent = idx.max(axis=0) - self._lo + 1
        else:
            self._lo = np.zeros(idx.shape[1], dtype=np.int64)
            extent = np.ones(idx.shape[1], dtype=np.int64)
        self._extent = extent
        self._strides = np.concatenate([np.cumprod(extent[::-1])[::-1][1:], [1]]).astype(np.int64)
        self._keys = self._encode(idx)

    def _encode(self, idx: np.ndarray) -> np.ndarray:
        return (idx - self._lo) @ self._strides

    def __len__(self) -> int:
        return self.indices.shape[0]

    @property
    def dim(self) -> int:
        return self.indices.shape[1]

    @property
    def points(self) -> np.ndarray:
        return self.indices * self.eta

    def coords(self, positions) -> np.ndarray:
        return self.indices[positions] * self.eta

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self._lo.copy(), self._lo + self._extent - 1

    def index_of(self, multi: np.ndarray) -> np.ndarray:
        """Position of each multi-index in the grid, -1 when absent"""
        multi = np.asarray(multi, dtype=np.int64)
        flat = multi.reshape(-1, self.dim)
        inside = np.all((flat >= self._lo) & (flat < self._lo + self._extent), axis=1)
        keys = np.where(inside, self._encode(np.where(inside[:, None], flat, self._lo)), -1)
        pos = np.searchsorted(self._keys, keys)
        pos = np.clip(pos, 0, max(len(self._keys) - 1, 0))
        found = inside & (len(self._keys) > 0)
        if len(self._keys):
            found &= self._keys[pos] == keys
        return np.where(found, pos, -1).reshape(multi.shape[:-1])

    def nearest_indices(self, x: np.ndarray) -> np.ndarray:
        """Nearest multiple of eta per coordinate; ties go to the smaller index"""
        return np.ceil(np.asarray(x, dtype=float) / self.eta - 0.5).astype(np.int64)

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and self.eta == other.eta and np.array_equal(self.indices, other.indices)


def quantize_set(S: BoxUnion, eta: float) -> Grid:
    """[S]_eta: points of S whose coordinates are integer multiples of eta"""
    if not (0 < eta <= span(S) * (1 + 1e-12)):
        raise ParameterError(f"quantization parameter {eta} must lie in (0, span(S)={span(S)}]")
    blocks = []
    for box in S.boxes:
        lo, hi = box.index_range(eta)
        axes = [np.arange(a, b + 1, dtype=np.int64) for a, b in zip(lo, hi)]
        if any(len(ax) == 0 for ax in axes):
            continue
        mesh = np.meshgrid(*axes, indexing='ij')
        blocks.append(np.stack([m.ravel() for m in mesh], axis=1))
    if not blocks:
        raise ParameterError(f"[S]_eta is empty for eta={eta}")
    indices = blocks[0] if len(blocks) == 1 else np.unique(np.vstack(blocks), axis=0)
    return Grid(indices, eta)


def axis_counts(S: BoxUnion, eta: float) -> List[List[int]]:
    """Per-box, per-axis number of grid values, without materializing the grid"""
    counts = []
    for box in S.boxes:
        lo, hi = box.index_range(eta)
        counts.append([int(max(0, h - l + 1)) for l, h in zip(lo, hi)])
    return counts


@dataclass(frozen=True)
class ModeDynamics:
    """Affine mode map x' = A x + D w + B"""

    A: np.ndarray
    D: np.ndarray
    B: np.ndarray
    label: int = 1

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(-1)
        D = np.asarray(self.D, dtype=float)
        if D.size == 0:
            D = np.zeros((A.shape[0], 0))
        D = D.reshape(A.shape[0], -1) if D.ndim < 2 else D
        if A.shape[0] != A.shape[1]:
            raise InputError(f"mode {self.label}: A must be square, got {A.shape}")
        if D.shape[0] != A.shape[0] or B.shape[0] != A.shape[0]:
            raise InputError(f"mode {self.label}: D {D.shape} / B {B.shape} inconsistent with A {A.shape}")
        for name, arr in (('A', A), ('D', D), ('B', B)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"mode {self.label}: {name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


class SwitchedSubsystem:
    """Discrete-time switched subsystem with internal inputs/outputs and a dwell time"""

    def __init__(self, state_set: BoxUnion, internal_input_set: Optional[BoxUnion],
                 modes: Sequence[ModeDynamics], C1, C2, dwell_time: int = 1,
                 lipschitz_ell: Optional[PowerK] = None,
                 dynamics_override: Optional[Callable[[int, np.ndarray, np.ndarray], np.ndarray]] = None,
                 name: str = 'subsystem'):
        self.name = name
        self.state_set = state_set
        self.internal_input_set = internal_input_set
        self.modes = tuple(modes)
        self.C1 = np.atleast_2d(np.asarray(C1, dtype=float))
        self.C2 = np.asarray(C2, dtype=float)
        if self.C2.size == 0:
            self.C2 = np.zeros((0, state_set.dim))
        self.C2 = self.C2.reshape(-1, state_set.dim) if self.C2.ndim < 2 else self.C2
        self.dwell_time = int(dwell_time)
        self.dynamics_override = dynamics_override
        self._validate()
        self.lipschitz_ell = lipschitz_ell or PowerK(max(float(np.max(np.sum(np.abs(self.C1), axis=1))), 1e-12), 1.0)

    def _validate(self) -> None:
        if not self.modes:
            raise InputError(f"{self.name}: needs at least one mode")
        if self.dwell_time < 1:
            raise InputError(f"{self.name}: dwell time must be >= 1, got {self.dwell_time}")
        n = self.state_set.dim
        for C, label in ((self.C1, 'C1'), (self.C2, 'C2')):
            if C.shape[1] != n:
                raise InputError(f"{self.name}: {label} has {C.shape[1]} columns, state dimension is {n}")
        wdim = self.internal_input_set.dim if self.internal_input_set is not None else 0
        for mode in self.modes:
            if mode.A.shape[0] != n or mode.D.shape[1] != wdim:
                raise InputError(
                    f"{self.name}: mode {mode.label} dimensions (A {mode.A.shape}, D {mode.D.shape}) "
                    f"do not match state dim {n} / internal input dim {wdim}")

    @property
    def n(self) -> int:
        return self.state_set.dim

    @property
    def input_dim(self) -> int:
        return self.internal_input_set.dim if self.internal_input_set is not None else 0

    @property
    def y1_dim(self) -> int:
        return self.C1.shape[0]

    @property
    def y2_dim(self) -> int:
        return self.C2.shape[0]

    @property
    def m(self) -> int:
        return len(self.modes)

    @property
    def is_affine(self) -> bool:
        return self.dynamics_override is None

    def mode(self, p: int) -> ModeDynamics:
        if not (1 <= p <= self.m):
            raise InputError(f"{self.name}: mode {p} outside 1..{self.m}")
        return self.modes[p - 1]

    def step(self, p: int, x, w=None) -> np.ndarray:
        """x(k+1) = A_p x + D_p w + B_p"""
        x = np.asarray(x, dtype=float).reshape(-1)
        w = np.zeros(0) if w is None else np.asarray(w, dtype=float).reshape(-1)
        if x.shape[0] != self.n or w.shape[0] != self.input_dim:
            raise InputError(f"{self.name}: state/input dims {x.shape[0]}/{w.shape[0]}, "
                             f"expected {self.n}/{self.input_dim}")
        if self.dynamics_override is not None:
            return np.asarray(self.dynamics_override(p, x, w), dtype=float)
        mode = self.mode(p)
        return mode.A @ x + mode.D @ w + mode.B

    def step_batch(self, p: int, X: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Row-wise step for a batch of states and internal inputs under one mode"""
        if self.dynamics_override is not None:
            return np.array([self.step(p, x, w) for x, w in zip(X, W)]).reshape(X.shape)
        mode = self.mode(p)
        return X @ mode.A.T + W @ mode.D.T + mode.B

    def outputs(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """(y1, y2) = (C1 x, C2 x)"""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.n:
            raise InputError(f"{self.name}: state dim {x.shape[0]}, expected {self.n}")
        return self.C1 @ x, self.C2 @ x

    def internal_output_box(self) -> Box:
        return self.state_set.image_box(self.C2)

    def __repr__(self) -> str:
        return f"SwitchedSubsystem(name={self.name!r}, n={self.n}, m={self.m}, k_d={self.dwell_time})"


def validate_switching_signal(seq: Sequence[int], k_d: int) -> bool:
    """
    True iff consecutive switching instants are at least k_d steps apart.

    Time 0 counts as a switching instant: runs start with a fresh dwell
    counter, so the first switch may happen no earlier than step k_d.
    """
    if len(seq) == 0:
        raise InputError("switching signal must be nonempty")
    last_switch = 0
    for k in range(1, len(seq)):
        if seq[k] != seq[k - 1]:
            if k - last_switch < k_d:
                return False
            last_switch = k
    return True


def mode_tuples(subsystems: Sequence[SwitchedSubsystem]) -> Iterable[Tuple[int, ...]]:
    """Product mode set of a network"""
    return itertools.product(*[range(1, s.m + 1) for s in subsystems])
