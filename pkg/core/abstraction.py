"""
Finite symbolic models of switched subsystems.

A model stores, per mode, a compressed sparse row table keyed by
(grid state, internal input point) whose rows are the grid points within eta
(sup-norm) of the mode's image. The (mode, counter) part of a successor only
depends on (p, l, u) and is computed on demand by next_mode_counter.
"""

import hashlib
import io
import itertools
import logging
import struct
import zlib
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .errors import FormatError, InputError, ParameterError
from .system import Grid, SwitchedSubsystem, quantize_set, span
from .transition import next_mode_counter

logger = logging.getLogger(__name__)

# Absolute slack on the sup-norm ball test
BALL_SLACK = 1e-12
# Grid states handled per work unit; fixed so results do not depend on the worker count
CHUNK_STATES = 2048

MODEL_MAGIC = b'SYMNETMD'
MODEL_VERSION = 1
_HEADER = struct.Struct('<HddIIIIIIQQ')


class SymbolicModel:
    """Finite transition system over grid x modes x dwell counters"""

    def __init__(self, grid: Grid, eta: float, varpi: float, dwell_time: int, n_modes: int,
                 internal_inputs: np.ndarray, C1: np.ndarray, C2: np.ndarray,
                 offsets: Sequence[np.ndarray], targets: Sequence[np.ndarray], name: str = 'model'):
        self.grid = grid
        self.eta = float(eta)
        self.varpi = float(varpi)
        self.dwell_time = int(dwell_time)
        self.n_modes = int(n_modes)
        self.internal_inputs = np.asarray(internal_inputs, dtype=float)
        if self.internal_inputs.ndim != 2:
            raise InputError("internal input points must be a 2-D array")
        self.C1 = np.atleast_2d(np.asarray(C1, dtype=float))
        self.C2 = np.asarray(C2, dtype=float).reshape(-1, grid.dim)
        self.offsets = [np.asarray(o, dtype=np.int64) for o in offsets]
        self.targets = [np.asarray(t, dtype=np.int64) for t in targets]
        self.name = name
        expected = len(grid) * self.n_inputs + 1
        if len(self.offsets) != self.n_modes or any(len(o) != expected for o in self.offsets):
            raise InputError(f"transition table has wrong shape for {len(grid)} states x {self.n_inputs} inputs")

    @property
    def n_grid(self) -> int:
        return len(self.grid)

    @property
    def n_inputs(self) -> int:
        return self.internal_inputs.shape[0]

    @property
    def n_states(self) -> int:
        return self.n_grid * self.n_modes * self.dwell_time

    def targets_of(self, p: int, x_idx: int, w_idx: int) -> np.ndarray:
        """Grid positions reachable from grid state x_idx under mode p and input w_idx"""
        key = x_idx * self.n_inputs + w_idx
        table = self.offsets[p - 1]
        return self.targets[p - 1][table[key]:table[key + 1]]

    def successors(self, x_idx: int, p: int, l: int, u: int, w_idx: int) -> List[Tuple[int, int, int]]:
        p_next, l_next = next_mode_counter(p, l, u, self.dwell_time)
        return [(int(t), p_next, l_next) for t in self.targets_of(p, x_idx, w_idx)]

    def successor_counts(self, p: int) -> np.ndarray:
        """(n_grid, n_inputs) number of successors per state and internal input"""
        return np.diff(self.offsets[p - 1]).reshape(self.n_grid, self.n_inputs)

    def empty_mask(self) -> np.ndarray:
        """(n_modes, n_grid) True where some internal input has no successor"""
        return np.stack([np.any(self.successor_counts(p) == 0, axis=1) for p in range(1, self.n_modes + 1)])

    def blocked_mask(self) -> np.ndarray:
        """(n_modes, n_grid) True where every internal input has no successor"""
        if self.n_inputs == 0:
            return np.ones((self.n_modes, self.n_grid), dtype=bool)
        return np.stack([np.all(self.successor_counts(p) == 0, axis=1) for p in range(1, self.n_modes + 1)])

    def external_outputs(self, positions=None) -> np.ndarray:
        pts = self.grid.points if positions is None else self.grid.coords(positions)
        return pts @ self.C1.T

    def internal_outputs(self, positions=None) -> np.ndarray:
        pts = self.grid.points if positions is None else self.grid.coords(positions)
        return pts @ self.C2.T

    def select_inputs(self, keep: np.ndarray) -> 'SymbolicModel':
        """Copy of the model restricted to the internal input points where keep is True"""
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (self.n_inputs,):
            raise InputError(f"input mask must have shape ({self.n_inputs},)")
        offsets, targets = [], []
        for p in range(1, self.n_modes + 1):
            counts = self.successor_counts(p)
            starts = self.offsets[p - 1][:-1].reshape(self.n_grid, self.n_inputs)
            kept_counts = counts[:, keep].ravel()
            kept_starts = starts[:, keep].ravel()
            rows = [self.targets[p - 1][s:s + c] for s, c in zip(kept_starts, kept_counts)]
            targets.append(np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64))
            offsets.append(np.concatenate([[0], np.cumsum(kept_counts)]).astype(np.int64))
        return SymbolicModel(self.grid, self.eta, self.varpi, self.dwell_time, self.n_modes,
                             self.internal_inputs[keep], self.C1, self.C2, offsets, targets, self.name)

    def iter_states(self) -> Iterator[Tuple[int, int, int]]:
        return itertools.product(range(self.n_grid), range(1, self.n_modes + 1), range(self.dwell_time))

    def digest(self) -> str:
        return hashlib.sha256(_encode_body(self)).hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, SymbolicModel):
            return NotImplemented
        return (self.grid == other.grid and self.eta == other.eta and self.varpi == other.varpi
                and self.dwell_time == other.dwell_time and self.n_modes == other.n_modes
                and np.array_equal(self.internal_inputs, other.internal_inputs)
                and np.array_equal(self.C1, other.C1) and np.array_equal(self.C2, other.C2)
                and all(np.array_equal(a, b) for a, b in zip(self.offsets, other.offsets))
                and all(np.array_equal(a, b) for a, b in zip(self.targets, other.targets)))

    def __repr__(self) -> str:
        return (f"SymbolicModel(name={self.name!r}, grid={self.n_grid}, modes={self.n_modes}, "
                f"k_d={self.dwell_time}, inputs={self.n_inputs})")


def ball_candidates(images: np.ndarray, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """
    Grid positions within eta of each image row.

    Returns (positions, valid) of shape (rows, 4**n); for a fixed row the valid
    positions appear in ascending order.
    """
    eta = grid.eta
    base = np.floor(images / eta).astype(np.int64) - 1
    shifts = np.array(list(itertools.product(range(4), repeat=grid.dim)), dtype=np.int64)
    cand = base[:, None, :] + shifts[None, :, :]
    close = np.all(np.abs(images[:, None, :] - cand * eta) <= eta + BALL_SLACK, axis=2)
    pos = grid.index_of(cand)
    return pos, close & (pos >= 0)


def abstract_successors(sub: SwitchedSubsystem, grid: Grid, x_hat, p: int, w_hat=None) -> np.ndarray:
    """Coordinates of all grid points within eta of f_p(x_hat, w_hat)"""
    image = sub.step(p, x_hat, w_hat).reshape(1, -1)
    pos, valid = ball_candidates(image, grid)
    return grid.coords(pos[0][valid[0]])


def _chunk_successors(sub: SwitchedSubsystem, grid: Grid, W: np.ndarray, p: int,
                      start: int, stop: int) -> Tuple[np.ndarray, np.ndarray]:
    X = grid.coords(slice(start, stop))
    rows = stop - start
    Xr = np.repeat(X, len(W), axis=0)
    Wr = np.tile(W, (rows, 1))
    images = sub.step_batch(p, Xr, Wr)
    pos, valid = ball_candidates(images, grid)
    return valid.sum(axis=1), pos[valid]


def _internal_input_points(sub: SwitchedSubsystem, varpi: float,
                           override: Optional[np.ndarray]) -> np.ndarray:
    if sub.input_dim == 0:
        return np.zeros((1, 0))
    if override is not None:
        pts = np.asarray(override, dtype=float).reshape(-1, sub.input_dim)
        if len(pts) == 0:
            raise ParameterError(f"{sub.name}: internal input override is empty")
        outside = ~sub.internal_input_set.contains(pts, tol=1e-9)
        if np.any(outside):
            raise ParameterError(f"{sub.name}: override point {pts[outside][0].tolist()} lies outside the internal input set")
        return np.unique(pts, axis=0)
    if not (0 < varpi <= span(sub.internal_input_set) * (1 + 1e-12)):
        raise ParameterError(f"{sub.name}: internal input quantization {varpi} must lie in "
                             f"(0, {span(sub.internal_input_set)}] unless an override is given")
    return quantize_set(sub.internal_input_set, varpi).points


def build_symbolic_model(sub: SwitchedSubsystem, eta: float, varpi: float,
                         internal_input_override: Optional[np.ndarray] = None,
                         workers: int = 1) -> SymbolicModel:
    """Enumerate every (grid state, mode, internal input) and its eta-ball successors"""
    grid = quantize_set(sub.state_set, eta)
    W = _internal_input_points(sub, varpi, internal_input_override)
    chunks = [(s, min(s + CHUNK_STATES, len(grid))) for s in range(0, len(grid), CHUNK_STATES)]
    logger.info("building %s: %d grid states, %d modes, %d internal inputs, %d chunks",
                sub.name, len(grid), sub.m, len(W), len(chunks))

    offsets, targets = [], []
    for p in range(1, sub.m + 1):
        if workers > 1 and len(chunks) > 1:
            parts = Parallel(n_jobs=workers)(
                delayed(_chunk_successors)(sub, grid, W, p, a, b) for a, b in chunks)
        else:
            parts = [_chunk_successors(sub, grid, W, p, a, b) for a, b in chunks]
        counts = np.concatenate([c for c, _ in parts])
        offsets.append(np.concatenate([[0], np.cumsum(counts)]).astype(np.int64))
        targets.append(np.concatenate([t for _, t in parts]).astype(np.int64))
        empty = int(np.sum(counts == 0))
        if empty:
            logger.info("%s mode %d: %d (state, input) pairs leave the state set", sub.name, p, empty)

    return SymbolicModel(grid, eta, varpi, sub.dwell_time, sub.m, W, sub.C1, sub.C2,
                         offsets, targets, name=sub.name)


def _encode_body(model: SymbolicModel) -> bytes:
    buf = io.BytesIO()
    buf.write(model.grid.indices.astype('<i8').tobytes())
    buf.write(model.internal_inputs.astype('<f8').tobytes())
    buf.write(model.C1.astype('<f8').tobytes())
    buf.write(model.C2.astype('<f8').tobytes())
    for offs, tgts in zip(model.offsets, model.targets):
        buf.write(np.diff(offs).astype('<u4').tobytes())
        buf.write(np.diff(tgts, prepend=0).astype('<i8').tobytes())
    return buf.getvalue()


def persist(model: SymbolicModel, path) -> None:
    body = _encode_body(model)
    packed = zlib.compress(body, 6)
    lo, hi = model.grid.bounds()
    header = _HEADER.pack(MODEL_VERSION, model.eta, model.varpi, model.dwell_time, model.n_modes,
                          model.grid.dim, model.internal_inputs.shape[1], model.C1.shape[0],
                          model.C2.shape[0], model.n_grid, model.n_inputs)
    with open(path, 'wb') as fh:
        fh.write(MODEL_MAGIC)
        fh.write(header)
        fh.write(np.concatenate([lo, hi]).astype('<i8').tobytes())
        fh.write(hashlib.sha256(body).digest())
        fh.write(struct.pack('<Q', len(packed)))
        fh.write(packed)
    logger.info("persisted %r to %s (%d bytes compressed)", model, path, len(packed))


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, count: int) -> bytes:
        if count < 0 or self.pos + count > len(self.data):
            raise FormatError(f"{self.what} is truncated", offset=self.pos)
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * itemsize), dtype=dtype, count=count)


def load(path, name: str = 'model') -> SymbolicModel:
    try:
        with open(path, 'rb') as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read model file {path}: {exc}") from exc

    head = _Reader(raw, f"model file {path}")
    if head.take(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise FormatError(f"{path} is not a symnet model file")
    (version, eta, varpi, k_d, m, n, wdim, y1, y2, K, W) = _HEADER.unpack(head.take(_HEADER.size))
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model format version {version}", expected=MODEL_VERSION)
    bounds = head.array('<i8', 2 * n)
    digest = head.take(32)
    (length,) = struct.unpack('<Q', head.take(8))
    packed = head.take(length)
    try:
        body = zlib.decompress(packed)
    except zlib.error as exc:
        raise FormatError(f"corrupt model body in {path}: {exc}") from exc
    if hashlib.sha256(body).digest() != digest:
        raise FormatError(f"digest mismatch in {path}")

    rd = _Reader(body, f"model body of {path}")
    indices = rd.array('<i8', K * n).reshape(K, n).astype(np.int64)
    inputs = rd.array('<f8', W * wdim).reshape(W, wdim).astype(float)
    C1 = rd.array('<f8', y1 * n).reshape(y1, n).astype(float)
    C2 = rd.array('<f8', y2 * n).reshape(y2, n).astype(float)
    offsets, targets = [], []
    for _ in range(m):
        counts = rd.array('<u4', K * W).astype(np.int64)
        offs = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        tgts = np.cumsum(rd.array('<i8', int(offs[-1]))).astype(np.int64)
        offsets.append(offs)
        targets.append(tgts)
    if rd.pos != len(body):
        raise FormatError(f"trailing data in model body of {path}")

    grid = Grid(indices, eta)
    lo, hi = grid.bounds()
    if K and not np.array_equal(np.concatenate([lo, hi]), bounds):
        raise FormatError(f"grid bounds in header of {path} disagree with the body")
    return SymbolicModel(grid, eta, varpi, k_d, m, inputs, C1, C2, offsets, targets, name=name)
