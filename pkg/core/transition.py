"""
Transition-system view of a switched subsystem over augmented states (x, p, l),
where l counts the steps spent in the current mode, saturating at k_d - 1.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DwellTimeViolation, InputError
from .system import SwitchedSubsystem, validate_switching_signal

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugState:
    x: np.ndarray
    p: int
    l: int

    def __post_init__(self):
        object.__setattr__(self, 'x', np.asarray(self.x, dtype=float).reshape(-1))
        if self.l < 0:
            raise InputError(f"dwell counter must be >= 0, got {self.l}")


def next_mode_counter(p: int, l: int, u: int, k_d: int) -> Tuple[int, int]:
    """Mode/counter update shared by the concrete and symbolic transition relations"""
    if l < k_d - 1:
        if u != p:
            raise DwellTimeViolation(f"switch to mode {u} requested at counter {l} < {k_d - 1}",
                                     mode=p, counter=l, requested=u)
        return p, l + 1
    if u == p:
        return p, k_d - 1
    return u, 0


def successor_concrete(sub: SwitchedSubsystem, s: AugState, u: int, w=None) -> AugState:
    if not (0 <= s.l <= sub.dwell_time - 1):
        raise InputError(f"counter {s.l} outside 0..{sub.dwell_time - 1}")
    sub.mode(u)
    p_next, l_next = next_mode_counter(s.p, s.l, u, sub.dwell_time)
    return AugState(sub.step(s.p, s.x, w), p_next, l_next)


def _input_at(w_seq, k: int, sub: SwitchedSubsystem) -> np.ndarray:
    if w_seq is None or sub.input_dim == 0:
        return np.zeros(sub.input_dim)
    return np.asarray(w_seq[k], dtype=float).reshape(-1)


def generate_run(sub: SwitchedSubsystem, x0, mode_seq: Sequence[int], w_seq=None,
                 horizon: Optional[int] = None) -> Tuple[List[AugState], List[np.ndarray]]:
    """
    Iterate the augmented transition relation from (x0, mode_seq[0], 0).

    The external input applied at step k is the next mode mode_seq[k+1]
    (or the current mode once the sequence is exhausted). Returns the
    horizon + 1 augmented states and external outputs.
    """
    if horizon is None:
        horizon = len(mode_seq) - 1
    if horizon < 0 or len(mode_seq) == 0:
        raise InputError("mode sequence must be nonempty and horizon nonnegative")
    if w_seq is not None and sub.input_dim and len(w_seq) < horizon:
        raise InputError(f"internal input sequence has {len(w_seq)} entries, horizon is {horizon}")

    state = AugState(x0, mode_seq[0], 0)
    states = [state]
    outputs = [sub.outputs(state.x)[0]]
    for k in range(horizon):
        u = mode_seq[k + 1] if k + 1 < len(mode_seq) else state.p
        state = successor_concrete(sub, state, u, _input_at(w_seq, k, sub))
        states.append(state)
        outputs.append(sub.outputs(state.x)[0])
    return states, outputs


def direct_output_run(sub: SwitchedSubsystem, x0, mode_seq: Sequence[int], w_seq=None,
                      horizon: Optional[int] = None) -> List[np.ndarray]:
    """Output run of the raw difference equation, without counters"""
    if horizon is None:
        horizon = len(mode_seq) - 1
    x = np.asarray(x0, dtype=float).reshape(-1)
    outputs = [sub.outputs(x)[0]]
    for k in range(horizon):
        p = mode_seq[k] if k < len(mode_seq) else mode_seq[-1]
        x = sub.step(p, x, _input_at(w_seq, k, sub))
        outputs.append(sub.outputs(x)[0])
    return outputs


def check_run_equivalence(sub: SwitchedSubsystem, x0, mode_seq: Sequence[int], w_seq=None,
                          horizon: Optional[int] = None) -> bool:
    """Exact equality of the direct output run and the transition-system output run"""
    if not validate_switching_signal(list(mode_seq), sub.dwell_time):
        raise DwellTimeViolation("switching signal violates the dwell time", dwell_time=sub.dwell_time)
    direct = direct_output_run(sub, x0, mode_seq, w_seq, horizon)
    _, lifted = generate_run(sub, x0, mode_seq, w_seq, horizon)
    same = len(direct) == len(lifted) and all(np.array_equal(a, b) for a, b in zip(direct, lifted))
    if not same:
        logger.error("output runs diverge for %s", sub.name)
    return same
