"""Exact simulation of the finite-state continuous-time Markov chain that
drives the regime switching.

Paths are càdlàg: at a jump instant the chain already sits in the post-jump
state. Jump counts over an interval use the *open* interval, so a jump that
lands exactly on a grid point is seen by neither neighbouring step as an
interior jump, but ``state_at`` hands it to the later step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng

ROW_SUM_ATOL = 1e-12


class ChainError(ValueError):
    pass


class NegativeOffDiagonal(ChainError):
    def __init__(self, row: int, col: int, value: float):
        self.row, self.col, self.value = row, col, value
        super().__init__(f"negative off-diagonal rate q[{row}][{col}] = {value!r}")


class RowSumNonZero(ChainError):
    def __init__(self, row: int, residual: float):
        self.row, self.residual = row, residual
        super().__init__(f"row {row} of generator sums to {residual!r}, expected 0")


class TimeOutOfRange(ValueError):
    pass


class InvalidInterval(ValueError):
    pass


class StepTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorMatrix:
    rates: np.ndarray
    q_max: float

    @property
    def states(self) -> int:
        return self.rates.shape[0]

    def exit_rate(self, i: int) -> float:
        return -float(self.rates[i, i])

    def stationary(self) -> np.ndarray:
        """Solve ``pi Q = 0``, ``sum(pi) = 1`` (least squares; assumes irreducible)."""
        m0 = self.states
        a = np.vstack([self.rates.T, np.ones(m0)])
        rhs = np.zeros(m0 + 1)
        rhs[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, rhs, rcond=None)
        return pi


def validate_generator(rates) -> GeneratorMatrix:
    q = np.array(rates, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
        raise ChainError(f"generator must be a non-empty square matrix, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ChainError("generator has non-finite entries")
    m0 = q.shape[0]
    for i in range(m0):
        for j in range(m0):
            if i != j and q[i, j] < 0:
                raise NegativeOffDiagonal(i, j, float(q[i, j]))
    for i in range(m0):
        residual = float(q[i].sum())
        if abs(residual) > ROW_SUM_ATOL:
            raise RowSumNonZero(i, residual)
    q.setflags(write=False)
    return GeneratorMatrix(rates=q, q_max=float(np.max(-np.diag(q))))


def check_step(gen: GeneratorMatrix, h: float) -> None:
    """Raise ``StepTooLarge`` unless ``0 < h < 1/(2 q_max)``."""
    if not h > 0:
        raise StepTooLarge(f"step {h!r} must be positive")
    if gen.q_max > 0 and not h < 1.0 / (2.0 * gen.q_max):
        raise StepTooLarge(f"step {h!r} violates h < 1/(2q) = {1.0 / (2.0 * gen.q_max)!r}")


@dataclass(frozen=True)
class ChainPath:
    T: float
    initial_state: int
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    post_jump_states: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def states(self) -> np.ndarray:
        """Visited states, ``states[i]`` is in force on ``[jump_times[i-1], jump_times[i])``."""
        return np.concatenate([[self.initial_state], self.post_jump_states]).astype(int)

    def check(self) -> None:
        jt = self.jump_times
        if len(jt) != len(self.post_jump_states):
            raise ChainError("jump_times and post_jump_states differ in length")
        if len(jt) and (jt[0] <= 0 or jt[-1] >= self.T or np.any(np.diff(jt) <= 0)):
            raise ChainError("jump times must be strictly increasing inside (0, T)")
        if np.any(np.diff(self.states) == 0):
            raise ChainError("consecutive states must differ")


def sample_chain_path(gen: GeneratorMatrix, initial_state: int, T: float,
                      rng: np.random.Generator) -> ChainPath:
    if not T > 0:
        raise ValueError("T must be positive")
    if not 0 <= initial_state < gen.states:
        raise ValueError(f"initial state {initial_state} outside 0..{gen.states - 1}")
    q = gen.rates
    t = 0.0
    state = int(initial_state)
    times, states = [], []
    while True:
        rate = -q[state, state]
        if rate <= 0:
            break
        t += _rng.exponential(rng, rate)
        if t >= T:
            break
        probs = np.clip(q[state], 0.0, None)
        probs[state] = 0.0
        # inverse-CDF choice, one uniform per jump
        cdf = np.cumsum(probs)
        cdf /= cdf[-1]
        state = int(np.searchsorted(cdf, rng.random(), side="right"))
        times.append(t)
        states.append(state)
    return ChainPath(T=float(T), initial_state=int(initial_state),
                     jump_times=np.asarray(times, dtype=float),
                     post_jump_states=np.asarray(states, dtype=int))


def state_at(path: ChainPath, t: float) -> int:
    if not 0 <= t <= path.T:
        raise TimeOutOfRange(f"t={t!r} outside [0, {path.T!r}]")
    idx = int(np.searchsorted(path.jump_times, t, side="right"))
    return int(path.initial_state if idx == 0 else path.post_jump_states[idx - 1])


def interval_jump_info(path: ChainPath, s: float, t: float) -> tuple[int, float | None]:
    """Number of jumps in the open interval ``(s, t)`` and the first of them."""
    if not 0 <= s < t <= path.T:
        raise InvalidInterval(f"need 0 <= s < t <= T, got s={s!r}, t={t!r}")
    lo = int(np.searchsorted(path.jump_times, s, side="right"))
    hi = int(np.searchsorted(path.jump_times, t, side="left"))
    count = max(hi - lo, 0)
    return count, (float(path.jump_times[lo]) if count else None)


def sample_step_jump_counts(gen: GeneratorMatrix, h: float, sample_count: int,
                            rng: np.random.Generator, initial_states=None) -> np.ndarray:
    """Jump counts of independent chains over ``(0, h)``, vectorised over samples.

    Starting states default to uniform over the state space.
    """
    q = gen.rates
    m0 = gen.states
    if initial_states is None:
        state = rng.integers(0, m0, size=sample_count)
    else:
        state = np.broadcast_to(np.asarray(initial_states, dtype=int), (sample_count,)).copy()
    counts = np.zeros(sample_count, dtype=np.int64)
    elapsed = np.zeros(sample_count)
    active = np.ones(sample_count, dtype=bool)
    jump_probs = np.clip(q, 0.0, None)
    np.fill_diagonal(jump_probs, 0.0)
    exit_rates = -np.diag(q)
    with np.errstate(invalid="ignore", divide="ignore"):
        cdf = np.cumsum(jump_probs, axis=1)
        cdf /= cdf[:, -1:]
    while active.any():
        idx = np.flatnonzero(active)
        elapsed[idx] += _rng.exponential(rng, exit_rates[state[idx]], size=idx.size)
        jumped = elapsed[idx] < h
        done = idx[~jumped]
        active[done] = False
        go = idx[jumped]
        if go.size == 0:
            break
        counts[go] += 1
        u = rng.random(go.size)
        rows = cdf[state[go]]
        nxt = (rows <= u[:, None]).sum(axis=1)
        state[go] = nxt
    return counts


@dataclass
class JumpStatistics:
    h: float
    sample_count: int
    q_max: float
    tail: dict            # k -> (estimate, binomial standard error)
    mean: tuple[float, float]
    second_moment: tuple[float, float]

    def tail_bound_holds(self, k: int, n_se: float = 3.0) -> bool:
        est, se = self.tail[k]
        return est <= (self.q_max * self.h) ** k + n_se * se

    def as_dict(self) -> dict:
        return {
            "h": self.h,
            "samples": self.sample_count,
            "q": self.q_max,
            "tail": {str(k): {"p": p, "se": se, "bound": (self.q_max * self.h) ** k}
                     for k, (p, se) in self.tail.items()},
            "mean": {"value": self.mean[0], "se": self.mean[1]},
            "second_moment": {"value": self.second_moment[0], "se": self.second_moment[1],
                              "bound": 6.0},
        }


def jump_count_statistics(gen: GeneratorMatrix, h: float, sample_count: int,
                          rng: np.random.Generator, ks=(1, 2, 3),
                          initial_states=None) -> JumpStatistics:
    check_step(gen, h)
    counts = sample_step_jump_counts(gen, h, sample_count, rng, initial_states)
    m = float(sample_count)
    tail = {}
    for k in ks:
        p = float(np.mean(counts >= k))
        tail[k] = (p, float(np.sqrt(p * (1 - p) / m)))
    n1 = counts.astype(float)
    n2 = n1 * n1
    se = lambda v: float(np.std(v, ddof=1) / np.sqrt(m)) if sample_count > 1 else 0.0
    return JumpStatistics(h=float(h), sample_count=sample_count, q_max=gen.q_max, tail=tail,
                          mean=(float(n1.mean()), se(n1)),
                          second_moment=(float(n2.mean()), se(n2)))
