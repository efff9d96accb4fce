"""Brownian paths on a fine grid, shared by every coarser scheme grid.

One ``BrownianGrid`` per Monte Carlo sample carries the fine increments. Coarse
increments are telescoped cumulative differences, and values of ``W`` between
fine grid points (chain jump times) come from Brownian-bridge draws that are
cached so every consumer sees the same value.

Gaussians come from numpy's ``Generator.standard_normal`` (ziggurat with fixed
tables), so a seed reproduces a grid bit for bit on any platform.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .chain import TimeOutOfRange


class GridMismatch(ValueError):
    pass


@dataclass
class BrownianGrid:
    T: float
    increments: np.ndarray                  # (n_fine, m)
    cumulative: np.ndarray                  # (n_fine + 1, m)
    bridge_cache: dict = field(default_factory=dict)
    bridge_times: list = field(default_factory=list)     # sorted keys of bridge_cache

    @property
    def m(self) -> int:
        return self.increments.shape[1]

    @property
    def n_fine(self) -> int:
        return self.increments.shape[0]

    @property
    def h_fine(self) -> float:
        return self.T / self.n_fine

    def fine_time(self, j: int) -> float:
        return j * self.T / self.n_fine


def grid_from_increments(increments, T: float = 1.0) -> BrownianGrid:
    inc = np.atleast_2d(np.asarray(increments, dtype=float))
    if inc.shape[0] == 1 and np.ndim(increments) == 1:
        inc = inc.T
    cum = np.zeros((inc.shape[0] + 1, inc.shape[1]))
    np.cumsum(inc, axis=0, out=cum[1:])
    return BrownianGrid(T=float(T), increments=inc, cumulative=cum)


def generate_brownian(m: int, T: float, n_fine: int, rng: np.random.Generator) -> BrownianGrid:
    if n_fine < 1 or not T > 0:
        raise ValueError("need n_fine >= 1 and T > 0")
    inc = rng.standard_normal((n_fine, m)) * np.sqrt(T / n_fine)
    return grid_from_increments(inc, T)


def _steps_per_coarse(grid: BrownianGrid, coarse_n: int) -> int:
    """Fine steps inside one coarse step; ``coarse_n`` counts steps per unit time."""
    total = coarse_n * grid.T
    if total != int(total) or int(total) < 1:
        raise GridMismatch(f"n*T = {total!r} is not a positive integer")
    total = int(total)
    if grid.n_fine % total:
        raise GridMismatch(f"{total} coarse steps do not divide {grid.n_fine} fine steps")
    return grid.n_fine // total


def _block_sums(inc: np.ndarray, r: int) -> np.ndarray:
    # index-order summation, so every consumer gets bitwise the same increments
    blocks = inc.reshape(-1, r, inc.shape[-1])
    acc = blocks[:, 0].copy()
    for j in range(1, r):
        acc += blocks[:, j]
    return acc


def coarse_increment(grid: BrownianGrid, coarse_n: int, k: int) -> np.ndarray:
    """Sum of the fine increments inside coarse step ``k``."""
    r = _steps_per_coarse(grid, coarse_n)
    if not 0 <= k < grid.n_fine // r:
        raise IndexError(f"coarse step {k} out of range")
    return _block_sums(grid.increments[k * r:(k + 1) * r], r)[0]


def coarse_increments(grid: BrownianGrid, coarse_n: int) -> np.ndarray:
    """All coarse increments at once, shape ``(n*T, m)``."""
    return _block_sums(grid.increments, _steps_per_coarse(grid, coarse_n))


def _known_neighbours(grid: BrownianGrid, t: float):
    """Closest times at which W is already fixed, on either side of ``t``."""
    h = grid.h_fine
    j = min(int(t // h), grid.n_fine - 1)
    a, b = grid.fine_time(j), grid.fine_time(j + 1)
    wa, wb = grid.cumulative[j], grid.cumulative[j + 1]
    cached = grid.bridge_times
    if cached:
        i = bisect.bisect_left(cached, t)
        if i > 0 and cached[i - 1] > a:
            a = cached[i - 1]
            wa = grid.bridge_cache[a]
        if i < len(cached) and cached[i] < b:
            b = cached[i]
            wb = grid.bridge_cache[b]
    return a, b, wa, wb


def _grid_index(grid: BrownianGrid, t: float):
    j = round(t / grid.h_fine)
    if 0 <= j <= grid.n_fine and grid.fine_time(j) == t:
        return j
    return None


def bridge_sample(wa, wb, a: float, b: float, t: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``W_t`` given ``W_a = wa`` and ``W_b = wb`` for ``a < t < b``."""
    lam = (t - a) / (b - a)
    mean = wa + lam * (wb - wa)
    var = (t - a) * (b - t) / (b - a)
    return mean + np.sqrt(var) * rng.standard_normal(np.shape(wa))


def value_at(grid: BrownianGrid, t: float, rng: np.random.Generator | None = None,
             cache: bool = True) -> np.ndarray:
    """``W_t``; off-grid times are bridged between the nearest known values.

    Conditioning on the nearest already-fixed values on both sides is exact by
    the Markov property, whatever order the queries arrive in.
    """
    if not 0 <= t <= grid.T:
        raise TimeOutOfRange(f"t={t!r} outside [0, {grid.T!r}]")
    j = _grid_index(grid, t)
    if j is not None:
        return grid.cumulative[j]
    if cache and t in grid.bridge_cache:
        return grid.bridge_cache[t]
    if rng is None:
        raise ValueError(f"W at off-grid time {t!r} is not cached and no rng was given")
    a, b, wa, wb = _known_neighbours(grid, t)
    w = bridge_sample(wa, wb, a, b, t, rng)
    if cache:
        grid.bridge_cache[t] = w
        bisect.insort(grid.bridge_times, t)
    return w


@dataclass
class IteratedIntegrals:
    k: int
    values: np.ndarray        # values[l1, l] ~ int int dW^{l1} dW^{l}
    tolerance: float = 0.0    # bound on |I[a,b] + I[b,a] - dW_a dW_b| reported by the builder

    def symmetry_residual(self, dW) -> float:
        dW = np.asarray(dW)
        s = self.values + self.values.T - np.outer(dW, dW)
        np.fill_diagonal(s, 0.0)
        return float(np.max(np.abs(s))) if s.size else 0.0


def diagonal_iterated(dW, h) -> np.ndarray:
    """``(dW_l^2 - h) / 2``, the closed-form diagonal."""
    dW = np.asarray(dW)
    return (dW * dW - h) / 2.0


def symmetric_iterated(dW, h) -> np.ndarray:
    """``(dW_{l1} dW_l - [l == l1] h) / 2`` for every pair; broadcasts over leading axes."""
    dW = np.asarray(dW)
    out = dW[..., :, None] * dW[..., None, :] / 2.0
    m = dW.shape[-1]
    idx = np.arange(m)
    out[..., idx, idx] = diagonal_iterated(dW, np.asarray(h)[..., None] if np.ndim(h) else h)
    return out


def iterated_integrals(grid: BrownianGrid, coarse_n: int, k: int, mode: str = "exact_diagonal",
                       refinement_ratio: int | None = None) -> IteratedIntegrals:
    """Iterated Itô integrals over coarse step ``k``.

    ``exact_diagonal`` fills the off-diagonal with ``dW_a dW_b / 2``, which is
    only the symmetric part; use it when the diffusion columns commute.
    ``fine_sum`` forms the left-point Itô sum on a sub-grid of ``refinement_ratio``
    points per coarse step (all fine points when ``None``).
    """
    r = _steps_per_coarse(grid, coarse_n)
    h = grid.T / (grid.n_fine // r)
    start, stop = k * r, (k + 1) * r
    dW = coarse_increment(grid, coarse_n, k)
    if mode == "exact_diagonal":
        return IteratedIntegrals(k=k, values=symmetric_iterated(dW, h))
    if mode != "fine_sum":
        raise ValueError(f"unknown iterated-integral mode {mode!r}")
    stride = _sub_stride(r, refinement_ratio)
    path = grid.cumulative[start:stop + 1:stride] - grid.cumulative[start]
    out = IteratedIntegrals(k=k, values=fine_sum_iterated(path, h, dW))
    out.tolerance = out.symmetry_residual(dW)
    return out


def _sub_stride(r: int, refinement_ratio: int | None) -> int:
    if refinement_ratio is None:
        return 1
    if refinement_ratio < 1 or r % refinement_ratio:
        raise GridMismatch(f"refinement ratio {refinement_ratio} does not divide {r} fine steps")
    return r // refinement_ratio


def fine_sum_iterated(path: np.ndarray, h, dW=None) -> np.ndarray:
    """Left-point sum ``sum_j (W^{l1}_{t_j} - W^{l1}_{start}) dW^l_j`` with exact diagonal.

    ``path`` holds W relative to the step start on the sub-grid, shape
    ``(..., r + 1, m)``; leading axes broadcast. ``dW`` (default: the path's
    endpoint) feeds the closed-form diagonal.
    """
    inc = path[..., 1:, :] - path[..., :-1, :]
    left = path[..., :-1, :]
    values = np.einsum("...ja,...jb->...ab", left, inc)
    if dW is None:
        dW = path[..., -1, :]
    m = dW.shape[-1]
    idx = np.arange(m)
    values[..., idx, idx] = diagonal_iterated(dW, np.asarray(h)[..., None] if np.ndim(h) else h)
    return values
