"""One-step maps and trajectory drivers.

Every step map works on a single state or on a batch: arrays in ``StepInputs``
may carry leading sample axes, ``x`` has shape ``(..., d)``. The batched driver
``simulate_batch`` is what the Monte Carlo harness uses; ``simulate`` is the
single-path wrapper around it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import noise as nz
from .chain import ChainPath, GeneratorMatrix, check_step, state_at
from .model import ModelSpec, tamed_drift

SCHEMES = ("tamed_milstein", "commutative_milstein", "ablated_milstein", "tamed_em", "em",
           "reference")


class MissingBridgeValue(ValueError):
    pass


class NotCommutative(ValueError):
    pass


class UnknownScheme(ValueError):
    pass


@dataclass
class StepInputs:
    x: np.ndarray
    state_now: np.ndarray
    state_next: np.ndarray
    dt: float
    dW: np.ndarray
    iterated: np.ndarray | None = None        # (..., m, m), [l1, l]
    jump_count: np.ndarray | int = 0
    w_after_first_jump: np.ndarray | None = None

    def __post_init__(self):
        if not np.all(np.asarray(self.dt) > 0):
            raise ValueError("dt must be positive")
        if isinstance(self.iterated, nz.IteratedIntegrals):
            self.iterated = self.iterated.values
        if self.w_after_first_jump is None and np.any(np.asarray(self.jump_count) == 1):
            raise MissingBridgeValue("jump_count is 1 but W(t_k+1) - W(tau_1) was not supplied")


def _diffusion_sum(sig, dW):
    return np.einsum("...dm,...m->...d", sig, dW)


def _milstein_sum(spec: ModelSpec, x, s, sig, iterated):
    """``sum_{l, l1} D sigma^(l) sigma^(l1) I[l1, l]``."""
    jac = spec.diffusion_jacobian(x, s)
    return np.einsum("...lij,...jk,...kl->...i", jac, sig, iterated)


def _jump_correction(spec: ModelSpec, inp: StepInputs, sig):
    if inp.w_after_first_jump is None:
        return 0.0
    active = np.asarray(inp.jump_count) == 1
    if not np.any(active):
        return 0.0
    # both coefficient evaluations at the pre-step state
    sig_next = spec.diffusion(inp.x, inp.state_next)
    corr = _diffusion_sum(sig_next - sig, inp.w_after_first_jump)
    return np.where(active[..., None], corr, 0.0)


def _euler_part(spec, n, inp, tamed=True):
    x, s = inp.x, inp.state_now
    b = tamed_drift(spec, n, x, s) if tamed else spec.drift(x, s)
    sig = spec.diffusion(x, s)
    dt = np.asarray(inp.dt)
    dt = dt[..., None] if dt.ndim else dt
    return x + b * dt + _diffusion_sum(sig, inp.dW), sig


def tamed_milstein_step(spec: ModelSpec, n: float, inp: StepInputs) -> np.ndarray:
    if inp.iterated is None:
        raise ValueError("tamed_milstein_step needs iterated integrals")
    out, sig = _euler_part(spec, n, inp)
    out = out + _milstein_sum(spec, inp.x, inp.state_now, sig, inp.iterated)
    return out + _jump_correction(spec, inp, sig)


def ablated_milstein_step(spec: ModelSpec, n: float, inp: StepInputs) -> np.ndarray:
    """Tamed Milstein without the switching correction term."""
    if inp.iterated is None:
        raise ValueError("ablated_milstein_step needs iterated integrals")
    out, sig = _euler_part(spec, n, inp)
    return out + _milstein_sum(spec, inp.x, inp.state_now, sig, inp.iterated)


def commutative_milstein_step(spec: ModelSpec, n: float, inp: StepInputs) -> np.ndarray:
    if not spec.commutative:
        raise NotCommutative(f"model {spec.name!r} is not declared commutative")
    from dataclasses import replace
    sym = nz.symmetric_iterated(inp.dW, inp.dt)
    return tamed_milstein_step(spec, n, replace(inp, iterated=sym))


def tamed_em_step(spec: ModelSpec, n: float, inp: StepInputs) -> np.ndarray:
    return _euler_part(spec, n, inp)[0]


def em_step(spec: ModelSpec, inp: StepInputs) -> np.ndarray:
    return _euler_part(spec, None, inp, tamed=False)[0]


_STEPS = {
    "tamed_milstein": tamed_milstein_step,
    "commutative_milstein": commutative_milstein_step,
    "ablated_milstein": ablated_milstein_step,
    "tamed_em": tamed_em_step,
    "em": lambda spec, n, inp: em_step(spec, inp),
}

_NEEDS_ITERATED = {"tamed_milstein", "ablated_milstein"}


def step_function(scheme_id: str):
    try:
        return _STEPS[scheme_id]
    except KeyError:
        raise UnknownScheme(f"unknown scheme {scheme_id!r}; choose from {SCHEMES}") from None


@dataclass
class Trajectory:
    scheme: str
    n: int
    times: np.ndarray
    values: np.ndarray            # (K + 1, d)
    chain_states: np.ndarray      # (K + 1,)
    blew_up: int | None = None    # first non-finite index


@dataclass
class BatchTrajectory:
    scheme: str
    n: int
    times: np.ndarray
    values: np.ndarray            # (B, K + 1, d)
    chain_states: np.ndarray      # (B, K + 1)
    blow_index: np.ndarray        # (B,), -1 where finite throughout

    def __getitem__(self, b: int) -> Trajectory:
        idx = int(self.blow_index[b])
        return Trajectory(self.scheme, self.n, self.times, self.values[b], self.chain_states[b],
                          None if idx < 0 else idx)


def _steps(n: int, T: float) -> int:
    K = n * T
    if K != int(K) or K < 1:
        raise nz.GridMismatch(f"n*T = {K!r} must be a positive integer")
    return int(K)


def grid_times(n: int, T: float) -> np.ndarray:
    return np.arange(_steps(n, T) + 1) / n


def _chain_on_grid(chain: ChainPath, t: np.ndarray):
    """States at grid points, jump counts per step, first jump per step."""
    jt = chain.jump_times
    states = chain.states[np.searchsorted(jt, t, side="right")]
    lo = np.searchsorted(jt, t[:-1], side="right")
    hi = np.searchsorted(jt, t[1:], side="left")
    counts = np.maximum(hi - lo, 0)
    return states, counts, lo


def _iterated_for_path(grid: nz.BrownianGrid, n: int, dW: np.ndarray, h: float, mode: str,
                       refinement_ratio):
    if mode == "exact_diagonal":
        return nz.symmetric_iterated(dW, h)
    if mode != "fine_sum":
        raise ValueError(f"unknown iterated-integral mode {mode!r}")
    K = dW.shape[0]
    r = grid.n_fine // K
    stride = nz._sub_stride(r, refinement_ratio)
    pts = grid.cumulative[::stride]
    per = r // stride
    idx = np.arange(K)[:, None] * per + np.arange(per + 1)[None, :]
    path = pts[idx] - pts[idx[:, :1]]
    return nz.fine_sum_iterated(path, h, dW)


def default_iterated_mode(spec: ModelSpec) -> str:
    return "exact_diagonal" if spec.commutative or spec.m == 1 else "fine_sum"


def simulate_batch(spec: ModelSpec, scheme_id: str, n: int, T: float, chains, grids,
                   rng=None, *, x0=None, n_tame=None, iterated_mode=None,
                   refinement_ratio=None) -> BatchTrajectory:
    """Run one scheme on a batch of coupled (chain, Brownian) samples.

    ``rng`` is used only for bridge values not already cached on the grids.
    """
    if scheme_id == "reference":
        return reference_batch(spec, n, T, chains, grids, rng, x0=x0)
    step = step_function(scheme_id)
    if scheme_id == "commutative_milstein" and not spec.commutative:
        raise NotCommutative(f"model {spec.name!r} is not declared commutative")
    K = _steps(n, T)
    h = 1.0 / n
    n_tame = n if n_tame is None else n_tame
    mode = iterated_mode or default_iterated_mode(spec)
    B = len(chains)
    t = grid_times(n, T)
    states = np.empty((B, K + 1), dtype=int)
    counts = np.empty((B, K), dtype=int)
    dW = np.empty((B, K, spec.m))
    w_tail = np.zeros((B, K, spec.m))
    iterated = np.empty((B, K, spec.m, spec.m)) if scheme_id in _NEEDS_ITERATED else None
    for b, (chain, grid) in enumerate(zip(chains, grids)):
        states[b], counts[b], first = _chain_on_grid(chain, t)
        dW[b] = nz.coarse_increments(grid, n)
        for k in np.flatnonzero(counts[b] == 1):
            tau = float(chain.jump_times[first[k]])
            w_tail[b, k] = nz.value_at(grid, float(t[k + 1]), rng) - nz.value_at(grid, tau, rng)
        if iterated is not None:
            iterated[b] = _iterated_for_path(grid, n, dW[b], h, mode, refinement_ratio)
    x = np.broadcast_to(np.asarray(spec.initial_value if x0 is None else x0, dtype=float),
                        (B, spec.d)).copy()
    values = np.empty((B, K + 1, spec.d))
    values[:, 0] = x
    blow = np.full(B, -1)
    with np.errstate(all="ignore"):
        for k in range(K):
            inp = StepInputs(x=x, state_now=states[:, k], state_next=states[:, k + 1], dt=h,
                             dW=dW[:, k], iterated=None if iterated is None else iterated[:, k],
                             jump_count=counts[:, k], w_after_first_jump=w_tail[:, k])
            x = _advance(step(spec, n_tame, inp), x, blow, k + 1)
            values[:, k + 1] = x
    return BatchTrajectory(scheme_id, n, t, values, states, blow)


def _advance(x_new, x_old, blow, index):
    frozen = blow >= 0
    bad = ~np.all(np.isfinite(x_new), axis=-1) & ~frozen
    blow[bad] = index
    if np.any(frozen):
        x_new = np.where(frozen[:, None], x_old, x_new)
    return x_new


def reference_batch(spec: ModelSpec, n_ref: int, T: float, chains, grids, rng=None,
                    *, x0=None) -> BatchTrajectory:
    """Tamed Milstein on the uniform grid refined by every chain jump time.

    Steps containing jumps are split at the jumps, so no sub-step has a jump in
    its interior and the switching correction never fires. Values are reported
    on the uniform grid only.
    """
    K = _steps(n_ref, T)
    h = 1.0 / n_ref
    B = len(chains)
    t = grid_times(n_ref, T)
    states = np.empty((B, K + 1), dtype=int)
    counts = np.empty((B, K), dtype=int)
    first = np.empty((B, K), dtype=int)
    dW = np.empty((B, K, spec.m))
    iterated = np.empty((B, K, spec.m, spec.m))
    levy = not spec.commutative and spec.m > 1
    for b, (chain, grid) in enumerate(zip(chains, grids)):
        states[b], counts[b], first[b] = _chain_on_grid(chain, t)
        dW[b] = nz.coarse_increments(grid, n_ref)
        if levy and grid.n_fine > K:
            iterated[b] = _iterated_for_path(grid, n_ref, dW[b], h, "fine_sum", None)
        else:
            iterated[b] = nz.symmetric_iterated(dW[b], h)
    x = np.broadcast_to(np.asarray(spec.initial_value if x0 is None else x0, dtype=float),
                        (B, spec.d)).copy()
    values = np.empty((B, K + 1, spec.d))
    values[:, 0] = x
    blow = np.full(B, -1)
    no_jump = np.zeros(B, dtype=int)
    with np.errstate(all="ignore"):
        for k in range(K):
            inp = StepInputs(x=x, state_now=states[:, k], state_next=states[:, k + 1], dt=h,
                             dW=dW[:, k], iterated=iterated[:, k], jump_count=no_jump)
            x_new = tamed_milstein_step(spec, n_ref, inp)
            for b in np.flatnonzero(counts[:, k]):
                x_new[b] = _split_step(spec, n_ref, x[b], chains[b], grids[b],
                                       float(t[k]), float(t[k + 1]),
                                       chains[b].jump_times[first[b, k]:first[b, k] + counts[b, k]],
                                       rng)
            x = _advance(x_new, x, blow, k + 1)
            values[:, k + 1] = x
    return BatchTrajectory("reference", n_ref, t, values, states, blow)


def _split_step(spec, n_tame, x, chain, grid, a, b, jumps, rng):
    pts = [a, *map(float, jumps), b]
    w_prev = nz.value_at(grid, a, rng)
    for lo, hi in zip(pts[:-1], pts[1:]):
        w_next = nz.value_at(grid, hi, rng)
        dw = w_next - w_prev
        dt = hi - lo
        inp = StepInputs(x=x, state_now=np.asarray(state_at(chain, lo)),
                         state_next=np.asarray(state_at(chain, hi)), dt=dt, dW=dw,
                         iterated=nz.symmetric_iterated(dw, dt), jump_count=0)
        x = tamed_milstein_step(spec, n_tame, inp)
        w_prev = w_next
    return x


def simulate(spec: ModelSpec, scheme_id: str, n: int, T: float, chain: ChainPath,
             noise: nz.BrownianGrid, rng=None, *, generator: GeneratorMatrix | None = None,
             **kwargs) -> Trajectory:
    if generator is not None:
        check_step(generator, 1.0 / n)
    return simulate_batch(spec, scheme_id, n, T, [chain], [noise], rng, **kwargs)[0]


def reference_solution(spec: ModelSpec, n_ref: int, T: float, chain: ChainPath,
                       noise: nz.BrownianGrid, rng=None, *, x0=None) -> Trajectory:
    return reference_batch(spec, n_ref, T, [chain], [noise], rng, x0=x0)[0]


def prime_bridge(grid: nz.BrownianGrid, chain: ChainPath, rng) -> None:
    """Fix W at every jump time, left to right, so all schemes share one path."""
    for tau in chain.jump_times:
        nz.value_at(grid, float(tau), rng)
