"""Regime-switching SDE problem definitions.

Coefficient callables are vectorised: ``x`` has shape ``(..., d)`` and the
chain state ``s`` shape ``(...)`` (0-based integers). They return

* ``drift(x, s)``              -> ``(..., d)``
* ``diffusion(x, s)``          -> ``(..., d, m)``, column ``l`` is sigma^(l)
* ``drift_jacobian(x, s)``     -> ``(..., d, d)``
* ``diffusion_jacobian(x, s)`` -> ``(..., m, d, d)``, entry ``l`` is D sigma^(l)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ModelSpec:
    name: str
    d: int
    m: int
    states: int
    drift: Callable
    diffusion: Callable
    drift_jacobian: Callable
    diffusion_jacobian: Callable
    rho: float
    rho1: float | None = None
    commutative: bool = False
    x0: tuple = (1.0,)
    generator: tuple | None = None
    # test hook: replaces the standard taming, signature (x, s, n) -> (..., d)
    taming: Callable | None = None

    def __post_init__(self):
        if min(self.d, self.m, self.states) < 1:
            raise ValueError("d, m and the number of states must be >= 1")
        if self.rho < 0 or (self.rho1 is not None and self.rho1 < 0):
            raise ValueError("rho and rho1 must be non-negative")
        if len(self.x0) != self.d:
            raise ValueError(f"x0 has length {len(self.x0)}, expected d={self.d}")
        if self.rho1 is None:
            object.__setattr__(self, "rho1", 3.0 * self.rho)

    @property
    def initial_value(self) -> np.ndarray:
        return np.asarray(self.x0, dtype=float)

    def with_x0(self, x0) -> "ModelSpec":
        from dataclasses import replace
        return replace(self, x0=tuple(float(v) for v in np.atleast_1d(x0)))

    def chain_dependent_diffusion(self, box: float = 2.0, samples: int = 64, seed: int = 0) -> bool:
        """True if sigma differs between some pair of states at sampled points."""
        if self.states == 1:
            return False
        x = np.random.default_rng(seed).uniform(-box, box, size=(samples, self.d))
        ref = self.diffusion(x, np.zeros(samples, dtype=int))
        return any(np.any(self.diffusion(x, np.full(samples, i)) != ref)
                   for i in range(1, self.states))


def _pow(base, exponent):
    """``base**exponent``; integer exponents use repeated products so the
    result does not depend on the array length numpy vectorises over."""
    if float(exponent).is_integer():
        k = int(exponent)
        out = np.ones_like(base)
        for _ in range(k):
            out = out * base
        return out
    return np.power(base, exponent)


def norm_sq(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.sum(x * x, axis=-1)


def tamed_drift(spec: ModelSpec, n: float, x, s) -> np.ndarray:
    """``b(x, s) / (1 + |x|^(2 rho) / n)``; ``n = inf`` switches taming off."""
    x = np.asarray(x, dtype=float)
    if spec.taming is not None:
        return spec.taming(x, s, n)
    b = spec.drift(x, s)
    denom = 1.0 + _pow(norm_sq(x), spec.rho) / n
    return b / denom[..., None]


# ---------------------------------------------------------------------------
# sampled assumption checks


@dataclass
class AssumptionReport:
    box: float
    sample_count: int
    n_list: list
    ratios: dict = field(default_factory=dict)   # assumption -> worst empirical constant

    def flag_divergent(self, larger: "AssumptionReport", growth: float = 1.5) -> list:
        """Assumptions whose empirical constant keeps growing on a larger box."""
        flagged = []
        for key, small in self.ratios.items():
            big = larger.ratios.get(key)
            if big is None or not np.isfinite(small):
                continue
            if big > growth * max(small, 1e-12):
                flagged.append(key)
        return flagged


def _sample_box(rng, box, count, d):
    return rng.uniform(-box, box, size=(count, d))


def check_assumptions(spec: ModelSpec, sample_box: float, sample_count: int, n_list,
                      rng: np.random.Generator | None = None) -> AssumptionReport:
    """Smallest constants that make each growth/Lipschitz inequality hold on
    random point pairs in ``[-sample_box, sample_box]^d``.

    Keys: ``drift_one_sided``, ``diffusion_lipschitz``, ``drift_jacobian_growth``,
    ``diffusion_jacobian_lipschitz``, ``tamed_monotone``, ``tamed_growth_c1`` and
    ``tamed_growth_c2`` (the two branches of the tamed-drift growth bound),
    ``tamed_growth`` (their minimum) and ``taming_gap`` (``n |b - b^n|`` scaled).
    """
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    rng = rng if rng is not None else np.random.default_rng(0)
    d, m = spec.d, spec.m
    x = _sample_box(rng, sample_box, sample_count, d)
    y = _sample_box(rng, sample_box, sample_count, d)
    # include the box corners, where polynomial growth peaks
    corner = np.full((1, d), float(sample_box))
    x = np.vstack([x, corner, -corner])
    y = np.vstack([y, 0.5 * corner, -0.5 * corner])
    nx = np.sqrt(norm_sq(x))
    ny = np.sqrt(norm_sq(y))
    dxy = x - y
    dist = np.sqrt(norm_sq(dxy))
    ok = dist > 0
    worst = {k: 0.0 for k in ("drift_one_sided", "diffusion_lipschitz", "drift_jacobian_growth", "diffusion_jacobian_lipschitz",
                              "tamed_monotone", "tamed_growth_c1", "tamed_growth_c2", "tamed_growth", "taming_gap")}
    worst["drift_one_sided"] = -np.inf
    for i in range(spec.states):
        s = np.full(len(x), i)
        bx, by = spec.drift(x, s), spec.drift(y, s)
        one_sided = np.sum(dxy * (bx - by), axis=-1)[ok] / dist[ok] ** 2
        worst["drift_one_sided"] = max(worst["drift_one_sided"], float(one_sided.max()))
        dsig = spec.diffusion(x, s) - spec.diffusion(y, s)
        lip = np.sum(dsig * dsig, axis=(-2, -1))[ok] / dist[ok] ** 2
        worst["diffusion_lipschitz"] = max(worst["diffusion_lipschitz"], float(lip.max()))
        ddb = spec.drift_jacobian(x, s) - spec.drift_jacobian(y, s)
        ddb = np.sqrt(np.sum(ddb * ddb, axis=(-2, -1)))
        scale = np.power(1.0 + nx + ny, spec.rho - 1.0) * dist
        worst["drift_jacobian_growth"] = max(worst["drift_jacobian_growth"], float((ddb[ok] / scale[ok]).max()))
        dds = spec.diffusion_jacobian(x, s) - spec.diffusion_jacobian(y, s)
        dds = np.sqrt(np.sum(dds * dds, axis=(-2, -1)))        # (..., m)
        worst["diffusion_jacobian_lipschitz"] = max(worst["diffusion_jacobian_lipschitz"], float((dds[ok] / dist[ok, None]).max()))
        for n in n_list:
            bn = tamed_drift(spec, n, x, s)
            abs_bn = np.sqrt(norm_sq(bn))
            one = 1.0 + nx
            worst["tamed_monotone"] = max(worst["tamed_monotone"],
                                       float((np.sum(x * bn, axis=-1) / one ** 2).max()))
            c1 = abs_bn / (np.sqrt(n) * one)
            c2 = abs_bn / one ** (spec.rho1 + 1.0)
            worst["tamed_growth_c1"] = max(worst["tamed_growth_c1"], float(c1.max()))
            worst["tamed_growth_c2"] = max(worst["tamed_growth_c2"], float(c2.max()))
            worst["tamed_growth"] = max(worst["tamed_growth"], float(np.minimum(c1, c2).max()))
            gap = np.sqrt(norm_sq(bx - bn)) * n / one ** (spec.rho1 + 1.0)
            worst["taming_gap"] = max(worst["taming_gap"], float(gap.max()))
    return AssumptionReport(box=float(sample_box), sample_count=sample_count,
                            n_list=list(n_list), ratios=worst)


def check_commutativity(spec: ModelSpec, sample_box: float = 2.0, sample_count: int = 256,
                        rng: np.random.Generator | None = None) -> float:
    """Largest ``|D sigma^(l) sigma^(l1) - D sigma^(l1) sigma^(l)|`` on sampled points."""
    if spec.m == 1:
        return 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    x = _sample_box(rng, sample_box, sample_count, spec.d)
    worst = 0.0
    for i in range(spec.states):
        s = np.full(sample_count, i)
        sig = spec.diffusion(x, s)                 # (N, d, m)
        jac = spec.diffusion_jacobian(x, s)        # (N, m, d, d)
        # prod[:, l, l1, :] = D sigma^(l) sigma^(l1)
        prod = np.einsum("nlij,njk->nlki", jac, sig)
        diff = prod - prod.transpose(0, 2, 1, 3)
        worst = max(worst, float(np.sqrt(np.sum(diff * diff, axis=-1)).max()))
    return worst


def _central_jacobian(f, x, step):
    d = x.shape[-1]
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        cols.append((f(x + e) - f(x - e)) / (2.0 * step))
    return np.stack(cols, axis=-1)


def _rel_err(approx, exact):
    num = np.linalg.norm(approx - exact)
    den = max(np.linalg.norm(exact), np.linalg.norm(approx))
    return 0.0 if den == 0 else float(num / den)


def finite_difference_jacobian_check(spec: ModelSpec, x, i0: int, step: float = 1e-5) -> float:
    """Worst relative deviation of the supplied Jacobians from central differences."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float).reshape(spec.d)
    s = np.asarray(i0)
    errs = [_rel_err(_central_jacobian(lambda z: spec.drift(z, s), x, step),
                     spec.drift_jacobian(x, s))]
    jac = spec.diffusion_jacobian(x, s)
    for l in range(spec.m):
        fd = _central_jacobian(lambda z: spec.diffusion(z, s)[..., l], x, step)
        errs.append(_rel_err(fd, jac[l]))
    return max(errs)


# ---------------------------------------------------------------------------
# built-in catalog


def _m1() -> ModelSpec:
    lin = np.array([1.0, -2.0])
    s1 = np.array([0.4, 0.3])
    s0 = np.array([0.0, 0.1])

    def drift(x, s):
        return lin[s][..., None] * x - x * x * x

    def drift_jac(x, s):
        return (lin[s][..., None] - 3.0 * x * x)[..., None]

    def diffusion(x, s):
        return (s1[s][..., None] * x + s0[s][..., None])[..., None]

    def diffusion_jac(x, s):
        return np.broadcast_to(s1[s][..., None, None, None], x.shape[:-1] + (1, 1, 1)).copy()

    return ModelSpec("M1", d=1, m=1, states=2, drift=drift, diffusion=diffusion,
                     drift_jacobian=drift_jac, diffusion_jacobian=diffusion_jac,
                     rho=2.0, commutative=True, x0=(1.0,),
                     generator=((-1.0, 1.0), (1.0, -1.0)))


M2_RATES = np.array([1.0, -1.0])


def _m2() -> ModelSpec:
    a = M2_RATES

    def drift(x, s):
        return a[s][..., None] * x

    def drift_jac(x, s):
        return a[s][..., None, None] * np.ones(x.shape + (1,))

    def diffusion(x, s):
        return np.zeros(x.shape + (1,))

    def diffusion_jac(x, s):
        return np.zeros(x.shape[:-1] + (1, 1, 1))

    return ModelSpec("M2", d=1, m=1, states=2, drift=drift, diffusion=diffusion,
                     drift_jacobian=drift_jac, diffusion_jacobian=diffusion_jac,
                     rho=0.0, commutative=True, x0=(1.0,),
                     generator=((-1.0, 1.0), (1.0, -1.0)))


def m2_exact(x0: float, occupation: np.ndarray) -> np.ndarray:
    """Exact M2 solution given time spent in each state, ``x0 exp(sum a_i T_i)``."""
    return x0 * np.exp(np.asarray(occupation) @ M2_RATES)


def _m3() -> ModelSpec:
    lin = np.array([1.0, -1.0])
    gain = np.array([1.0, 0.5])

    def drift(x, s):
        return lin[s][..., None] * x - norm_sq(x)[..., None] * x

    def drift_jac(x, s):
        eye = np.eye(2)
        r2 = norm_sq(x)[..., None, None]
        return (lin[s][..., None, None] - r2) * eye - 2.0 * x[..., :, None] * x[..., None, :]

    def diffusion(x, s):
        g = gain[s][..., None, None]
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = x[..., 1]      # sigma^(1) = (x2, 0)
        out[..., 1, 1] = x[..., 0]      # sigma^(2) = (0, x1)
        return g * out

    def diffusion_jac(x, s):
        g = gain[s][..., None, None, None]
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 1] = 1.0
        out[..., 1, 1, 0] = 1.0
        return g * out

    return ModelSpec("M3", d=2, m=2, states=2, drift=drift, diffusion=diffusion,
                     drift_jacobian=drift_jac, diffusion_jacobian=diffusion_jac,
                     rho=2.0, commutative=False, x0=(1.0, 0.5),
                     generator=((-1.0, 1.0), (1.0, -1.0)))


def _zero() -> ModelSpec:
    def zeros(shape_tail):
        return lambda x, s: np.zeros(x.shape[:-1] + shape_tail)

    return ModelSpec("zero", d=1, m=1, states=2, drift=zeros((1,)), diffusion=zeros((1, 1)),
                     drift_jacobian=zeros((1, 1)), diffusion_jacobian=zeros((1, 1, 1)),
                     rho=0.0, commutative=True, x0=(1.0,),
                     generator=((-1.0, 1.0), (1.0, -1.0)))


CATALOG = {"M1": _m1, "M2": _m2, "M3": _m3, "zero": _zero}


class UnknownModel(KeyError):
    pass


def get_model(name: str) -> ModelSpec:
    try:
        return CATALOG[name]()
    except KeyError:
        raise UnknownModel(f"unknown model {name!r}; built-ins are {sorted(CATALOG)}") from None
