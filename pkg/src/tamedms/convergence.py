"""Monte Carlo strong-error harness.

For each sample one chain path and one fine Brownian grid are drawn, the
reference is computed once, and every (scheme, n) pair runs on that same
randomness. Squared deviations are kept per sample and reduced in sample
order after all chunks finish, so the numbers do not depend on how the
samples were split across workers.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import chain as ch
from . import noise as nz
from . import rng as rs
from . import scheme as sc
from .model import ModelSpec, get_model

DIAGNOSTICS_ROLE = 3


class ConfigError(ValueError):
    pass


class DegenerateErrors(ValueError):
    pass


class AblationVacuous(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: str
    schemes: list = field(default_factory=lambda: ["tamed_milstein"])
    n_list: list = field(default_factory=lambda: [2 ** k for k in range(4, 10)])
    n_ref: int = 2 ** 13
    T: float = 1.0
    samples: int = 1000
    seed: int = 0
    p: float = 4.0
    refinement_ratio: int = 16
    x0: list | None = None
    generator: list | None = None
    reference: str = "fine"          # "fine" or "exact" (models with a closed form)
    n: int | None = None             # single-trajectory step count for `simulate`
    workers: int = 1
    chunk_size: int = 100

    def spec(self) -> ModelSpec:
        spec = get_model(self.model)
        return spec if self.x0 is None else spec.with_x0(self.x0)

    def generator_matrix(self) -> ch.GeneratorMatrix:
        rates = self.generator if self.generator is not None else self.spec().generator
        return ch.validate_generator(rates)

    def validate(self) -> None:
        spec = self.spec()
        if self.samples < 2:
            raise ConfigError("samples must be >= 2")
        if len(self.n_list) == 0:
            raise ConfigError("n_list is empty")
        for scheme in self.schemes:
            sc.step_function(scheme) if scheme != "reference" else None
            if scheme == "commutative_milstein" and not spec.commutative:
                raise sc.NotCommutative(
                    f"scheme commutative_milstein requested but model {spec.name!r} has "
                    "non-commuting diffusion columns")
        if self.reference not in ("fine", "exact"):
            raise ConfigError(f"reference must be 'fine' or 'exact', got {self.reference!r}")
        if self.reference == "exact" and spec.name != "M2":
            raise ConfigError("an exact reference is only available for model M2")
        if self.n_ref < 8 * max(self.n_list):
            raise ConfigError(f"n_ref={self.n_ref} must be at least 8 * max(n_list)")
        for n in self.n_list:
            if self.n_ref % n:
                raise ConfigError(f"n={n} does not divide n_ref={self.n_ref}")
            if (n * self.T) != int(n * self.T):
                raise ConfigError(f"n*T = {n * self.T} is not an integer")
        gen = self.generator_matrix()
        if gen.states != spec.states:
            raise ConfigError(f"generator has {gen.states} states, model expects {spec.states}")
        for n in self.n_list:
            ch.check_step(gen, 1.0 / n)
        if self.refinement_ratio < 1:
            raise ConfigError("refinement_ratio must be >= 1")

    def echo(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        payload = {k: v for k, v in self.echo().items() if k not in ("workers", "chunk_size")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# order fitting


@dataclass
class OrderFit:
    order: float
    stderr: float
    intercept: float
    residuals: list


def fit_order(errors) -> OrderFit:
    """Least squares of ``log2 e`` on ``log2 n``; the order is minus the slope."""
    pts = [(float(n), float(e)) for n, e in errors]
    if len(pts) < 3:
        raise ValueError("need at least three (n, error) points")
    if any(not e > 0 for _, e in pts):
        raise DegenerateErrors("errors must be strictly positive to fit an order")
    ln = np.log2([n for n, _ in pts])
    le = np.log2([e for _, e in pts])
    res = stats.linregress(ln, le)
    resid = le - (res.intercept + res.slope * ln)
    return OrderFit(order=-float(res.slope), stderr=float(res.stderr),
                    intercept=float(res.intercept), residuals=[float(r) for r in resid])


# ---------------------------------------------------------------------------
# sampling


def draw_sample(spec: ModelSpec, gen: ch.GeneratorMatrix, cfg: ExperimentConfig, s: int,
                n_fine: int):
    """Chain path and primed Brownian grid for sample ``s``."""
    chain = ch.sample_chain_path(gen, 0, cfg.T, rs.stream(cfg.seed, s, rs.CHAIN))
    grid = nz.generate_brownian(spec.m, cfg.T, n_fine, rs.stream(cfg.seed, s, rs.BROWNIAN))
    sc.prime_bridge(grid, chain, rs.stream(cfg.seed, s, rs.BRIDGE))
    return chain, grid


def fine_resolution(spec: ModelSpec, cfg: ExperimentConfig) -> int:
    steps = int(cfg.n_ref * cfg.T)
    if spec.commutative or spec.m == 1:
        return steps
    # non-commuting noise: the reference itself needs sub-grid Levy areas
    return steps * cfg.refinement_ratio


def exact_m2(spec: ModelSpec, chain: ch.ChainPath, times: np.ndarray) -> np.ndarray:
    """Closed-form M2 path ``x0 exp(int_0^t a_{alpha_s} ds)`` on ``times``."""
    from .model import M2_RATES
    jt = chain.jump_times
    knots = np.concatenate([[0.0], jt])
    rates = M2_RATES[chain.states]
    cum = np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(knots))])
    seg = np.searchsorted(jt, times, side="right")
    integral = cum[seg] + rates[seg] * (times - knots[seg])
    return spec.initial_value[None, :] * np.exp(integral)[:, None]


def _run_chunk(cfg: ExperimentConfig, spec, gen, lo: int, hi: int):
    n_fine = fine_resolution(spec, cfg)
    samples = [draw_sample(spec, gen, cfg, s, n_fine) for s in range(lo, hi)]
    chains = [c for c, _ in samples]
    grids = [g for _, g in samples]
    if cfg.reference == "exact":
        t = sc.grid_times(cfg.n_ref, cfg.T)
        ref_values = np.stack([exact_m2(spec, c, t) for c in chains])
        ref_blow = np.full(len(chains), -1)
    else:
        ref = sc.reference_batch(spec, cfg.n_ref, cfg.T, chains, grids)
        ref_values, ref_blow = ref.values, ref.blow_index
    out = {"ref_blow": ref_blow, "runs": {},
           "jumps": np.array([len(c.jump_times) for c in chains])}
    for scheme in cfg.schemes:
        for n in cfg.n_list:
            tr = sc.simulate_batch(spec, scheme, n, cfg.T, chains, grids,
                                   refinement_ratio=cfg.refinement_ratio)
            stride = cfg.n_ref // n
            dev = tr.values - ref_values[:, ::stride]
            sup = np.max(np.sqrt(np.sum(tr.values ** 2, axis=-1)), axis=1)
            out["runs"][(scheme, n)] = {
                "sq": np.sum(dev * dev, axis=-1),        # (B, K + 1)
                "blow": tr.blow_index,
                "sup": sup,
            }
    return out


def _map_chunks(cfg: ExperimentConfig, fn):
    bounds = [(lo, min(lo + cfg.chunk_size, cfg.samples))
              for lo in range(0, cfg.samples, cfg.chunk_size)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(lambda b: fn(*b), bounds))
    return [fn(lo, hi) for lo, hi in bounds]


def _ordered_sum(a: np.ndarray) -> np.ndarray:
    """Pairwise sum over the sample axis (axis 0), in sample order."""
    return np.ascontiguousarray(np.asarray(a, dtype=float).T).sum(axis=-1)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ErrorEstimate:
    scheme: str
    n: int
    error: float
    stderr: float
    worst_time: float
    blow_ups: int
    used_samples: int
    moment: float               # E sup_k |X^n_{t_k}|^p over the usable samples


@dataclass
class ConvergenceReport:
    config: dict
    config_digest: str
    estimates: list
    orders: dict                # scheme -> OrderFit | "exact" | None
    diagnostics: dict

    def estimate(self, scheme: str, n: int) -> ErrorEstimate:
        for e in self.estimates:
            if e.scheme == scheme and e.n == n:
                return e
        raise KeyError((scheme, n))

    def errors(self, scheme: str) -> list:
        return [(e.n, e.error) for e in self.estimates if e.scheme == scheme]

    def order(self, scheme: str):
        return self.orders[scheme]

    def csv_rows(self) -> list:
        return [(e.scheme, e.n, e.error, e.stderr) for e in self.estimates]

    def as_dict(self) -> dict:
        orders = {}
        for k, v in self.orders.items():
            orders[k] = asdict(v) if isinstance(v, OrderFit) else v
        return {"config": self.config, "config_digest": self.config_digest,
                "seed": self.config["seed"],
                "estimates": [asdict(e) for e in self.estimates],
                "orders": orders, "diagnostics": self.diagnostics}

    def table(self) -> str:
        lines = [f"{'scheme':<22}{'n':>6}{'error':>14}{'stderr':>12}{'blow-ups':>10}"]
        for e in self.estimates:
            lines.append(f"{e.scheme:<22}{e.n:>6}{e.error:>14.6e}{e.stderr:>12.3e}{e.blow_ups:>10}")
        lines.append("")
        for scheme, fit in self.orders.items():
            if isinstance(fit, OrderFit):
                lines.append(f"{scheme:<22} order {fit.order:.3f} +/- {fit.stderr:.3f}")
            else:
                lines.append(f"{scheme:<22} order {fit}")
        return "\n".join(lines)


def _fit_or_flag(points):
    errs = [e for _, e in points]
    if all(e == 0 for e in errs):
        return "exact"
    try:
        return fit_order(points)
    except (DegenerateErrors, ValueError):
        return None


def run_experiment(cfg: ExperimentConfig) -> ConvergenceReport:
    cfg.validate()
    spec = cfg.spec()
    gen = cfg.generator_matrix()
    chunks = _map_chunks(cfg, lambda lo, hi: _run_chunk(cfg, spec, gen, lo, hi))
    ref_ok = np.concatenate([c["ref_blow"] for c in chunks]) < 0
    jumps = np.concatenate([c["jumps"] for c in chunks])
    estimates = []
    for scheme in cfg.schemes:
        for n in cfg.n_list:
            sq = np.concatenate([c["runs"][(scheme, n)]["sq"] for c in chunks])
            blow = np.concatenate([c["runs"][(scheme, n)]["blow"] for c in chunks])
            sup = np.concatenate([c["runs"][(scheme, n)]["sup"] for c in chunks])
            keep = ref_ok & (blow < 0)
            used = int(keep.sum())
            if used == 0:
                raise RuntimeError(f"every sample blew up for {scheme} at n={n}")
            sq = sq[keep]
            mse = _ordered_sum(sq) / used
            rms = np.sqrt(mse)
            k = int(np.argmax(rms))
            if rms[k] > 0 and used > 1:
                se_mse = float(np.std(sq[:, k], ddof=1) / math.sqrt(used))
                stderr = se_mse / (2.0 * float(rms[k]))
            else:
                stderr = 0.0
            moment = float(_ordered_sum(sup[keep] ** cfg.p) / used)
            estimates.append(ErrorEstimate(scheme=scheme, n=n, error=float(rms[k]), stderr=stderr,
                                           worst_time=k / n, blow_ups=int((blow >= 0).sum()),
                                           used_samples=used, moment=moment))
    orders = {s: _fit_or_flag([(e.n, e.error) for e in estimates if e.scheme == s])
              for s in cfg.schemes}
    diagnostics = {
        "q": gen.q_max,
        "mean_jumps_per_path": float(jumps.mean()),
        "reference_blow_ups": int((~ref_ok).sum()),
        "moments": {s: {str(e.n): e.moment for e in estimates if e.scheme == s}
                    for s in cfg.schemes},
    }
    return ConvergenceReport(config=cfg.echo(), config_digest=cfg.digest(),
                             estimates=estimates, orders=orders, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# diagnostics


def kendall_trend(values, threshold: float = 0.5) -> dict:
    """Kendall correlation of ``values`` against their index; ``|tau| >= threshold`` is a trend."""
    values = np.asarray(values, dtype=float)
    if np.all(values == values[0]):
        return {"tau": 0.0, "trend": False}
    tau = float(stats.kendalltau(np.arange(len(values)), values).statistic)
    return {"tau": tau, "trend": abs(tau) >= threshold}


def run_diagnostics(cfg: ExperimentConfig, jump_samples: int = 100_000,
                    moment_scheme: str = "tamed_milstein") -> dict:
    """Single-step jump statistics per ``h = 1/n`` and the moment trend across n."""
    cfg.validate()
    spec = cfg.spec()
    gen = cfg.generator_matrix()
    jumps = {}
    for n in cfg.n_list:
        stat = ch.jump_count_statistics(gen, 1.0 / n, jump_samples,
                                        rs.stream(cfg.seed, n, DIAGNOSTICS_ROLE))
        jumps[str(n)] = stat.as_dict() | {
            "tail_bound_holds": {str(k): stat.tail_bound_holds(k) for k in stat.tail},
            "second_moment_ok": stat.second_moment[0] <= 6.0,
        }
    means = [(1.0 / n, jumps[str(n)]["mean"]["value"]) for n in cfg.n_list]
    if all(m > 0 for _, m in means) and len(means) >= 2:
        slope = float(stats.linregress(np.log2([h for h, _ in means]),
                                       np.log2([m for _, m in means])).slope)
    else:
        slope = None
    mcfg = ExperimentConfig(**{**cfg.echo(), "schemes": [moment_scheme]})
    moments = moment_profile(mcfg)
    trend = kendall_trend([moments[n] for n in cfg.n_list])
    return {
        "q": gen.q_max,
        "jump_statistics": jumps,
        "mean_jumps_slope": slope,
        "mean_over_h_bounded_by_2q": all(m / h <= 2 * gen.q_max + 1e-12 for h, m in means)
        if gen.q_max > 0 else True,
        "moment_order": cfg.p,
        "moments": {str(n): moments[n] for n in cfg.n_list},
        "moment_trend": trend,
    }


def moment_profile(cfg: ExperimentConfig, scheme: str | None = None) -> dict:
    """``E sup_k |X^n_{t_k}|^p`` per n on coupled samples (no reference needed)."""
    spec = cfg.spec()
    gen = cfg.generator_matrix()
    scheme = scheme or cfg.schemes[0]
    n_fine = int(max(cfg.n_list) * cfg.T)
    if not (spec.commutative or spec.m == 1):
        n_fine *= cfg.refinement_ratio

    def chunk(lo, hi):
        samples = [draw_sample(spec, gen, cfg, s, n_fine) for s in range(lo, hi)]
        chains = [c for c, _ in samples]
        grids = [g for _, g in samples]
        out = {}
        for n in cfg.n_list:
            tr = sc.simulate_batch(spec, scheme, n, cfg.T, chains, grids,
                                   refinement_ratio=cfg.refinement_ratio)
            sup = np.max(np.sqrt(np.sum(tr.values ** 2, axis=-1)), axis=1)
            out[n] = (sup, tr.blow_index)
        return out

    chunks = _map_chunks(cfg, chunk)
    result = {}
    for n in cfg.n_list:
        sup = np.concatenate([c[n][0] for c in chunks])
        ok = np.concatenate([c[n][1] for c in chunks]) < 0
        result[n] = float(_ordered_sum(sup[ok] ** cfg.p) / max(int(ok.sum()), 1))
    return result


def ablation_study(cfg: ExperimentConfig) -> dict:
    spec = cfg.spec()
    if not spec.chain_dependent_diffusion():
        raise AblationVacuous(f"diffusion of model {spec.name!r} does not depend on the chain "
                              "state; the correction term is identically zero")
    acfg = ExperimentConfig(**{**cfg.echo(), "schemes": ["tamed_milstein", "ablated_milstein"]})
    rep = run_experiment(acfg)
    full = rep.order("tamed_milstein")
    abl = rep.order("ablated_milstein")
    ratios = {str(n): rep.estimate("ablated_milstein", n).error
              / rep.estimate("tamed_milstein", n).error for n in acfg.n_list}
    return {
        "report": rep,
        "full_order": full.order if isinstance(full, OrderFit) else None,
        "ablated_order": abl.order if isinstance(abl, OrderFit) else None,
        "order_gap": (full.order - abl.order)
        if isinstance(full, OrderFit) and isinstance(abl, OrderFit) else None,
        "error_ratio": ratios,
    }
