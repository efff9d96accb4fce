"""Command-line front end.

Exit status: 0 success, 2 configuration or usage error, 3 runtime failure.
Output files are written to a temporary name and renamed, so a failed run
leaves nothing behind; existing files are only replaced with ``--force``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import chain as ch
from . import model as md
from . import noise as nz
from . import scheme as sc
from .config import load_config
from .convergence import (AblationVacuous, ConfigError, ExperimentConfig, ablation_study,
                          draw_sample, run_diagnostics, run_experiment)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("tamedms")


class UsageError(Exception):
    pass


def _fmt(v) -> str:
    # shortest round-trip repr
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _provenance(cfg: ExperimentConfig) -> str:
    return f"# config_digest={cfg.digest()} seed={cfg.seed}\n"


def _csv(cfg, header, rows) -> str:
    lines = [_provenance(cfg).rstrip("\n"), ",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _prepare_out(out: Path, names, force: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    clash = [n for n in names if (out / n).exists()]
    if clash and not force:
        raise UsageError(f"refusing to overwrite {', '.join(clash)} in {out} (use --force)")


def _commit(out: Path, files: dict) -> None:
    """Write every file to a temp name first, then rename them all."""
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.")
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
        for tmp, dest in staged:
            os.replace(tmp, dest)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _json(obj) -> str:
    def default(o):
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.bool_,)):
            return bool(o)
        raise TypeError(type(o))
    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.samples is not None:
        overrides["samples"] = args.samples
    if args.workers is not None:
        overrides["workers"] = args.workers
    cfg = replace(cfg, **overrides) if overrides else cfg
    return cfg


def cmd_converge(args) -> int:
    cfg = _load(args)
    cfg.validate()
    out = Path(args.out)
    _prepare_out(out, ["errors.csv", "report.json"], args.force)
    rep = run_experiment(cfg)
    _commit(out, {
        "errors.csv": _csv(cfg, ["scheme", "n", "error", "stderr"], rep.csv_rows()),
        "report.json": _json(rep.as_dict()),
    })
    print(rep.table())
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    scheme = args.scheme or (cfg.schemes[0] if cfg.schemes else "tamed_milstein")
    cfg = replace(cfg, schemes=[scheme])
    spec = cfg.spec()
    gen = cfg.generator_matrix()
    n = cfg.n if cfg.n is not None else max(cfg.n_list)
    ch.check_step(gen, 1.0 / n)
    if scheme == "commutative_milstein" and not spec.commutative:
        raise sc.NotCommutative(f"model {spec.name!r} is not commutative")
    sc.step_function(scheme) if scheme != "reference" else None
    out = Path(args.out)
    _prepare_out(out, ["trajectory.csv"], args.force)
    n_fine = int(n * cfg.T)
    if not (spec.commutative or spec.m == 1):
        n_fine *= cfg.refinement_ratio
    path, grid = draw_sample(spec, gen, cfg, 0, n_fine)
    if scheme == "reference":
        traj = sc.reference_solution(spec, n, cfg.T, path, grid)
    else:
        traj = sc.simulate(spec, scheme, n, cfg.T, path, grid,
                           refinement_ratio=cfg.refinement_ratio)
    header = ["t"] + [f"x{i + 1}" for i in range(spec.d)] + ["state"]
    rows = [[t, *x, s] for t, x, s in zip(traj.times, traj.values, traj.chain_states)]
    text = _csv(cfg, header, rows)
    if traj.blew_up is not None:
        msg = f"blow-up: {scheme} produced a non-finite state at index {traj.blew_up}"
        text = f"# warning: {msg}\n" + text
        print(f"warning: {msg}", file=sys.stderr)
    _commit(out, {"trajectory.csv": text})
    print(f"wrote {out / 'trajectory.csv'} ({len(rows)} rows, scheme {scheme}, n={n})")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _load(args)
    cfg.validate()
    out = Path(args.out)
    _prepare_out(out, ["diagnostics.json"], args.force)
    diag = run_diagnostics(cfg)
    _commit(out, {"diagnostics.json": _json({"config_digest": cfg.digest(), "seed": cfg.seed,
                                             "config": cfg.echo(), **diag})})
    for n, stat in diag["jump_statistics"].items():
        tails = " ".join(f"P(N>={k})={v['p']:.3e}<= {v['bound']:.3e}"
                         for k, v in stat["tail"].items())
        print(f"h=1/{n}: {tails} E[N^2]={stat['second_moment']['value']:.3e}")
    print(f"slope of E[N] vs h: {diag['mean_jumps_slope']}")
    trend = diag["moment_trend"]
    print(f"E sup|X|^{cfg.p:g}: " + ", ".join(f"{k}:{v:.4f}" for k, v in diag["moments"].items())
          + f"  (Kendall tau {trend['tau']:.2f}{', TREND' if trend['trend'] else ''})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load(args)
    cfg.validate()
    out = Path(args.out)
    _prepare_out(out, ["ablation.json"], args.force)
    res = ablation_study(cfg)
    rep = res.pop("report")
    _commit(out, {"ablation.json": _json({**res, "report": rep.as_dict()})})
    print(rep.table())
    print(f"order gap (full - ablated): {res['order_gap']}")
    return EXIT_OK


def validation_report(spec: md.ModelSpec, n_list, seed: int = 0, box: float = 5.0,
                      count: int = 10_000) -> dict:
    rng = np.random.default_rng(seed)
    small = md.check_assumptions(spec, box, count, n_list, rng)
    large = md.check_assumptions(spec, 2 * box, count, n_list, rng)
    diverging = small.flag_divergent(large)
    comm = md.check_commutativity(spec, box, 1000, rng)
    pts = rng.uniform(-2, 2, size=(8, spec.d))
    jac = max(md.finite_difference_jacobian_check(spec, x, i, 1e-5)
              for x in pts for i in range(spec.states))
    return {
        "model": spec.name,
        "assumptions": {k: {"small_box": small.ratios[k], "large_box": large.ratios[k],
                            "status": "warn" if k in diverging else "pass"}
                        for k in small.ratios},
        "commutativity_residual": comm,
        "declared_commutative": spec.commutative,
        "commutativity_status": "warn" if spec.commutative and comm > 1e-10 else "pass",
        "jacobian_relative_error": jac,
        "jacobian_status": "warn" if jac > 1e-6 else "pass",
    }


def cmd_validate(args) -> int:
    cfg = _load(args)
    spec = cfg.spec()
    rep = validation_report(spec, cfg.n_list, cfg.seed)
    for key, v in rep["assumptions"].items():
        print(f"{key:<14} {v['status']:<5} small box {v['small_box']:.4g}  "
              f"large box {v['large_box']:.4g}")
    print(f"commutativity residual {rep['commutativity_residual']:.4g} "
          f"({'declared commutative' if spec.commutative else 'not declared commutative'}) "
          f"{rep['commutativity_status']}")
    print(f"jacobian check        {rep['jacobian_relative_error']:.3g} {rep['jacobian_status']}")
    # scheme/model consistency is a configuration error
    cfg.validate()
    if args.out:
        out = Path(args.out)
        _prepare_out(out, ["validation.json"], args.force)
        _commit(out, {"validation.json": _json({"config_digest": cfg.digest(),
                                                "seed": cfg.seed, **rep})})
    return EXIT_OK


COMMANDS = {
    "converge": cmd_converge,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "ablate": cmd_ablate,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tamedms",
                                description="Tamed Milstein scheme for regime-switching SDEs")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="experiment file (key = value)")
        s.add_argument("--out", default=None if name == "validate" else "out",
                       help="output directory")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--samples", type=int, default=None)
        s.add_argument("--workers", type=int, default=None, help="threads for Monte Carlo chunks")
        s.add_argument("--force", action="store_true", help="overwrite existing outputs")
        s.add_argument("-v", "--verbose", action="count", default=0)
        if name == "simulate":
            s.add_argument("--scheme", choices=[x for x in sc.SCHEMES], default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError, md.UnknownModel, sc.NotCommutative, sc.UnknownScheme,
            ch.ChainError, ch.StepTooLarge, nz.GridMismatch, AblationVacuous) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
