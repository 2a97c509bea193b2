"""Config-driven command line: check | distance | volume | phi | gamma |
solve | verify.

Every output embeds the config hash and the seed; identical configs
produce byte-identical files.  Exit codes: 0 = all checks pass, 2 =
check failures, 1 = execution errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys as _sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, SubellipticError
from .families import make_system
from .fields import enumerate_brackets, hormander_rank_batch
from .group import MODEL_KERNELS, heisenberg_group, kolmogorov_group
from .metric import (build_volume_profile, cc_distance_upper,
                     doubling_ratios, volume_formula_bounds)
from .parametrix import (gamma_at, interp_column, j_prime_dense, make_grid,
                         parametrix_P, parametrix_pipeline, patch_box,
                         weak_identity_check)
from .bumps import TestBump
from .solver import convolution_solve, residual_map
from .theta import make_theta, theta, theta_norm

GROUPS = {
    "heisenberg": heisenberg_group,
    "kolmogorov": kolmogorov_group,
}

FLOAT_FMT = "%.12g"


# --- plumbing ---------------------------------------------------------------

def _build_system(cfg: RunConfig):
    return make_system(cfg.family, **cfg.family_params)

def _build_group(cfg: RunConfig):
    if cfg.kernel_name is None:
        raise ConfigError(
            f"family {cfg.family!r} has no model kernel; gamma/solve "
            "commands need one of: " + ", ".join(sorted(MODEL_KERNELS)))
    return GROUPS[cfg.kernel_name](), MODEL_KERNELS[cfg.kernel_name]()


def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path: Path, cfg: RunConfig, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.hash} seed={cfg.seed}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([FLOAT_FMT % v if isinstance(v, float) else v
                             for v in row])
    return path


def _write_json(path: Path, cfg: RunConfig, payload: dict):
    payload = {"config_hash": cfg.hash, "seed": cfg.seed, **payload}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    return path


def _cache_dir(cfg: RunConfig) -> Path:
    path = _out_dir(cfg) / "cache" / cfg.hash
    path.mkdir(parents=True, exist_ok=True)
    return path


# --- commands ---------------------------------------------------------------

def cmd_check(cfg: RunConfig) -> int:
    sys_ = _build_system(cfg)
    rng = np.random.default_rng(cfg.seed)
    box = sys_.domain_box
    pts = rng.uniform(box[:, 0], box[:, 1], size=(1000, sys_.dim))
    t0 = time.time()
    ranks = hormander_rank_batch(sys_, pts)
    elapsed = time.time() - t0
    brackets = enumerate_brackets(sys_)
    full = bool(np.all(ranks == sys_.dim))
    report = {
        "family": cfg.family,
        "n_points": int(pts.shape[0]),
        "dim": sys_.dim,
        "min_rank": int(np.min(ranks)),
        "full_rank_everywhere": full,
        "elapsed_seconds": elapsed,
        "bracket_table": [{"entries": [int(i) for i in idx.entries],
                           "weight": int(idx.weight),
                           "name": str(idx)}
                          for idx, _ in brackets],
    }
    path = _write_json(_out_dir(cfg) / f"check_{cfg.hash}.json", cfg, report)
    print(f"check: min rank {report['min_rank']}/{sys_.dim} at 1000 points "
          f"({elapsed:.2f}s) -> {path}")
    return 0 if full else 2


def _read_pairs(path, dim):
    pairs = []
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        for i, row in enumerate(reader):
            if i == 0 and any(not _is_float(c) for c in row):
                continue                          # header line
            if len(row) != 2 * dim:
                raise ConfigError(
                    f"{path}: row {i} has {len(row)} columns, "
                    f"expected {2 * dim}")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ConfigError(f"{path}: row {i}: {exc}") from exc
            pairs.append(vals)
    if not pairs:
        raise ConfigError(f"{path}: no data rows")
    arr = np.asarray(pairs)
    return arr[:, :dim], arr[:, dim:]


def _is_float(tok):
    try:
        float(tok)
        return True
    except ValueError:
        return False


def cmd_distance(cfg: RunConfig, pairs_path) -> int:
    sys_ = _build_system(cfg)
    group, _ = _build_group(cfg)
    x, y = _read_pairs(pairs_path, sys_.dim)
    t = make_theta(sys_, group, ode_step=cfg.ode_step,
                   newton_tol=cfg.newton_tol)
    d_fast = theta_norm(t, theta(t, x, y))
    d_upper = cc_distance_upper(sys_, x, y, seed=cfg.seed)
    header = ([f"x{i+1}" for i in range(sys_.dim)]
              + [f"y{i+1}" for i in range(sys_.dim)]
              + ["d_fast", "d_upper"])
    rows = [list(map(float, np.concatenate([xi, yi, [df, du]])))
            for xi, yi, df, du in zip(x, y, d_fast, d_upper)]
    path = _write_csv(_out_dir(cfg) / f"distance_{cfg.hash}.csv", cfg,
                      header, rows)
    print(f"distance: {len(rows)} pairs -> {path}")
    return 0


def cmd_volume(cfg: RunConfig) -> int:
    sys_ = _build_system(cfg)
    group, _ = _build_group(cfg)
    t = make_theta(sys_, group, ode_step=cfg.ode_step,
                   newton_tol=cfg.newton_tol)
    center = np.asarray(cfg.patch_center, dtype=float)
    profile = build_volume_profile(
        t, center, cfg.patch_radius / 10.0, cfg.patch_radius,
        n_radii=16, n_samples=cfg.mc_samples, seed=cfg.seed)
    doubling = doubling_ratios(profile)
    rows = []
    for i, (r, v, e) in enumerate(zip(profile.radii, profile.volumes,
                                      profile.stderrs)):
        formula = volume_formula_bounds(sys_, center, float(r))
        dr = float(doubling[i]) if i < len(doubling) else float("nan")
        rows.append([float(r), float(v), float(e), dr, float(formula),
                     float(v / formula) if formula > 0 else float("nan")])
    header = ["radius", "volume", "stderr", "doubling_ratio",
              "formula_value", "mc_over_formula"]
    path = _write_csv(_out_dir(cfg) / f"volume_{cfg.hash}.csv", cfg,
                      header, rows)
    print(f"volume: {len(rows)} radii -> {path}")
    return 0


def cmd_phi(cfg: RunConfig) -> int:
    from .metric import ProfileCache, phi_composition_check

    sys_ = _build_system(cfg)
    group, _ = _build_group(cfg)
    t = make_theta(sys_, group, ode_step=cfg.ode_step,
                   newton_tol=cfg.newton_tol)
    R = cfg.phi_R_effective
    center = np.asarray(cfg.patch_center, dtype=float)
    profile = build_volume_profile(
        t, center, cfg.patch_radius / 100.0, min(R, 1.0),
        n_samples=cfg.mc_samples, seed=cfg.seed)
    from .metric import phi_beta
    rows = []
    ds = np.geomspace(0.02 * cfg.patch_radius, 0.9 * cfg.patch_radius, 12)
    for beta in (0.25, 0.5, 1.0, 2.0):
        for d in ds:
            rows.append([float(d), float(beta),
                         float(phi_beta(profile, float(d), beta, R))])
    path = _write_csv(_out_dir(cfg) / f"phi_{cfg.hash}.csv", cfg,
                      ["d", "beta", "phi"], rows)

    cache = ProfileCache(t, 0.005, min(R, 1.0), lattice_h=0.5,
                         n_radii=16, n_samples=max(cfg.mc_samples // 2, 512),
                         seed=cfg.seed)
    grid = make_grid([[-0.3, 0.3]] * sys_.dim, (6,) * sys_.dim)
    rng = np.random.default_rng(cfg.seed)
    comp_rows = []
    for beta, gam in ((0.5, 0.5), (1.0, 1.0)):
        for _ in range(3):
            x = rng.uniform(-0.25, 0.25, sys_.dim)
            z = rng.uniform(-0.25, 0.25, sys_.dim)
            lhs, rhs, ratio = phi_composition_check(
                t, cache, x, z, beta, gam, grid.nodes, grid.weight, R)
            comp_rows.append(list(map(float, x)) + list(map(float, z))
                             + [float(beta), float(gam), float(lhs),
                                float(rhs), float(ratio)])
    header = ([f"x{i+1}" for i in range(sys_.dim)]
              + [f"z{i+1}" for i in range(sys_.dim)]
              + ["beta", "gamma", "lhs", "rhs", "ratio"])
    comp_path = _write_csv(_out_dir(cfg) / f"phi_composition_{cfg.hash}.csv",
                           cfg, header, comp_rows)
    print(f"phi: {len(rows)} values -> {path}; "
          f"{len(comp_rows)} composition checks -> {comp_path}")
    return 0


def _run_pipeline(cfg: RunConfig):
    sys_ = _build_system(cfg)
    group, kernel = _build_group(cfg)
    run = parametrix_pipeline(
        sys_, group, kernel, cfg.patch_radius, tuple(cfg.grid_shape),
        rel_step=cfg.rel_step, tol=cfg.series_tol, j_max=cfg.j_max,
        ode_step=cfg.ode_step, newton_tol=cfg.newton_tol,
        center=np.asarray(cfg.patch_center, dtype=float),
        rho_excl=cfg.rho_excl)
    return sys_, group, kernel, run


def _save_cache(cfg: RunConfig, run) -> Path:
    cache = _cache_dir(cfg)
    arrays = {
        "nodes": run.grid.nodes,
        "P": run.tables.P.values,
        "Z1": run.tables.Z1.values,
        "d_fast": run.tables.d_fast,
        "c0": run.tables.c0,
        "quad_scale": run.tables.quad_scale,
        "pole_mask": run.tables.P.pole_mask,
        "gamma": run.assembly.gamma.values,
        "phi_prime": run.assembly.phi_prime.values,
        "j_prime": run.assembly.j_prime.values,
    }
    for name, arr in arrays.items():
        np.save(cache / f"{name}.npy", arr)
    return cache


def cmd_gamma(cfg: RunConfig) -> int:
    sys_, group, kernel, run = _run_pipeline(cfg)
    cache = _save_cache(cfg, run)

    grid = run.grid
    off = ~run.tables.P.pole_mask
    ii, jj = np.where(off)
    if ii.size > 20000:
        rng = np.random.default_rng(cfg.seed)
        pick = np.sort(rng.choice(ii.size, 20000, replace=False))
        ii, jj = ii[pick], jj[pick]
    rows = np.column_stack([
        grid.nodes[ii], grid.nodes[jj],
        run.tables.d_fast[ii, jj], run.tables.P.values[ii, jj],
        run.assembly.phi_prime.values[ii, jj],
        run.assembly.gamma.values[ii, jj]])
    header = ["x1", "x2", "x3", "y1", "y2", "y3",
              "d_fast", "P", "phi_prime", "gamma"]
    csv_path = _write_csv(_out_dir(cfg) / f"gamma_{cfg.hash}.csv", cfg,
                          header, [list(map(float, r)) for r in rows])

    # weak identity on the fine grid at the node nearest the center
    iy = int(np.argmin(np.linalg.norm(
        grid.nodes - np.asarray(cfg.patch_center, dtype=float), axis=-1)))
    y = grid.nodes[iy]
    psi = TestBump(center=tuple(y), radius=0.6 * run.patch_radius)
    fine = make_grid(patch_box(y, 0.85 * run.patch_radius,
                               group.dilation_exponents),
                     tuple(cfg.fine_shape),
                     coordinate_weights=group.dilation_exponents)
    vals = gamma_at(run.theta, kernel, grid, run.assembly, iy, fine.nodes,
                    min_d=1e-6)
    weak = weak_identity_check(sys_, fine, vals, psi, y)

    rep = run.recursion
    summary = {
        "family": cfg.family,
        "patch_radius": run.patch_radius,
        "bisections": run.bisections,
        "delta": rep.delta,
        "ratios": rep.ratios,
        "sups": rep.sups,
        "accepted": rep.accepted,
        "tail_bound": rep.tail_bound,
        "compensation": rep.compensation,
        "excluded_fraction": rep.excluded_fraction,
        "rho_excl": grid.rho_excl,
        "weak_identity": weak,
        "cache_dir": str(cache),
    }
    json_path = _write_json(_out_dir(cfg) / f"gamma_{cfg.hash}.json", cfg,
                            summary)
    print(f"gamma: delta={rep.delta:.3f} accepted={rep.accepted} "
          f"weak defect={weak['relative_defect']:.3%} -> {csv_path}, "
          f"{json_path}")
    return 0 if rep.accepted else 2


def solve_on_fine_grid(sys_, kernel, run, fine, f_bump, f_scale,
                       src_shape=(14, 14, 14), chunk: int = 300):
    """w(x) = -int gamma(x, y) f(y) dy on the fine nodes.

    The y-quadrature runs on a midpoint lattice over the bump support,
    splitting gamma = (P + J') / c0: the singular parametrix term is
    evaluated exactly per pair while the smooth correction J' and the
    normalization c0 are interpolated from the pipeline tables.  gamma
    is integrable at the pole, so instead of excluding near-diagonal
    pairs the kernel is clamped at its value one quarter source cell
    away (homogeneous scaling in the pair's own direction).
    """
    grid = run.grid
    t = run.theta
    c = np.asarray(f_bump.center, dtype=float)
    r = float(f_bump.radius)
    src = make_grid(np.stack([c - r, c + r], axis=-1), src_shape,
                    coordinate_weights=grid.coordinate_weights)
    f_src = f_scale * f_bump.value(src.nodes)
    keep = np.abs(f_src) > 0.0
    yq = src.nodes[keep]
    fq = f_src[keep]
    jp = j_prime_dense(grid, run.assembly)
    c0q = interp_column(grid, run.assembly.c0)(yq)
    d_floor = 0.25 * src.cell_scale
    power = kernel.group.Q - 2
    w = np.zeros(fine.n_nodes)
    xs = fine.nodes[:, None, :]
    for lo in range(0, yq.shape[0], chunk):
        ys = yq[None, lo:lo + chunk, :]
        d = theta_norm(t, theta(t, ys, xs))
        P = parametrix_P(t, kernel, xs, ys)
        clamp = np.clip(d / d_floor, 0.0, 1.0) ** power
        P = np.nan_to_num(P * clamp, nan=0.0, posinf=0.0)
        J = jp(xs, ys)
        g = (P + J) / c0q[None, lo:lo + chunk]
        w -= src.weight * (g @ fq[lo:lo + chunk])
    return w


def cmd_solve(cfg: RunConfig, f_center=None, f_radius=None,
              f_scale=-1.0) -> int:
    sys_ = _build_system(cfg)
    group, kernel = _build_group(cfg)
    center = np.asarray(cfg.patch_center, dtype=float)
    if f_center is None:
        f_center = center
    model_path = cfg.family.endswith("_model")
    if f_radius is None:
        f_radius = (1.8 if model_path else 0.5) * cfg.patch_radius
    f_bump = TestBump(center=tuple(f_center), radius=float(f_radius))

    if model_path:
        # gamma coincides with the explicit kernel: solve by group
        # convolution with the dilation-adapted quadrature
        scheme = "group_convolution"
        R = cfg.patch_radius
        fine = make_grid(np.stack([center - R, center + R], axis=-1),
                         tuple(cfg.fine_shape))
        c = np.asarray(f_center, dtype=float)
        src_box = np.stack([c - f_radius, c + f_radius], axis=-1)
        w = convolution_solve(
            group, kernel, lambda pts: f_scale * f_bump.value(pts),
            fine.nodes, src_box, (36,) * sys_.dim)
        run = None
    else:
        scheme = "parametrix_table"
        sys_, group, kernel, run = _run_pipeline(cfg)
        _save_cache(cfg, run)
        fine = make_grid(patch_box(center, 0.9 * run.patch_radius,
                                   group.dilation_exponents),
                         tuple(cfg.fine_shape),
                         coordinate_weights=group.dilation_exponents)
        w = solve_on_fine_grid(sys_, kernel, run, fine, f_bump, f_scale)
    f_fine = f_scale * f_bump.value(fine.nodes)

    resid, ids, Lw = residual_map(sys_, fine, w, f_fine)
    f_max = float(np.max(np.abs(f_fine)))
    rel = resid / f_max if f_max > 0 else resid
    positive = bool(np.all(w >= -1e-12 * max(1.0, np.max(np.abs(w)))))

    rows = [[int(k), float(w[k]), float(Lw[j]), float(f_fine[k]),
             float(resid[j])]
            for j, k in enumerate(ids)]
    csv_path = _write_csv(_out_dir(cfg) / f"solve_{cfg.hash}.csv", cfg,
                          ["node", "w", "Lw", "f", "residual"], rows)
    summary = {
        "family": cfg.family,
        "scheme": scheme,
        "patch_radius": cfg.patch_radius if run is None else run.patch_radius,
        "fine_shape": [int(n) for n in cfg.fine_shape],
        "f_center": [float(c) for c in f_center],
        "f_radius": float(f_radius),
        "f_scale": float(f_scale),
        "max_residual": float(np.max(resid)),
        "max_relative_residual": float(np.max(rel)),
        "positivity": positive,
        "drift_free": not sys_.has_drift,
        "n_interior_nodes": int(len(ids)),
    }
    json_path = _write_json(_out_dir(cfg) / f"solve_{cfg.hash}.json", cfg,
                            summary)
    print(f"solve: max|Lw-f|/max|f| = {summary['max_relative_residual']:.3f} "
          f"positivity={positive} -> {csv_path}, {json_path}")
    return 0 if summary["max_relative_residual"] <= 0.1 else 2


def cmd_verify() -> int:
    import pytest

    here = Path(__file__).resolve()
    for base in [Path.cwd()] + list(here.parents):
        target = base / "tests" / "test_acceptance.py"
        if target.exists():
            return pytest.main(["-v", str(target)])
    print("verify: tests/test_acceptance.py not found", file=_sys.stderr)
    return 1


# --- entry point ------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(
        prog="subelliptic",
        description="Carnot-Caratheodory calculus and Levi-parametrix "
                    "solver for nonsmooth Hormander operators")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("check", "volume", "phi", "gamma"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
    sp = sub.add_parser("distance")
    sp.add_argument("--config", required=True)
    sp.add_argument("--pairs", required=True,
                    help="CSV of point pairs (x..., y...)")
    sp = sub.add_parser("solve")
    sp.add_argument("--config", required=True)
    sp.add_argument("--f-center", default=None,
                    help="comma-separated bump center (default patch center)")
    sp.add_argument("--f-radius", type=float, default=None)
    sp.add_argument("--f-scale", type=float, default=-1.0)
    sub.add_parser("verify")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify()
        cfg = load_config(args.config)
        if args.command == "check":
            return cmd_check(cfg)
        if args.command == "distance":
            return cmd_distance(cfg, args.pairs)
        if args.command == "volume":
            return cmd_volume(cfg)
        if args.command == "phi":
            return cmd_phi(cfg)
        if args.command == "gamma":
            return cmd_gamma(cfg)
        if args.command == "solve":
            f_center = (None if args.f_center is None else
                        [float(c) for c in args.f_center.split(",")])
            return cmd_solve(cfg, f_center=f_center,
                             f_radius=args.f_radius, f_scale=args.f_scale)
        raise ConfigError(f"unknown command {args.command!r}")
    except (SubellipticError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
