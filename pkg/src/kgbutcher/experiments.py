"""Reusable numerical studies shared by the command line and the test-suite."""
from __future__ import annotations

import numpy as np

from .analysis import richardson
from .lattice import CauchyData, free_field, sobolev_norms, triple_norm
from .reference import IntegratorConfig, integrate, integrate_interaction
from .series import (
    SeriesConfig,
    build_table,
    convergence_threshold,
    correction_sum,
    order_sums,
    residual,
    series_residual,
)
from .validation import n_steps


def free_residual_study(data: CauchyData, T, dts, q=1):
    """Centred-difference residual of the free field for each ``dt``."""
    out = []
    for dt in dts:
        f = free_field(data, T, dt)
        cfg = SeriesConfig(2, 0.0, data, T, dt, q, 0, c_q=1.0)
        out.append(residual(f, cfg, 0.0))
    return np.array(out)


def _levels(base_dt, levels):
    return [base_dt / 2**k for k in range(levels)]


def extrapolated_order_sums(data: CauchyData, p, T, base_dt, levels, max_order, q=1, c_q=None):
    """Order sums ``sum_{|b|=n} phi(b)`` on the ``base_dt`` grid, Richardson-extrapolated in ``dt^2``.

    Each level halves the step; finer levels are sampled back onto the
    coarse grid before extrapolation.
    """
    per_level = []
    cfg = None
    for k, h in enumerate(_levels(base_dt, levels)):
        cfg = SeriesConfig(p, 0.0, data, T, h, q, max_order, c_q=c_q)
        sums = order_sums(cfg, build_table(cfg))
        per_level.append([s.values[:: 2**k] for s in sums])
        c_q = cfg.c_q  # estimate once
    return [richardson([lv[n] for lv in per_level]) for n in range(max_order + 1)], cfg


def extrapolated_reference_correction(data: CauchyData, p, lam, T, base_dt, levels):
    """Interacting minus free solution on the ``base_dt`` grid, extrapolated in ``dt^2``."""
    runs = []
    for k, h in enumerate(_levels(base_dt, levels)):
        cfg = IntegratorConfig(data.grid, lam, p, h, T, "strang")
        runs.append(integrate_interaction(data, cfg, save_every=2**k).values)
    return richardson(runs)


def series_accuracy_study(data: CauchyData, p, T, lams, orders, base_dt=1e-2, levels=4, q=1):
    """``sup_t ||partial_sum(N) - reference||_{H^q}`` for each ``lam`` and ``N``.

    Both sides are compared as corrections to the exact free field (the
    leaf coefficient), which the Strang reference reproduces exactly, and
    both are Richardson-extrapolated over ``levels`` halvings of
    ``base_dt``.  Returns ``{N: array over lams}``.
    """
    orders = list(orders)
    sums, _ = extrapolated_order_sums(data, p, T, base_dt, levels, max(orders), q)
    out = {N: [] for N in orders}
    for lam in lams:
        ref = extrapolated_reference_correction(data, p, lam, T, base_dt, levels)
        for N in orders:
            corr = sum((sums[n] * lam**n for n in range(1, N + 1)), np.zeros_like(ref))
            out[N].append(float(sobolev_norms(data.grid, corr - ref, q).max()))
    return {N: np.array(v) for N, v in out.items()}


def residual_study(data: CauchyData, p, T, lams, orders, dt=1e-2, q=1, derivative="carried"):
    """Floor-free residual of ``partial_sum(N)`` for each ``lam`` and ``N``."""
    orders = list(orders)
    cfg = SeriesConfig(p, 0.0, data, T, dt, q, max(orders))
    sums = order_sums(cfg, build_table(cfg))
    return {
        N: np.array([series_residual(sums, cfg, N, lam, derivative) for lam in lams]) for N in orders
    }


def self_convergence(data: CauchyData, p, lam, T, dts, scheme="strang"):
    """Errors of runs at each ``dt`` against a run at ``min(dts) / 8``.

    Compared at the samples of the coarsest step.
    """
    coarse = max(dts)
    ref_dt = min(dts) / 8
    ref = integrate(data, IntegratorConfig(data.grid, lam, p, ref_dt, T, scheme), n_steps(coarse, ref_dt))
    errs = []
    for dt in dts:
        tr = integrate(data, IntegratorConfig(data.grid, lam, p, dt, T, scheme), n_steps(coarse, dt))
        errs.append(float(sobolev_norms(data.grid, tr.values - ref.values, 0).max()))
    return np.array(errs)


def classical_report(cfg: SeriesConfig, scheme="strang", reference=True, series=True, levels=1):
    """Per-order norms, errors against the reference, and residuals for one run.

    Errors against the reference use :func:`series_accuracy_study` with
    ``levels`` Richardson levels (``1`` means a plain comparison at
    ``cfg.dt``).  Returns a JSON-ready dict and the trajectories
    ``{"series", "reference", "free"}`` sampled at ``cfg.dt``.
    """
    threshold = convergence_threshold(cfg)
    rep = {
        "threshold": threshold,
        "threshold_is_estimate": True,
        "c_q": cfg.c_q,
        "inside_radius": bool(abs(cfg.lam) < threshold),
    }
    g, q = cfg.grid, cfg.q

    def dist(a, b):
        return float(sobolev_norms(g, a.values - b.values, q).max())

    free = free_field(cfg.cauchy, cfg.T, cfg.dt)
    traj = {"free": free, "series": None, "reference": None}
    if free.nt >= 3:
        # centred-difference residual of the free field: the lam-independent floor
        rep["free_residual"] = residual(free, cfg, 0.0)
    if reference:
        if scheme == "strang":
            icfg = IntegratorConfig(g, cfg.lam, cfg.p, cfg.dt, cfg.T, scheme)
            ref = free + integrate_interaction(cfg.cauchy, icfg)
        else:
            ref = integrate(cfg.cauchy, IntegratorConfig(g, cfg.lam, cfg.p, cfg.dt, cfg.T, scheme))
        traj["reference"] = ref
        rep["reference_vs_free"] = dist(ref, free)
    if series:
        sums = order_sums(cfg, build_table(cfg))
        rep["order_norms"] = [float(sobolev_norms(g, s.values, q).max()) for s in sums]
        rep["triple_norms"] = [float(triple_norm(s, q)) for s in sums]
        rep["residuals"] = [series_residual(sums, cfg, N, cfg.lam) for N in range(cfg.max_order + 1)]
        corr = correction_sum(sums, cfg.lam, cfg.max_order)
        ps = sums[0] if corr is None else sums[0] + corr
        traj["series"] = ps
        rep["series_vs_free"] = dist(ps, free)
        if reference:
            if scheme == "strang":
                errs = series_accuracy_study(
                    cfg.cauchy, cfg.p, cfg.T, [cfg.lam], range(cfg.max_order + 1), cfg.dt, levels, q
                )
                rep["errors_vs_reference"] = [float(errs[N][0]) for N in range(cfg.max_order + 1)]
            else:
                rep["errors_vs_reference"] = [
                    dist(sums[0] if N == 0 else sums[0] + correction_sum(sums, cfg.lam, N), ref)
                    for N in range(cfg.max_order + 1)
                ]
            rep["series_vs_reference"] = rep["errors_vs_reference"][-1]
    return rep, traj
