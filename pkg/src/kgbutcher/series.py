"""Tree-indexed perturbative solution of ``(box + m^2) phi + lam * phi^p = 0``.

The coefficient of the leaf tree is the free field of the Cauchy data; the
coefficient of ``b_plus(b1, ..., bp)`` solves ``(box + m^2) u = -phi(b1)...phi(bp)``
with zero Cauchy data.  The solution is ``sum_b lam^|b| phi(b)``.

Coefficients do not depend on ``lam``: one :class:`CoefficientTable` serves
a whole coupling sweep.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import ptree
from .exceptions import DivergenceError, ShapeError
from .lattice import (
    CauchyData,
    TimeSampledField,
    estimate_algebra_constant,
    free_field,
    klein_gordon_operator,
    pointwise_product,
    solve_retarded,
    sobolev_norms,
    triple_norm,
)
from .validation import check_integer, check_positive, check_real, check_time_grid, raise_if


@dataclass(frozen=True)
class SeriesConfig:
    p: int
    lam: float
    cauchy: CauchyData
    T: float
    dt: float
    q: int = 1
    max_order: int = 3
    c_q: float | None = None
    dealias: bool = False

    def __post_init__(self):
        problems = []
        check_integer(problems, "p", self.p, minimum=2)
        check_real(problems, "lambda", self.lam)
        check_time_grid(problems, self.T, self.dt, "horizon_T", "dt")
        check_integer(problems, "sobolev_q", self.q, minimum=0)
        if not problems and not self.q > self.grid.d / 2:
            problems.append(f"sobolev_q: need q > d/2 = {self.grid.d / 2}, got {self.q}")
        check_integer(problems, "order", self.max_order, minimum=0)
        if self.c_q is not None:
            check_positive(problems, "c_q", self.c_q)
        raise_if(problems)
        if self.c_q is None:
            object.__setattr__(self, "c_q", estimate_algebra_constant(self.grid, self.q))

    @property
    def grid(self):
        return self.cauchy.grid

    @property
    def M(self):
        m = self.grid.m
        return max(m, 1.0 / m)

    @property
    def data_norm(self):
        return self.cauchy.norm(self.q)

    def replace(self, **kw):
        args = {f: getattr(self, f) for f in self.__dataclass_fields__}
        args.update(kw)
        return SeriesConfig(**args)


@dataclass
class CoefficientTable:
    """Coefficients keyed by canonical tree key, plus a triple-norm cache.

    With ``dedup`` (default) a tree is stored once per reorder class, under
    the key of its sorted form; lookups of any planar member resolve there.
    """

    cfg: SeriesConfig
    dedup: bool = True
    entries: dict = field(default_factory=dict)
    norms: dict = field(default_factory=dict)

    def key_for(self, b):
        return ptree.sorted_form(b).key if self.dedup else b.key

    def __contains__(self, b):
        return self.key_for(b) in self.entries

    def __getitem__(self, b) -> TimeSampledField:
        return self.entries[self.key_for(b)]

    def __setitem__(self, b, value):
        self.entries[self.key_for(b)] = value

    def norm(self, b):
        k = self.key_for(b)
        if k not in self.norms:
            self.norms[k] = triple_norm(self.entries[k], self.cfg.q)
        return self.norms[k]


def _check_finite(field, key):
    if not (np.all(np.isfinite(field.values)) and np.all(np.isfinite(field.d2))):
        raise DivergenceError(f"non-finite values in coefficient {key}")


def compute_coefficient(b, cfg: SeriesConfig, table: CoefficientTable | None = None) -> TimeSampledField:
    """``phi(b)`` sampled on ``[0, T]``, computing missing subtrees on demand.

    Factors of the source are multiplied in canonical-key order, so every
    reordering of the children of ``b`` yields bitwise the same result.
    """
    if table is None:
        table = CoefficientTable(cfg)
    if b in table:
        return table[b]
    if b.is_leaf:
        out = free_field(cfg.cauchy, cfg.T, cfg.dt)
    else:
        kids = sorted(ptree.decompose(b), key=lambda c: ptree.sorted_form(c).key)
        factors = [compute_coefficient(c, cfg, table) for c in kids]
        out = solve_retarded(pointwise_product(factors, dealias=cfg.dealias))
    _check_finite(out, b.key)
    table[b] = out
    return out


def build_table(cfg: SeriesConfig, dedup=True, workers=None) -> CoefficientTable:
    """All coefficients with ``|b| <= cfg.max_order``, one order at a time.

    Within an order the reorder classes are independent and are computed
    concurrently (``workers`` threads); results are committed after the batch.
    """
    table = CoefficientTable(cfg, dedup=dedup)
    compute_coefficient(ptree.LEAF, cfg, table)
    for n in range(1, cfg.max_order + 1):
        trees = [r for r, _ in ptree.enumerate_classes(cfg.p, n)] if dedup else ptree.enumerate_trees(cfg.p, n)

        def one(b):
            kids = sorted(ptree.decompose(b), key=lambda c: ptree.sorted_form(c).key)
            src = pointwise_product([table[c] for c in kids], dealias=cfg.dealias)
            return b, solve_retarded(src)

        if workers and workers > 1 and len(trees) > 1:
            with ThreadPoolExecutor(workers) as ex:
                batch = list(ex.map(one, trees))
        else:
            batch = [one(b) for b in trees]
        for b, f in batch:
            _check_finite(f, b.key)
            table[b] = f
    return table


def order_sums(cfg: SeriesConfig, table: CoefficientTable, N=None) -> list:
    """``[sum_{|b| = n} phi(b) for n in 0..N]`` (planar trees, with multiplicity)."""
    N = cfg.max_order if N is None else N
    out = []
    for n in range(N + 1):
        acc = None
        if table.dedup:
            terms = [(r, mult) for r, mult in ptree.enumerate_classes(cfg.p, n)]
        else:
            terms = [(b, 1) for b in ptree.enumerate_trees(cfg.p, n)]
        for b, mult in terms:
            f = compute_coefficient(b, cfg, table) * mult
            acc = f if acc is None else acc + f
        out.append(acc)
    return out


def partial_sum(cfg: SeriesConfig, N: int, table: CoefficientTable | None = None, lam=None) -> TimeSampledField:
    """``sum_{|b| <= N} lam^|b| phi(b)``, accumulated by increasing order then key."""
    if N > cfg.max_order:
        raise ShapeError(f"order {N} exceeds max_order {cfg.max_order}")
    table = build_table(cfg) if table is None else table
    lam = cfg.lam if lam is None else lam
    sums = order_sums(cfg, table, N)
    acc = sums[0]
    for n in range(1, N + 1):
        acc = acc + sums[n] * lam**n
    return acc


def convergence_threshold(cfg: SeriesConfig) -> float:
    """Coupling bound below which the tree series provably converges.

    ``(p-1)^(p-1) / ((1 + M T) p^p c_q^(p-1) M^(2(p-1)) (||phi0|| + ||phi1||)^(p-1))``
    with ``M = max(m, 1/m)``.  Uses the estimated ``c_q``, so the result is
    itself an estimate.  Zero data gives ``inf``.
    """
    return threshold_value(cfg.p, cfg.M, cfg.T, cfg.c_q, cfg.data_norm)


def threshold_value(p, M, T, c_q, data_norm):
    if data_norm == 0:
        return math.inf
    num = (p - 1) ** (p - 1)
    den = (1 + M * T) * p**p * c_q ** (p - 1) * M ** (2 * (p - 1)) * data_norm ** (p - 1)
    return num / den


@dataclass
class BoundReport:
    key: str
    order: int
    norm: float
    closed_bound: float
    closed_ok: bool
    step_bound: float | None = None
    step_ok: bool | None = None

    @property
    def ok(self):
        return self.closed_ok and (self.step_ok is None or self.step_ok)


def closed_bound(cfg: SeriesConfig, order: int) -> float:
    """``(c_q^(p-1) (1 + M T))^n [M^2 (||phi0|| + ||phi1||)]^(n(p-1) + 1)``."""
    M, p = cfg.M, cfg.p
    return (cfg.c_q ** (p - 1) * (1 + M * cfg.T)) ** order * (M**2 * cfg.data_norm) ** (order * (p - 1) + 1)


def bound_check(b, cfg: SeriesConfig, table: CoefficientTable, rtol=1e-12) -> BoundReport:
    """Compare the triple norm of ``phi(b)`` with the closed and one-step bounds."""
    compute_coefficient(b, cfg, table)
    nrm = table.norm(b)
    cb = closed_bound(cfg, b.size)
    rep = BoundReport(b.key, b.size, nrm, cb, nrm <= cb * (1 + rtol))
    if not b.is_leaf:
        kids = ptree.decompose(b)
        sb = (1 + cfg.M * cfg.T) * cfg.c_q ** (cfg.p - 1) * math.prod(table.norm(c) for c in kids)
        rep.step_bound = sb
        rep.step_ok = nrm <= sb * (1 + rtol)
    return rep


def residual(
    field: TimeSampledField,
    cfg: SeriesConfig,
    lam=None,
    base: TimeSampledField | None = None,
    derivative: str = "centered",
) -> float:
    """``max_j ||(box + m^2) u + lam u^p||_{H^(q-1)}`` over interior samples.

    Without ``base``, ``u = field``.  With ``base``, ``field`` is read as a
    correction and ``u = base + field``, but the linear operator acts on the
    correction alone: ``(box + m^2) base`` is left out.  For ``base`` the free
    field this drops the ``lam``-independent discretisation floor without
    forming a difference of two large residuals.

    ``derivative`` is ``"centered"`` (second difference) or ``"carried"``
    (the field's own ``d2`` samples, which for tree coefficients come from
    the Duhamel formula).
    """
    if derivative not in ("centered", "carried"):
        raise ValueError(f"derivative must be 'centered' or 'carried', got {derivative!r}")
    lam = cfg.lam if lam is None else lam
    r = klein_gordon_operator(field, use_carried=derivative == "carried")
    full = field.values
    if base is not None:
        field.compatible(base)
        full = base.values + field.values
    if lam != 0:
        r = r + lam * full[1:-1] ** cfg.p
    return float(sobolev_norms(field.grid, r, cfg.q - 1).max())


def correction_sum(sums, lam, N) -> TimeSampledField | None:
    """``sum_{1 <= n <= N} lam^n sums[n]``, or None when ``N = 0``."""
    acc = None
    for n in range(1, N + 1):
        term = sums[n] * lam**n
        acc = term if acc is None else acc + term
    return acc


def series_residual(sums, cfg: SeriesConfig, N: int, lam=None, derivative="carried") -> float:
    """Residual of the order-``N`` partial sum with the free-field floor removed."""
    lam = cfg.lam if lam is None else lam
    corr = correction_sum(sums, lam, N)
    if corr is None:
        # only the nonlinear term survives
        corr = sums[0] * 0.0
    return residual(corr, cfg, lam, base=sums[0], derivative=derivative)


class ButcherSeries(BaseEstimator):
    """Estimator-style front end to the tree series.

    ``fit`` takes :class:`CauchyData` and builds the coefficient table up to
    ``order``; ``predict`` returns the partial sum at ``coupling``.  Changing
    ``coupling`` with ``set_params`` does not require refitting.

    Parameters
    ----------
    p : int
        Power of the nonlinearity.
    coupling : float
        The coupling constant ``lam``.
    order : int
        Largest tree size kept.
    T, dt : float
        Horizon and time step.
    q : int
        Sobolev index for norms; must exceed ``d / 2``.
    c_q : float or None
        Algebra constant; estimated from the grid when None.
    dealias : bool
        Zero-pad products.
    dedup : bool
        Share coefficients between trees equal up to child order.
    """

    def __init__(self, p=2, coupling=0.0, order=3, T=1.0, dt=1e-3, q=1, c_q=None, dealias=False, dedup=True, n_jobs=None):
        self.p = p
        self.coupling = coupling
        self.order = order
        self.T = T
        self.dt = dt
        self.q = q
        self.c_q = c_q
        self.dealias = dealias
        self.dedup = dedup
        self.n_jobs = n_jobs

    def _config(self, cauchy):
        return SeriesConfig(
            p=self.p, lam=self.coupling, cauchy=cauchy, T=self.T, dt=self.dt, q=self.q,
            max_order=self.order, c_q=self.c_q, dealias=self.dealias,
        )

    def fit(self, X: CauchyData, y=None):
        cfg = self._config(X)
        self.config_ = cfg
        self.table_ = build_table(cfg, dedup=self.dedup, workers=self.n_jobs)
        self.order_sums_ = order_sums(cfg, self.table_)
        self.c_q_ = cfg.c_q
        self.threshold_ = convergence_threshold(cfg)
        return self

    def _check_fitted(self):
        if not hasattr(self, "table_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("ButcherSeries is not fitted yet; call fit(cauchy_data)")

    def predict(self, X=None, order=None):
        """Partial sum through ``order`` (default: the fitted order)."""
        self._check_fitted()
        if X is not None and X is not self.config_.cauchy:
            self.fit(X)
        N = self.order if order is None else order
        if N > self.order:
            raise ShapeError(f"order {N} exceeds fitted order {self.order}")
        acc = self.order_sums_[0]
        for n in range(1, N + 1):
            acc = acc + self.order_sums_[n] * self.coupling**n
        return acc

    def fit_predict(self, X, y=None):
        return self.fit(X).predict()

    def inside_radius(self):
        self._check_fitted()
        return abs(self.coupling) < self.threshold_

    def residual(self, order=None, subtract_free=False, derivative="centered"):
        """Residual of ``predict(order)``; see :func:`residual`.

        ``subtract_free`` leaves out ``(box + m^2)`` of the free field.
        """
        self._check_fitted()
        N = self.order if order is None else order
        if subtract_free:
            return series_residual(self.order_sums_, self.config_, N, self.coupling, derivative)
        return residual(self.predict(order=N), self.config_, self.coupling, derivative=derivative)
