"""Direct time integration of ``(box + m^2) phi + lam * phi^p = 0``.

Independent of the tree expansion; used as the accuracy oracle for it.

Schemes
-------
``strang``
    ``L(dt/2) K(dt) L(dt/2)`` where ``L`` is the exact per-mode free flow and
    ``K`` the kick ``pi -= dt * lam * phi^p``.  Exact for ``lam = 0``.
    Published stability criterion: ``dt * m <= 0.5`` (the linear part is
    unconditionally stable; the kick is monitored by the divergence detector).
``leapfrog``
    Velocity Verlet with spectral Laplacian.  Stability criterion:
    ``dt * omega_max < 2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ConfigError, DivergenceError
from .lattice import CauchyData, GridSpec, TimeSampledField, from_spectral, to_spectral
from .validation import check_integer, check_real, check_time_grid, n_steps, raise_if

SCHEMES = ("strang", "leapfrog")

# growth of max|phi| relative to the initial data that counts as divergence
BLOWUP_FACTOR = 1e6


def stability_limit(grid: GridSpec, scheme: str) -> float:
    """Largest admissible ``dt`` for ``scheme`` on ``grid``."""
    if scheme == "strang":
        return 0.5 / grid.m
    if scheme == "leapfrog":
        return 2.0 / float(grid.omega().max())
    raise ConfigError(f"scheme: unknown {scheme!r}, choose from {SCHEMES}")


@dataclass(frozen=True)
class IntegratorConfig:
    grid: GridSpec
    lam: float
    p: int
    dt: float
    T: float
    scheme: str = "strang"

    def __post_init__(self):
        problems = []
        check_real(problems, "lambda", self.lam)
        check_integer(problems, "p", self.p, minimum=2)
        check_time_grid(problems, self.T, self.dt, "horizon_T", "dt")
        if self.scheme not in SCHEMES:
            problems.append(f"scheme: unknown {self.scheme!r}, choose from {SCHEMES}")
        elif not problems:
            lim = stability_limit(self.grid, self.scheme)
            if (self.scheme == "leapfrog" and self.dt >= lim) or (self.scheme == "strang" and self.dt > lim):
                problems.append(f"dt: {self.dt} violates the {self.scheme} stability limit {lim:.6g}")
        raise_if(problems)

    @property
    def steps(self):
        return n_steps(self.T, self.dt)


def _linear_flow(grid, w, phi_hat, pi_hat, h):
    c, s = np.cos(w * h), np.sin(w * h)
    return c * phi_hat + s / w * pi_hat, -w * s * phi_hat + c * pi_hat


class _Stepper:
    def __init__(self, cfg: IntegratorConfig):
        self.cfg = cfg
        g = cfg.grid
        self.w = g.omega()
        self.k2 = g.k_squared()

    def force(self, phi):
        g, c = self.cfg.grid, self.cfg
        lin = from_spectral(g, -(self.w**2) * to_spectral(g, phi))
        return lin - c.lam * phi**c.p if c.lam else lin

    def step(self, phi, pi, dt):
        c, g = self.cfg, self.cfg.grid
        if c.scheme == "strang":
            ph, pih = _linear_flow(g, self.w, to_spectral(g, phi), to_spectral(g, pi), dt / 2)
            phi, pi = from_spectral(g, ph), from_spectral(g, pih)
            if c.lam:
                pi = pi - dt * c.lam * phi**c.p
            ph, pih = _linear_flow(g, self.w, to_spectral(g, phi), to_spectral(g, pi), dt / 2)
            return from_spectral(g, ph), from_spectral(g, pih)
        pi = pi + 0.5 * dt * self.force(phi)
        phi = phi + dt * pi
        pi = pi + 0.5 * dt * self.force(phi)
        return phi, pi


def evolve_state(phi, pi, cfg: IntegratorConfig, steps: int, direction: int = 1):
    """Advance ``(phi, dphi/dt)`` by ``steps`` steps of ``direction * cfg.dt``."""
    st = _Stepper(cfg)
    dt = direction * cfg.dt
    for _ in range(steps):
        phi, pi = st.step(phi, pi, dt)
    return phi, pi


def integrate(cauchy: CauchyData, cfg: IntegratorConfig, save_every: int = 1) -> TimeSampledField:
    """Trajectory on ``[0, T]`` saved every ``save_every`` steps.

    ``d1`` carries the velocity.  Raises :class:`DivergenceError` when the
    field becomes non-finite or grows by more than ``BLOWUP_FACTOR``.
    """
    if cauchy.grid != cfg.grid:
        raise ConfigError("cauchy data and integrator use different grids")
    steps = cfg.steps
    if steps % save_every:
        raise ConfigError(f"save_every={save_every} does not divide the {steps} steps")
    st = _Stepper(cfg)
    phi = np.array(cauchy.phi0.values)
    pi = np.array(cauchy.phi1.values)
    limit = BLOWUP_FACTOR * (np.abs(phi).max() + np.abs(pi).max() + 1.0)
    vals, vels = [phi], [pi]
    for j in range(1, steps + 1):
        phi, pi = st.step(phi, pi, cfg.dt)
        if j % save_every == 0:
            big = np.abs(phi).max()
            if not np.isfinite(big) or big > limit:
                raise DivergenceError(
                    f"{cfg.scheme} integration diverged at t={j * cfg.dt:.6g} with dt={cfg.dt}"
                )
            vals.append(phi)
            vels.append(pi)
    return TimeSampledField(cfg.grid, cfg.dt * save_every, np.array(vals), np.array(vels))


def energy(phi, pi, grid: GridSpec, lam: float, p: int) -> np.ndarray:
    """``sum_sites [pi^2/2 + |grad phi|^2/2 + m^2 phi^2/2 + lam phi^(p+1)/(p+1)] * cellvol``.

    Leading axes of ``phi``/``pi`` are kept (e.g. time).
    """
    phi = np.asarray(phi)
    pi = np.asarray(pi)
    ax = tuple(range(phi.ndim - grid.d, phi.ndim))
    fh = to_spectral(grid, phi)
    grad2 = sum(from_spectral(grid, 1j * k * fh) ** 2 for k in grid.wavevectors())
    dens = 0.5 * pi**2 + 0.5 * grad2 + 0.5 * grid.m**2 * phi**2 + lam * phi ** (p + 1) / (p + 1)
    return dens.sum(axis=ax) * grid.cell_volume


def integrate_interaction(cauchy: CauchyData, cfg: IntegratorConfig, save_every: int = 1) -> TimeSampledField:
    """Trajectory of ``psi = phi - phi_free`` (the interacting correction).

    Same Strang scheme as :func:`integrate`: because the linear flow is exact
    and linear, splitting ``phi`` and splitting ``psi`` with the free field
    evaluated at the kick time agree in exact arithmetic.  Tracking ``psi``
    keeps rounding errors proportional to ``|psi|`` instead of ``|phi|``,
    which matters when comparing against perturbative corrections of size
    ``lam^N``.  ``d1`` carries ``dpsi/dt``.
    """
    if cfg.scheme != "strang":
        raise ConfigError("interaction-form integration requires the strang scheme")
    if cauchy.grid != cfg.grid:
        raise ConfigError("cauchy data and integrator use different grids")
    steps = cfg.steps
    if steps % save_every:
        raise ConfigError(f"save_every={save_every} does not divide the {steps} steps")
    g = cfg.grid
    w = g.omega()
    a0 = cauchy.phi0.to_spectral()
    a1 = cauchy.phi1.to_spectral()

    def free_at(t):
        return from_spectral(g, np.sin(w * t) / w * a1 + np.cos(w * t) * a0)

    psi_hat = np.zeros(g.shape, dtype=complex)
    pi_hat = np.zeros(g.shape, dtype=complex)
    h = cfg.dt
    c, s = np.cos(w * h / 2), np.sin(w * h / 2)
    vals = [np.zeros(g.shape)]
    vels = [np.zeros(g.shape)]
    limit = BLOWUP_FACTOR * (np.abs(cauchy.phi0.values).max() + np.abs(cauchy.phi1.values).max() + 1.0)
    for j in range(steps):
        psi_hat, pi_hat = c * psi_hat + s / w * pi_hat, -w * s * psi_hat + c * pi_hat
        if cfg.lam:
            mid = free_at((j + 0.5) * h) + from_spectral(g, psi_hat)
            pi_hat = pi_hat - h * cfg.lam * to_spectral(g, mid**cfg.p)
        psi_hat, pi_hat = c * psi_hat + s / w * pi_hat, -w * s * psi_hat + c * pi_hat
        if (j + 1) % save_every == 0:
            psi = from_spectral(g, psi_hat)
            big = np.abs(psi).max()
            if not np.isfinite(big) or big > limit:
                raise DivergenceError(f"strang integration diverged at t={(j + 1) * h:.6g} with dt={h}")
            vals.append(psi)
            vels.append(from_spectral(g, pi_hat))
    return TimeSampledField(g, h * save_every, np.array(vals), np.array(vels))


def trajectory_energy(traj: TimeSampledField, lam, p):
    return energy(traj.values, traj.d1, traj.grid, lam, p)


class ReferenceIntegrator(BaseEstimator):
    """Estimator wrapper: ``fit(cauchy)`` integrates, ``predict()`` returns the trajectory."""

    def __init__(self, p=2, coupling=0.0, T=1.0, dt=1e-3, scheme="strang", save_every=1):
        self.p = p
        self.coupling = coupling
        self.T = T
        self.dt = dt
        self.scheme = scheme
        self.save_every = save_every

    def fit(self, X: CauchyData, y=None):
        cfg = IntegratorConfig(X.grid, self.coupling, self.p, self.dt, self.T, self.scheme)
        self.config_ = cfg
        self.trajectory_ = integrate(X, cfg, self.save_every)
        return self

    def predict(self, X=None):
        if X is not None:
            self.fit(X)
        if not hasattr(self, "trajectory_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("ReferenceIntegrator is not fitted yet")
        return self.trajectory_

    def energy_drift(self):
        E = trajectory_energy(self.predict(), self.coupling, self.p)
        return float(np.max(np.abs(E - E[0])) / abs(E[0]))
