"""Interacting scalar field on a truncated Fock space.

A handful of modes ``k_j = 2 pi j / L`` on a one-dimensional torus, each
with occupations ``0 .. n_max``.  Operators are dense complex matrices.
Identities between operator expansions are compared only on the *safe
subspace*: basis states whose total occupation is low enough that no chain
of ``F`` ladder operators starting and ending there ever needs a level above
``n_max``.  On that subspace truncated matrix products equal the untruncated
ones, so the comparisons carry no cutoff error at all.

Conventions
-----------
``phi_I(t, x) = sum_k (a_k e^{-i k.x} + a_k^+ e^{i k.x}) / sqrt(2 w_k V)``
with ``k.x = w_k (t - t0) - k x``.  The commutator ``[phi_I(x), phi_I(y)]``
is the c-number ``Delta(x - y) = -i sum_k sin(k.(x - y)) / (w_k V)``.

Two sign choices enter the comparison between tree operators and the
conjugated field:

``kernel``
    ``"minus"`` takes the retarded kernel to be ``-i theta Delta``;
    ``"plus"`` takes ``+i theta Delta``, which is the lattice retarded
    Green function used by the classical solver (positive
    ``sin(w t) / w`` for the zero mode).
``u_sign``
    ``+1`` builds ``U = sum (i lam)^a U_a``, ``-1`` builds
    ``U = sum (-i lam)^a U_a``, where ``U_a`` is the time-ordered integral
    of ``a`` copies of ``H_I``.

The graded identity holds exactly when ``u_sign == -kernel_sign``; the
verification report computes both signs of ``U`` and names the one that
passes.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import ptree
from .analysis import fit_loglog
from .exceptions import ConfigError, RangeError, TruncationError
from .validation import check_integer, check_positive, check_real, raise_if

KERNELS = {"minus": -1, "plus": +1}
SIMPLEX_RULES = ("rectangle", "trapezoid")


@dataclass(frozen=True)
class QuantumLatticeSpec:
    """Mode set, cutoff and geometry of the truncated quantum field.

    ``modes`` odd gives ``j = -(modes-1)/2 .. (modes-1)/2``; ``modes`` even
    gives ``j = -modes/2 .. modes/2 - 1`` (discrete Fourier ordering).
    ``sites`` is the number of quadrature points for spatial integrals; by
    default it integrates products of up to ``p + 1`` fields exactly.
    """

    modes: int = 1
    n_max: int = 6
    L: float = 1.0
    m: float = 1.0
    t0: float = 0.0
    p: int = 2
    d: int = 1
    sites: int | None = None

    def __post_init__(self):
        problems = []
        check_integer(problems, "dims", self.d, minimum=1)
        if not problems and self.d != 1:
            problems.append(f"dims: the quantum module supports d = 1 only, got {self.d}")
        check_integer(problems, "modes", self.modes, minimum=1)
        check_integer(problems, "nmax", self.n_max, minimum=1)
        check_positive(problems, "box_L", self.L)
        check_positive(problems, "mass", self.m)
        check_real(problems, "t0", self.t0)
        check_integer(problems, "p", self.p, minimum=2)
        if self.sites is not None:
            check_integer(problems, "sites", self.sites, minimum=1)
        if not problems and (self.n_max + 1) ** self.modes > 4096:
            problems.append(
                f"modes/nmax: Fock dimension {(self.n_max + 1) ** self.modes} exceeds 4096"
            )
        raise_if(problems)
        if self.sites is None:
            jmax = int(np.abs(self.mode_indices).max())
            object.__setattr__(self, "sites", (self.p + 1) * jmax + 1)

    @property
    def mode_indices(self) -> np.ndarray:
        M = self.modes
        if M % 2:
            return np.arange(-(M - 1) // 2, (M - 1) // 2 + 1)
        return np.arange(-M // 2, M // 2)

    @property
    def k(self):
        return 2 * np.pi * self.mode_indices / self.L

    @property
    def omega(self):
        return np.sqrt(self.k**2 + self.m**2)

    @property
    def volume(self):
        return self.L

    @property
    def dim(self):
        return (self.n_max + 1) ** self.modes

    @property
    def site_coordinates(self):
        return np.arange(self.sites) * (self.L / self.sites)

    @property
    def cell_volume(self):
        return self.L / self.sites

    @cached_property
    def occupations(self) -> np.ndarray:
        """``(dim, modes)`` occupation numbers of the product basis."""
        levels = range(self.n_max + 1)
        return np.array(list(itertools.product(levels, repeat=self.modes)), dtype=int)

    @cached_property
    def total_number(self) -> np.ndarray:
        return self.occupations.sum(axis=1)

    def mode_position(self, j) -> int:
        idx = np.nonzero(self.mode_indices == j)[0]
        if idx.size == 0:
            raise RangeError(f"mode {j} not in the retained set {self.mode_indices.tolist()}")
        return int(idx[0])


# -- operators -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModeOperator:
    """Dense operator on the truncated Fock space of ``spec``."""

    spec: QuantumLatticeSpec
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=complex)
        if a.shape != (self.spec.dim, self.spec.dim):
            raise ConfigError(f"operator shape {a.shape} does not match Fock dimension {self.spec.dim}")
        if not np.all(np.isfinite(a)):
            raise ConfigError("operator has non-finite entries")
        object.__setattr__(self, "matrix", a)

    @property
    def H(self) -> "ModeOperator":
        return ModeOperator(self.spec, self.matrix.conj().T)

    def __matmul__(self, other):
        return ModeOperator(self.spec, self.matrix @ _mat(other))

    def __add__(self, other):
        return ModeOperator(self.spec, self.matrix + _mat(other))

    def __sub__(self, other):
        return ModeOperator(self.spec, self.matrix - _mat(other))

    def __mul__(self, c):
        return ModeOperator(self.spec, c * self.matrix)

    __rmul__ = __mul__

    def __neg__(self):
        return ModeOperator(self.spec, -self.matrix)

    def commutator(self, other):
        b = _mat(other)
        return ModeOperator(self.spec, self.matrix @ b - b @ self.matrix)

    def restrict(self, n_safe) -> np.ndarray:
        return restrict(self.spec, self.matrix, n_safe)


def _mat(x):
    return x.matrix if isinstance(x, ModeOperator) else np.asarray(x)


def identity(spec) -> ModeOperator:
    return ModeOperator(spec, np.eye(spec.dim))


def _single_mode_lowering(n_max):
    return np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1)


def ladder(spec: QuantumLatticeSpec, j: int, kind: str = "annihilate") -> ModeOperator:
    """``a_j`` or ``a_j^+`` for mode index ``j`` (``k = 2 pi j / L``)."""
    if kind not in ("create", "annihilate"):
        raise ConfigError(f"kind must be 'create' or 'annihilate', got {kind!r}")
    pos = spec.mode_position(j)
    a = _single_mode_lowering(spec.n_max)
    eye = np.eye(spec.n_max + 1)
    mats = [a if i == pos else eye for i in range(spec.modes)]
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    if kind == "create":
        out = out.T
    return ModeOperator(spec, out)


def _lowering_ops(spec):
    return np.array([ladder(spec, int(j)).matrix for j in spec.mode_indices])


def safe_level(spec: QuantumLatticeSpec, factors: int) -> int:
    """Largest total occupation ``n_safe`` exact under ``factors`` ladder operators.

    A product of ``F`` ladder operators links ``|n>`` and ``|n'>`` through
    intermediate levels at most ``(n + n' + F) / 2``; requiring this to stay
    within ``n_max`` for all ``n, n' <= n_safe`` of matching parity gives
    ``n_safe = floor((2 n_max + 1 - F) / 2)``.
    """
    n_safe = (2 * spec.n_max + 1 - factors) // 2
    if n_safe < 0:
        raise TruncationError(
            f"{factors} field factors reach the occupation cutoff n_max={spec.n_max}; "
            f"need n_max >= {math.ceil((factors - 1) / 2)}"
        )
    return n_safe


def safe_indices(spec, n_safe) -> np.ndarray:
    return np.nonzero(spec.total_number <= n_safe)[0]


def restrict(spec, matrix, n_safe) -> np.ndarray:
    idx = safe_indices(spec, n_safe)
    return np.asarray(matrix)[np.ix_(idx, idx)]


# -- free field and commutator function -------------------------------------


def _phase(spec, t, x):
    """``k.x`` for every retained mode; ``t``/``x`` broadcast."""
    t = np.asarray(t, dtype=float)[..., None]
    x = np.asarray(x, dtype=float)[..., None]
    return spec.omega * (t - spec.t0) - spec.k * x


def _field_arrays(spec, t, x, lowering=None):
    """``phi_I`` matrices for broadcast arrays ``t``, ``x`` (shape ``(..., D, D)``)."""
    if lowering is None:
        lowering = _lowering_ops(spec)
    amp = 1.0 / np.sqrt(2 * spec.omega * spec.volume)
    c = amp * np.exp(-1j * _phase(spec, t, x))  # (..., M)
    A = np.tensordot(c, lowering, axes=([-1], [0]))
    return A + np.conj(np.swapaxes(A, -1, -2))


def free_field_op(spec: QuantumLatticeSpec, t: float, x: float = 0.0) -> ModeOperator:
    """``phi_I(t, x)``; requires ``t >= t0``."""
    if t < spec.t0:
        raise ConfigError(f"t: must be >= t0={spec.t0}, got {t}")
    return ModeOperator(spec, _field_arrays(spec, t, x))


def pauli_jordan(spec: QuantumLatticeSpec, z0, z=0.0):
    """``Delta(z) = -i sum_k sin(w_k z0 - k z) / (w_k V)``, a purely imaginary scalar."""
    z0 = np.asarray(z0, dtype=float)
    z = np.asarray(z, dtype=float)
    ph = spec.omega * z0[..., None] - spec.k * z[..., None]
    val = -1j * np.asarray((np.sin(ph) / spec.omega).sum(axis=-1)) / spec.volume
    return complex(val) if np.ndim(val) == 0 else val


def retarded_kernel_op(spec: QuantumLatticeSpec, z0, z=0.0, kernel="plus"):
    """``kernel_sign * i * theta(z0) * Delta(z)`` (real)."""
    sign = _kernel_sign(kernel)
    z0 = np.asarray(z0, dtype=float)
    val = sign * 1j * np.where(z0 > 0, 1.0, 0.0) * pauli_jordan(spec, z0, z)
    return np.real(val)


def _kernel_sign(kernel):
    if kernel not in KERNELS:
        raise ConfigError(f"kernel: unknown {kernel!r}, choose from {sorted(KERNELS)}")
    return KERNELS[kernel]


# -- time quadrature --------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Nodes ``t0 + j h``, ``j = 0 .. steps`` on ``[t0, t]``."""

    t0: float
    t: float
    steps: int

    def __post_init__(self):
        problems = []
        check_integer(problems, "dtau steps", self.steps, minimum=1)
        if self.t < self.t0:
            problems.append(f"t: must be >= t0={self.t0}, got {self.t}")
        raise_if(problems)

    @property
    def h(self):
        return (self.t - self.t0) / self.steps

    @property
    def nodes(self):
        return self.t0 + self.h * np.arange(self.steps + 1)

    @property
    def weights(self):
        """Trapezoid weights over the whole interval."""
        w = np.full(self.steps + 1, self.h)
        w[0] = w[-1] = self.h / 2
        return w

    @cached_property
    def cumulative_weights(self):
        """``W[j, k]``: trapezoid weight of node ``k`` in the integral over ``[t0, t_j]``."""
        n = self.steps + 1
        W = np.tril(np.full((n, n), self.h))
        for j in range(n):
            W[j, 0] = W[j, j] = self.h / 2
        W[0, 0] = 0.0
        return W


def time_grid(spec, t, dtau):
    """Grid with ``round((t - t0) / dtau)`` steps (at least one)."""
    if dtau <= 0:
        raise ConfigError(f"dtau: must be > 0, got {dtau}")
    steps = max(1, int(round((t - spec.t0) / dtau)))
    return TimeGrid(spec.t0, t, steps)


# -- tree operators ---------------------------------------------------------


class _Context:
    """Field matrices at every (time node, site) pair, shared by all trees."""

    def __init__(self, spec, tg: TimeGrid, method, kernel):
        if method not in ("modal", "direct"):
            raise ConfigError(f"method: unknown {method!r}, choose 'modal' or 'direct'")
        self.spec, self.tg, self.method = spec, tg, method
        self.sign = _kernel_sign(kernel)
        self.kernel = kernel
        self.lowering = _lowering_ops(spec)
        T, X = np.meshgrid(tg.nodes, spec.site_coordinates, indexing="ij")
        self.T, self.X = T, X
        self.phi = _field_arrays(spec, T, X, self.lowering)  # (nt, ns, D, D)
        self.memo = {}

    def grid_operator(self, b):
        """``phi_hat(b)`` at every node and site, shape ``(nt, ns, D, D)``."""
        if b.key in self.memo:
            return self.memo[b.key]
        if b.is_leaf:
            out = self.phi
        else:
            P = self.product(b)
            out = self.integrate(P, self.T, self.X, cumulative=True)
        self.memo[b.key] = out
        return out

    def product(self, b):
        kids = ptree.decompose(b)
        P = self.grid_operator(kids[0])
        for c in kids[1:]:
            P = P @ self.grid_operator(c)  # order as written
        return P

    def integrate(self, P, t_tgt, x_tgt, cumulative):
        """``-int dy0 sum_y cellvol G(x - y) P(y)`` at target points.

        ``cumulative``: targets are the grid nodes (``t_tgt[j]`` with
        integration up to node ``j``); otherwise a single point at the last node.
        """
        spec, tg = self.spec, self.tg
        cv = spec.cell_volume
        if self.method == "direct":
            if cumulative:
                W = tg.cumulative_weights  # (nt, nt)
                z0 = tg.nodes[:, None] - tg.nodes[None, :]
                z = spec.site_coordinates[:, None] - spec.site_coordinates[None, :]
                K = retarded_kernel_op(spec, z0[:, :, None, None], z[None, None], self.kernel)
                # out[j, s] = -cv sum_{k, r} W[j, k] K[j, k, s, r] P[k, r]
                return -cv * np.einsum("jk,jksr,krab->jsab", W, K, P)
            w = tg.weights
            z0 = tg.t - tg.nodes
            z = x_tgt - spec.site_coordinates
            K = retarded_kernel_op(spec, z0[:, None], z[None, :], self.kernel)
            return -cv * np.einsum("k,kr,krab->ab", w, K, P)
        # modal: sin(A - B) = sin A cos B - cos A sin B with B the source phase
        B = _phase(spec, self.T, self.X)  # (nt, ns, M)
        cB, sB = np.cos(B), np.sin(B)
        Cs = np.einsum("krm,krab->kmab", cB, P)
        Ss = np.einsum("krm,krab->kmab", sB, P)
        pref = -self.sign * cv / (spec.omega * spec.volume)  # (M,)
        if cumulative:
            W = tg.cumulative_weights
            Cc = np.einsum("jk,kmab->jmab", W, Cs)
            Sc = np.einsum("jk,kmab->jmab", W, Ss)
            A = _phase(spec, t_tgt, x_tgt)  # (nt, ns, M)
            return np.einsum("m,jsm,jmab->jsab", pref, np.sin(A), Cc) - np.einsum(
                "m,jsm,jmab->jsab", pref, np.cos(A), Sc
            )
        w = tg.weights
        Cc = np.einsum("k,kmab->mab", w, Cs)
        Sc = np.einsum("k,kmab->mab", w, Ss)
        A = _phase(spec, tg.t, x_tgt)  # (M,)
        return np.einsum("m,mab->ab", pref * np.sin(A), Cc) - np.einsum("m,mab->ab", pref * np.cos(A), Sc)

    def point_operator(self, b, x):
        """``phi_hat(b)`` at ``(t, x)`` with ``t`` the last node."""
        if b.is_leaf:
            return _field_arrays(self.spec, self.tg.t, x, self.lowering)
        return self.integrate(self.product(b), None, x, cumulative=False)


def _check_tree_order(spec, order):
    """Tree operators of order ``n`` are products of ``(p - 1) n + 1`` fields."""
    return safe_level(spec, (spec.p - 1) * order + 1)


def tree_operator(b, spec: QuantumLatticeSpec, t, x=0.0, dtau=0.05, method="modal", kernel="minus"):
    """Quantised tree coefficient ``phi_hat(b)(t, x)``.

    The leaf is the free field; a grafted tree is
    ``-int_{t0}^{t} dy0 sum_y cellvol G(x - y) phi_hat(b1)(y) ... phi_hat(bp)(y)``
    with the product kept in child order and trapezoid time quadrature.
    ``method="modal"`` splits the kernel into mode sums (fast);
    ``"direct"`` evaluates it at every pair of points.
    """
    if b.arity not in (None, spec.p):
        raise ConfigError(f"tree arity {b.arity} does not match p={spec.p}")
    _check_tree_order(spec, b.size)
    ctx = _Context(spec, time_grid(spec, t, dtau), method, kernel)
    return ModeOperator(spec, ctx.point_operator(b, x))


def tree_order_sum(spec, m, t, x=0.0, dtau=0.05, method="modal", kernel="minus", ctx=None):
    """``sum_{|b| = m} phi_hat(b)(t, x)`` as a matrix."""
    _check_tree_order(spec, m)
    if ctx is None:
        ctx = _Context(spec, time_grid(spec, t, dtau), method, kernel)
    acc = np.zeros((spec.dim, spec.dim), dtype=complex)
    for b in ptree.enumerate_trees(spec.p, m):
        acc = acc + ctx.point_operator(b, x)
    return acc


# -- Dyson series -----------------------------------------------------------


def interaction_hamiltonians(spec, tg: TimeGrid, lowering=None):
    """``H_I(t_j) = sum_y cellvol phi_I(t_j, y)^(p+1) / (p+1)`` at every node."""
    T, X = np.meshgrid(tg.nodes, spec.site_coordinates, indexing="ij")
    phi = _field_arrays(spec, T, X, lowering)
    powp = np.linalg.matrix_power(phi, spec.p + 1)
    return spec.cell_volume * powp.sum(axis=1) / (spec.p + 1)


def dyson_terms(spec, tg: TimeGrid, order, rule="rectangle", H=None):
    """``[U_0, ..., U_order]``, the time-ordered integrals of ``H_I`` products.

    ``U_a = int_{t > tau_1 > ... > tau_a > t0} H_I(tau_1) ... H_I(tau_a)``.
    ``rule="rectangle"`` sums over strictly decreasing node indices with
    trapezoid node weights; ``"trapezoid"`` nests the cumulative trapezoid
    rule.  Coupling and factors of ``i`` are applied by the caller.
    """
    if rule not in SIMPLEX_RULES:
        raise ConfigError(f"rule: unknown {rule!r}, choose from {SIMPLEX_RULES}")
    safe_level(spec, (spec.p + 1) * order)
    if H is None:
        H = interaction_hamiltonians(spec, tg)
    nt = tg.steps + 1
    D = spec.dim
    eye = np.broadcast_to(np.eye(D, dtype=complex), (nt, D, D))
    A = [np.array(eye)]
    w = tg.weights
    for _ in range(order):
        prev = A[-1]
        if rule == "rectangle":
            cur = np.zeros_like(prev)
            for j in range(1, nt):
                cur[j] = cur[j - 1] + w[j] * H[j] @ prev[j - 1]
            # node 0 may also open the chain when the previous factor is empty
            if prev is A[0]:
                cur = cur + w[0] * H[0]
        else:
            cur = np.einsum("jk,kab->jab", tg.cumulative_weights, H @ prev)
        A.append(cur)
    return [a[-1] for a in A]


def dyson_U(spec, t, order, dtau=0.05, lam=1.0, u_sign=+1, rule="rectangle") -> ModeOperator:
    """``sum_{a <= order} (u_sign i lam)^a U_a`` at time ``t``."""
    if t < spec.t0:
        raise ConfigError(f"t: must be >= t0={spec.t0}, got {t}")
    terms = dyson_terms(spec, time_grid(spec, t, dtau), order, rule)
    acc = np.zeros((spec.dim, spec.dim), dtype=complex)
    for a, Ua in enumerate(terms):
        acc = acc + (u_sign * 1j * lam) ** a * Ua
    return ModeOperator(spec, acc)


def unitarity_component(terms, m, u_sign=+1):
    """Order-``m`` coefficient of ``U U^+`` built from Dyson terms."""
    acc = 0
    for r in range(m + 1):
        s = m - r
        acc = acc + (u_sign * 1j) ** r * (-u_sign * 1j) ** s * (terms[r] @ terms[s].conj().T)
    return acc


def conjugated_component(terms, phi_x, m, u_sign=+1):
    """Order-``m`` coefficient of ``U^+ phi U``: ``(u_sign i)^m sum (-1)^r U_r^+ phi U_s``."""
    acc = 0
    for r in range(m + 1):
        s = m - r
        acc = acc + (-1) ** r * (terms[r].conj().T @ phi_x @ terms[s])
    return (u_sign * 1j) ** m * acc


def heisenberg_field(spec, t, x=0.0, order=2, dtau=0.05, lam=None, u_sign=+1, rule="rectangle"):
    """Graded components ``[C_0, ..., C_order]`` of ``U^+ phi_I(t, x) U``.

    With ``lam`` given, returns the truncated sum ``sum lam^m C_m`` instead.
    """
    safe_level(spec, (spec.p + 1) * order + 1)
    terms = dyson_terms(spec, time_grid(spec, t, dtau), order, rule)
    phi_x = free_field_op(spec, t, x).matrix
    comps = [ModeOperator(spec, conjugated_component(terms, phi_x, m, u_sign)) for m in range(order + 1)]
    if lam is None:
        return comps
    acc = identity(spec) * 0
    for m, c in enumerate(comps):
        acc = acc + c * lam**m
    return acc


# -- verification -----------------------------------------------------------


def unitarity_deviation(spec, t, m, dtau, rule="rectangle"):
    """Max entry of ``[U U^+]_m - delta_{0m} Id`` on the safe subspace."""
    n_safe = safe_level(spec, (spec.p + 1) * m)
    terms = dyson_terms(spec, time_grid(spec, t, dtau), m, rule)
    comp = unitarity_component(terms, m)
    if m == 0:
        comp = comp - np.eye(spec.dim)
    return float(np.abs(restrict(spec, comp, n_safe)).max())


@dataclass
class RefinementReport:
    order: int
    dtaus: list
    deviations: list
    rate: float | None
    rate_stderr: float | None
    exact: bool

    def to_dict(self):
        return {
            "order": self.order,
            "dtau": list(self.dtaus),
            "deviation": list(self.deviations),
            "fitted_rate": self.rate,
            "rate_stderr": self.rate_stderr,
            "exact": self.exact,
        }


EXACT_TOL = 1e-12


def _refinement(order, dtaus, devs):
    scale = 1.0
    exact = all(d <= EXACT_TOL * scale for d in devs)
    rate = err = None
    if not exact and all(d > 0 for d in devs) and len(devs) >= 2:
        fit = fit_loglog(dtaus, devs)
        rate = fit.slope
        err = None if math.isnan(fit.stderr) else fit.stderr
    return RefinementReport(order, list(dtaus), list(devs), rate, err, exact)


def refinement_levels(dtau, levels):
    return [dtau / 2**k for k in range(levels)]


def verify_unitarity(spec, t, m, dtau=0.0625, levels=3, rule="rectangle") -> RefinementReport:
    dts = refinement_levels(dtau, levels)
    return _refinement(m, dts, [unitarity_deviation(spec, t, m, h, rule) for h in dts])


def heisenberg_deviations(spec, t, x, m, dtau, kernel="minus", method="modal", rule="rectangle"):
    """Safe-subspace deviation between tree sum and conjugated field at order ``m``.

    Returns ``{u_sign: deviation}`` for both signs of ``U`` together with
    the norm of the tree sum.
    """
    F = max((spec.p + 1) * m + 1, (spec.p - 1) * m + 1)
    n_safe = safe_level(spec, F)
    tg = time_grid(spec, t, dtau)
    ctx = _Context(spec, tg, method, kernel)
    lhs = tree_order_sum(spec, m, t, x, ctx=ctx)
    H = interaction_hamiltonians(spec, tg, ctx.lowering)
    terms = dyson_terms(spec, tg, m, rule, H=H)
    phi_x = _field_arrays(spec, t, x, ctx.lowering)
    out = {}
    for sgn in (+1, -1):
        rhs = conjugated_component(terms, phi_x, m, sgn)
        out[sgn] = float(np.abs(restrict(spec, lhs - rhs, n_safe)).max())
    return out, float(np.abs(restrict(spec, lhs, n_safe)).max())


def verify_heisenberg_identity(spec, t, x=0.0, orders=(0, 1, 2), dtau=0.0625, levels=3, kernel="minus",
                   method="modal", rule="rectangle"):
    """Order-by-order comparison of tree sums with the conjugated free field.

    For each order, deviations are computed for both signs of ``U`` at
    ``levels`` halvings of ``dtau``.  The sign consistent with ``kernel``
    is reported as ``selected``; the other is the negative control.
    """
    expected = -_kernel_sign(kernel)
    dts = refinement_levels(dtau, levels)
    per_order = {}
    for m in orders:
        rows = [heisenberg_deviations(spec, t, x, m, h, kernel, method, rule) for h in dts]
        devs = {s: [r[0][s] for r in rows] for s in (+1, -1)}
        per_order[m] = {
            "selected": _refinement(m, dts, devs[expected]),
            "control": _refinement(m, dts, devs[-expected]),
            "tree_sum_size": rows[-1][1],
        }
    passing = None
    if 1 in per_order:
        d_sel = per_order[1]["selected"].deviations[-1]
        d_ctl = per_order[1]["control"].deviations[-1]
        passing = expected if d_sel < d_ctl else -expected
    return {"kernel": kernel, "expected_u_sign": expected, "passing_u_sign": passing, "orders": per_order}
