"""Real scalar fields on a periodic lattice ``[0, L)^d``.

Spatial derivatives are spectral (discrete Fourier transform); time is
sampled uniformly.  The two solution operators of the Klein-Gordon operator
``(d_t^2 - Laplacian + m^2)`` live here:

* :func:`free_evolve` / :func:`free_field` -- homogeneous equation with given
  Cauchy data, exact per Fourier mode;
* :func:`solve_retarded` -- inhomogeneous equation ``(box + m^2) u = -s`` with
  zero Cauchy data, by per-mode Duhamel quadrature (trapezoidal rule).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .exceptions import ConfigError, ResolutionError, ShapeError
from .validation import check_integer, check_positive, n_steps, raise_if


@dataclass(frozen=True)
class GridSpec:
    """Periodic lattice with ``n`` points per axis on a box of side ``L``."""

    d: int = 1
    n: int = 64
    L: float = 2 * np.pi
    m: float = 1.0

    def __post_init__(self):
        problems = []
        before = len(problems)
        check_integer(problems, "dims", self.d, minimum=1)
        if len(problems) == before and self.d > 3:
            problems.append(f"dims: at most 3 spatial dimensions supported, got {self.d}")
        before = len(problems)
        check_integer(problems, "grid_n", self.n, minimum=2)
        if len(problems) == before and self.n % 2:
            problems.append(f"grid_n: must be even, got {self.n}")
        check_positive(problems, "box_L", self.L)
        check_positive(problems, "mass", self.m)
        raise_if(problems)

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def size(self):
        return self.n**self.d

    @property
    def volume(self):
        return self.L**self.d

    @property
    def spacing(self):
        return self.L / self.n

    @property
    def cell_volume(self):
        return self.spacing**self.d

    def coordinates(self):
        """Site coordinates, one array of ``shape`` per axis."""
        x = np.arange(self.n) * self.spacing
        return np.meshgrid(*([x] * self.d), indexing="ij")

    def wavevectors(self):
        """Wavevector components ``2 pi j / L`` in FFT order, one array per axis."""
        k = 2 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)
        return np.meshgrid(*([k] * self.d), indexing="ij")

    def k_squared(self):
        return sum(k**2 for k in self.wavevectors())

    def omega(self):
        return np.sqrt(self.k_squared() + self.m**2)


def dispersion(grid: GridSpec, k) -> np.ndarray | float:
    """``omega_k = sqrt(|k|^2 + m^2)``.

    ``k`` is a scalar, a wavevector (last axis = components) or an array of
    squared norms when passed through :meth:`GridSpec.k_squared`.
    """
    k = np.asarray(k, dtype=float)
    k2 = k**2 if k.ndim == 0 else np.sum(k**2, axis=-1)
    w = np.sqrt(k2 + grid.m**2)
    return float(w) if np.ndim(w) == 0 else w


def _spatial_axes(grid, arr):
    return tuple(range(arr.ndim - grid.d, arr.ndim))


def to_spectral(grid, values):
    return np.fft.fftn(values, axes=_spatial_axes(grid, np.asarray(values)))


def from_spectral(grid, coeffs):
    return np.fft.ifftn(coeffs, axes=_spatial_axes(grid, coeffs)).real


@dataclass(frozen=True)
class FieldSnapshot:
    grid: GridSpec
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ShapeError(f"snapshot has shape {v.shape}, grid expects {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigError("snapshot values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def to_spectral(self):
        return to_spectral(self.grid, self.values)

    @classmethod
    def from_spectral(cls, grid, coeffs, t=0.0):
        return cls(grid, from_spectral(grid, coeffs), t)

    def __add__(self, other):
        _same_grid(self.grid, other.grid)
        return FieldSnapshot(self.grid, self.values + other.values, self.t)

    def __mul__(self, c):
        return FieldSnapshot(self.grid, c * self.values, self.t)

    __rmul__ = __mul__


@dataclass(frozen=True)
class CauchyData:
    phi0: FieldSnapshot
    phi1: FieldSnapshot

    def __post_init__(self):
        _same_grid(self.phi0.grid, self.phi1.grid)

    @property
    def grid(self):
        return self.phi0.grid

    @classmethod
    def from_arrays(cls, grid, phi0, phi1):
        return cls(FieldSnapshot(grid, phi0), FieldSnapshot(grid, phi1))

    def norm(self, q):
        """``||phi0||_{H^(q+1)} + ||phi1||_{H^q}``, the data size entering the bounds."""
        return sobolev_norm(self.phi0, q + 1) + sobolev_norm(self.phi1, q)

    def __mul__(self, c):
        return CauchyData(self.phi0 * c, self.phi1 * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class TimeSampledField:
    """Samples ``values[j]`` at ``t_j = j * dt`` for ``j = 0 .. nt - 1``.

    ``d1`` and ``d2`` optionally carry the first and second time derivatives
    at the same samples.
    """

    grid: GridSpec
    dt: float
    values: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt: must be > 0, got {self.dt}")
        for name in ("values", "d1", "d2"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.ndim != self.grid.d + 1 or arr.shape[1:] != self.grid.shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected (nt,) + {self.grid.shape}")
            if name != "values" and arr.shape[0] != np.shape(self.values)[0]:
                raise ShapeError(f"{name} has {arr.shape[0]} samples, values has {np.shape(self.values)[0]}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def nt(self):
        return self.values.shape[0]

    @property
    def T(self):
        return (self.nt - 1) * self.dt

    @property
    def times(self):
        return np.arange(self.nt) * self.dt

    @property
    def has_derivatives(self):
        return self.d1 is not None and self.d2 is not None

    def snapshot(self, j) -> FieldSnapshot:
        return FieldSnapshot(self.grid, self.values[j], j * self.dt)

    def compatible(self, other):
        _same_grid(self.grid, other.grid)
        if other.nt != self.nt or not np.isclose(other.dt, self.dt, rtol=1e-12, atol=0):
            raise ShapeError(
                f"time sampling mismatch: ({self.nt}, {self.dt}) vs ({other.nt}, {other.dt})"
            )

    def __add__(self, other):
        self.compatible(other)
        d1 = d2 = None
        if self.has_derivatives and other.has_derivatives:
            d1, d2 = self.d1 + other.d1, self.d2 + other.d2
        return TimeSampledField(self.grid, self.dt, self.values + other.values, d1, d2)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, c):
        c = float(c)
        d1 = None if self.d1 is None else c * self.d1
        d2 = None if self.d2 is None else c * self.d2
        return TimeSampledField(self.grid, self.dt, c * self.values, d1, d2)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, grid, T, dt, derivatives=True):
        nt = _sample_count(T, dt)
        z = np.zeros((nt,) + grid.shape)
        return cls(grid, dt, z, z if derivatives else None, z if derivatives else None)

    def subsample(self, every):
        """Keep every ``every``-th sample."""
        sl = slice(None, None, every)
        return TimeSampledField(
            self.grid,
            self.dt * every,
            self.values[sl],
            None if self.d1 is None else self.d1[sl],
            None if self.d2 is None else self.d2[sl],
        )


def _same_grid(a, b):
    if a != b:
        raise ShapeError(f"grid mismatch: {a} vs {b}")


def _sample_count(T, dt):
    k = n_steps(T, dt)
    if k is None:
        raise ConfigError(f"horizon_T: {T} is not an integer multiple of dt={dt}")
    return k + 1


def free_evolve(data: CauchyData, t: float):
    """Free Klein-Gordon evolution of ``data`` to time ``t``.

    Returns ``(phi, dphi/dt, d2phi/dt2)`` as snapshots.
    """
    grid = data.grid
    w = grid.omega()
    a0 = data.phi0.to_spectral()
    a1 = data.phi1.to_spectral()
    c, s = np.cos(w * t), np.sin(w * t)
    u = s / w * a1 + c * a0
    du = c * a1 - w * s * a0
    ddu = -(w**2) * u
    return tuple(FieldSnapshot.from_spectral(grid, x, t) for x in (u, du, ddu))


def free_field(data: CauchyData, T: float, dt: float) -> TimeSampledField:
    """:func:`free_evolve` sampled at ``j * dt`` on ``[0, T]``, with derivatives."""
    grid = data.grid
    nt = _sample_count(T, dt)
    t = np.arange(nt) * dt
    w = grid.omega()
    tw = t.reshape((nt,) + (1,) * grid.d) * w
    c, s = np.cos(tw), np.sin(tw)
    a0 = data.phi0.to_spectral()
    a1 = data.phi1.to_spectral()
    u = s / w * a1 + c * a0
    du = c * a1 - w * s * a0
    ddu = -(w**2) * u
    return TimeSampledField(
        grid, dt, from_spectral(grid, u), from_spectral(grid, du), from_spectral(grid, ddu)
    )


def solve_retarded(source: TimeSampledField) -> TimeSampledField:
    """Solve ``(box + m^2) u = -source`` with ``u(0) = du/dt(0) = 0``.

    Per Fourier mode ``u(t) = -int_0^t sin(w (t - s)) / w * s(s) ds``.  The
    kernel is split as ``sin(wt) cos(ws) - cos(wt) sin(ws)`` so that both
    pieces are cumulative trapezoidal integrals on the sample grid; this is
    exactly the trapezoidal rule applied to the full integrand at every
    ``t_j``.  Derivatives are obtained by differentiating under the integral:
    ``du/dt = -int_0^t cos(w (t - s)) s(s) ds`` and
    ``d2u/dt2 = -s(t) - w^2 u``.
    """
    grid = source.grid
    nt = source.nt
    w = grid.omega()
    shat = to_spectral(grid, source.values)
    tw = source.times.reshape((nt,) + (1,) * grid.d) * w
    c, s = np.cos(tw), np.sin(tw)
    A = cumulative_trapezoid(c * shat, dx=source.dt, axis=0, initial=0)
    B = cumulative_trapezoid(s * shat, dx=source.dt, axis=0, initial=0)
    u = -(s * A - c * B) / w
    du = -(c * A + s * B)
    ddu = -shat - w**2 * u
    return TimeSampledField(
        grid, source.dt, from_spectral(grid, u), from_spectral(grid, du), from_spectral(grid, ddu)
    )


def retarded_kernel(grid: GridSpec, z0: float, z: np.ndarray) -> np.ndarray:
    """Lattice retarded Green function ``theta(z0) V^-1 sum_k sin(z0 w_k)/w_k e^{i k.z}``.

    ``z`` holds spatial separations (last axis = components for d > 1).
    Convolving ``-kernel`` with a source over ``[0, t] x box`` reproduces
    :func:`solve_retarded`.
    """
    if z0 < 0:
        return np.zeros(np.shape(z)[: np.ndim(z) - (grid.d > 1)])
    ks = [k.ravel() for k in grid.wavevectors()]
    k2 = sum(k**2 for k in ks)
    w = np.sqrt(k2 + grid.m**2)
    z = np.asarray(z, dtype=float)
    if grid.d == 1:
        phase = np.multiply.outer(z, ks[0])
    else:
        phase = sum(np.multiply.outer(z[..., a], ks[a]) for a in range(grid.d))
    return (np.cos(phase) * (np.sin(z0 * w) / w)).sum(axis=-1) / grid.volume


def _pad_spectrum(grid, coeffs, M):
    n = grid.n
    out = np.zeros(coeffs.shape[: coeffs.ndim - grid.d] + (M,) * grid.d, dtype=complex)
    idx = np.concatenate([np.arange(n // 2), np.arange(M - n // 2, M)])
    src = np.concatenate([np.arange(n // 2), np.arange(n - n // 2, n)])
    lead = coeffs.ndim - grid.d
    ix_out = np.ix_(*([np.arange(s) for s in coeffs.shape[:lead]] + [idx] * grid.d))
    ix_src = np.ix_(*([np.arange(s) for s in coeffs.shape[:lead]] + [src] * grid.d))
    out[ix_out] = coeffs[ix_src]
    return out


def _truncate_spectrum(grid, coeffs, M):
    n = grid.n
    idx = np.concatenate([np.arange(n // 2), np.arange(M - n // 2, M)])
    lead = coeffs.ndim - grid.d
    ix = np.ix_(*([np.arange(s) for s in coeffs.shape[:lead]] + [idx] * grid.d))
    return coeffs[ix]


def dealiased_product(grid: GridSpec, factors: Sequence[np.ndarray]) -> np.ndarray:
    """Product of ``len(factors)`` band-limited arrays on a grid padded by ``(p+1)/2``.

    Trailing ``d`` axes are spatial; leading axes are carried along.
    """
    p = len(factors)
    n = grid.n
    M = int(np.ceil(n * (p + 1) / 2))
    M += M % 2
    scale = (M / n) ** grid.d
    prod = None
    for f in factors:
        fp = np.fft.ifftn(_pad_spectrum(grid, to_spectral(grid, f), M), axes=_spatial_axes(grid, f)).real * scale
        prod = fp if prod is None else prod * fp
    coeffs = np.fft.fftn(prod, axes=_spatial_axes(grid, prod))
    return from_spectral(grid, _truncate_spectrum(grid, coeffs, M) / scale)


def pointwise_product(fields: Sequence[TimeSampledField], dealias: bool = False) -> TimeSampledField:
    """Site-wise, sample-wise product of fields sharing grid and time sampling.

    Factors are multiplied left to right.  With ``dealias=True`` the product
    is formed on a zero-padded grid and truncated back.
    """
    fields = list(fields)
    if not fields:
        raise ShapeError("pointwise_product needs at least one field")
    first = fields[0]
    for f in fields[1:]:
        first.compatible(f)
    if dealias and len(fields) > 1:
        vals = dealiased_product(first.grid, [f.values for f in fields])
    else:
        vals = first.values.copy()
        for f in fields[1:]:
            vals = vals * f.values
    return TimeSampledField(first.grid, first.dt, vals)


def _norm_weights(grid, q):
    return (1.0 + grid.k_squared()) ** q


def sobolev_norms(grid: GridSpec, values: np.ndarray, q) -> np.ndarray:
    """Discrete ``H^q`` norm over the trailing spatial axes.

    ``||f||^2 = (V / N^2) sum_k (1 + |k|^2)^q |fhat_k|^2`` with ``N = n^d``,
    which reduces to ``int |f|^2 dx`` for ``q = 0`` (Parseval).
    """
    values = np.asarray(values, dtype=float)
    fh = to_spectral(grid, values)
    wts = _norm_weights(grid, q)
    ax = _spatial_axes(grid, values)
    s = np.sum(wts * np.abs(fh) ** 2, axis=ax)
    return np.sqrt(s * grid.volume) / grid.size


def sobolev_norm(snapshot: FieldSnapshot, q) -> float:
    return float(sobolev_norms(snapshot.grid, snapshot.values, q))


def physical_l2_norm(snapshot: FieldSnapshot) -> float:
    return float(np.sqrt(np.sum(snapshot.values**2) * snapshot.grid.cell_volume))


def time_derivatives(field: TimeSampledField):
    """``(d1, d2)``: carried samples if present, else second-order differences."""
    if field.has_derivatives:
        return field.d1, field.d2
    if field.nt < 3:
        raise ResolutionError(f"need >= 3 time samples to difference, got {field.nt}")
    d1 = np.gradient(field.values, field.dt, axis=0, edge_order=2)
    d2 = np.gradient(d1, field.dt, axis=0, edge_order=2)
    return d1, d2


def triple_norm(field: TimeSampledField, q) -> float:
    """``max_t`` of ``||f||_{H^q}``, ``||df/dt||_{H^q}`` and ``||d2f/dt2||_{H^(q-1)}``."""
    d1, d2 = time_derivatives(field)
    g = field.grid
    a = sobolev_norms(g, field.values, q).max()
    b = sobolev_norms(g, d1, q).max()
    c = sobolev_norms(g, d2, q - 1).max()
    return float(max(a, b, c))


def sup_norm_in_time(field: TimeSampledField, q) -> float:
    """``max_t ||f(t)||_{H^q}`` of the values only."""
    return float(sobolev_norms(field.grid, field.values, q).max())


def laplacian(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    return from_spectral(grid, -grid.k_squared() * to_spectral(grid, values))


def klein_gordon_operator(field: TimeSampledField, use_carried=False) -> np.ndarray:
    """Discrete ``(box + m^2) field`` at the interior samples ``j = 1 .. nt - 2``.

    The time derivative is the centred second difference unless
    ``use_carried`` is set and the field carries ``d2`` samples.
    """
    if field.nt < 3:
        raise ResolutionError(f"need >= 3 time samples, got {field.nt}")
    g = field.grid
    v = field.values
    if use_carried and field.d2 is not None:
        dtt = field.d2[1:-1]
    else:
        dtt = (v[2:] - 2 * v[1:-1] + v[:-2]) / field.dt**2
    mid = v[1:-1]
    return dtt - laplacian(g, mid) + g.m**2 * mid


def snapshot_from_function(grid, fn, t=0.0):
    return FieldSnapshot(grid, fn(*grid.coordinates()), t)


# -- serialization ---------------------------------------------------------

_HEADER = "d,n,L,m,t"


def write_snapshot_csv(path, snap: FieldSnapshot):
    g = snap.grid
    with open(path, "w") as fh:
        fh.write(_HEADER + "\n")
        fh.write(f"{g.d},{g.n},{float(g.L)!r},{float(g.m)!r},{float(snap.t)!r}\n")
        for v in snap.values.ravel(order="C"):
            fh.write(f"{float(v)!r}\n")


def read_snapshot_csv(path) -> FieldSnapshot:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != _HEADER:
        raise ConfigError(f"{path}: missing header {_HEADER!r}")
    d, n, L, m, t = lines[1].split(",")
    grid = GridSpec(int(d), int(n), float(L), float(m))
    vals = np.array([float(x) for x in lines[2:]])
    if vals.size != grid.size:
        raise ShapeError(f"{path}: {vals.size} values for a grid of {grid.size} sites")
    return FieldSnapshot(grid, vals.reshape(grid.shape), float(t))


_BIN = struct.Struct("<4sii3d")
_MAGIC = b"KGFS"


def write_snapshot_binary(path, snap: FieldSnapshot):
    g = snap.grid
    with open(path, "wb") as fh:
        fh.write(_BIN.pack(_MAGIC, g.d, g.n, g.L, g.m, snap.t))
        fh.write(np.ascontiguousarray(snap.values, dtype="<f8").tobytes())


def read_snapshot_binary(path) -> FieldSnapshot:
    with open(path, "rb") as fh:
        head = fh.read(_BIN.size)
        if len(head) != _BIN.size:
            raise ConfigError(f"{path}: truncated header")
        magic, d, n, L, m, t = _BIN.unpack(head)
        if magic != _MAGIC:
            raise ConfigError(f"{path}: not a field snapshot file")
        grid = GridSpec(d, n, L, m)
        vals = np.frombuffer(fh.read(), dtype="<f8")
    if vals.size != grid.size:
        raise ShapeError(f"{path}: {vals.size} values for a grid of {grid.size} sites")
    return FieldSnapshot(grid, vals.reshape(grid.shape), t)


# -- algebra constant --------------------------------------------------------

ALGEBRA_FAMILY = (
    "constants; every pair of cos/sin plane waves with |j| <= K along axis 0; "
    "for each bandwidth B = 1..K, n_random pairs of independent Gaussian band-limited "
    "fields (|j| <= B per axis, numpy default_rng(seed)) and the squares of the first members"
)


def _band_limited(grid, K, rng):
    coeffs = np.zeros(grid.shape, dtype=complex)
    ks = np.fft.fftfreq(grid.n, 1.0 / grid.n)
    mask = np.ones(grid.shape, dtype=bool)
    for ax in np.meshgrid(*([ks] * grid.d), indexing="ij"):
        mask &= np.abs(ax) <= K
    coeffs[mask] = rng.standard_normal(mask.sum()) + 1j * rng.standard_normal(mask.sum())
    return from_spectral(grid, coeffs)


def estimate_algebra_constant(grid: GridSpec, q, bandwidth=None, n_random=32, seed=0):
    """Empirical ``sup ||fg||_{H^q} / (||f||_{H^q} ||g||_{H^q})`` over a fixed family.

    The family is described by ``ALGEBRA_FAMILY``; ``bandwidth`` (``K``)
    defaults to ``n // 8``.  This is an estimate of the algebra constant of
    the discrete torus norm, not a proven bound.
    """
    K = max(1, grid.n // 8) if bandwidth is None else int(bandwidth)
    K = min(K, grid.n // 2 - 1)
    coords = grid.coordinates()
    x = coords[0]
    kf = 2 * np.pi / grid.L
    fams = [np.ones(grid.shape)]
    for j in range(0, K + 1):
        fams.append(np.cos(j * kf * x))
        if j:
            fams.append(np.sin(j * kf * x))
    pairs = [(f, g) for i, f in enumerate(fams) for g in fams[i:]]
    rng = np.random.default_rng(seed)
    for B in range(1, K + 1):
        for _ in range(n_random):
            f = _band_limited(grid, B, rng)
            g = _band_limited(grid, B, rng)
            pairs += [(f, g), (f, f)]

    def nrm(v):
        return float(sobolev_norms(grid, v, q))

    best = 0.0
    for f, g in pairs:
        den = nrm(f) * nrm(g)
        if den > 0:
            best = max(best, nrm(f * g) / den)
    return best
