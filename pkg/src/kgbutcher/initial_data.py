"""Built-in families of Cauchy data used by the experiments and the CLI."""
import numpy as np

from .exceptions import ConfigError
from .lattice import CauchyData, FieldSnapshot, GridSpec, _band_limited


def gaussian_bump(grid: GridSpec, amplitude=1.0, width=None, center=None):
    width = grid.L / 10 if width is None else width
    center = grid.L / 2 if center is None else center
    r2 = sum((x - center) ** 2 for x in grid.coordinates())
    return FieldSnapshot(grid, amplitude * np.exp(-r2 / (2 * width**2)))


def single_mode(grid: GridSpec, amplitude=1.0, mode=1, phase="cos"):
    x = grid.coordinates()[0]
    arg = 2 * np.pi * mode * x / grid.L
    vals = np.cos(arg) if phase == "cos" else np.sin(arg)
    return FieldSnapshot(grid, amplitude * vals)


def band_limited(grid: GridSpec, amplitude=1.0, bandwidth=3, seed=0):
    """Random real field with modes ``|j| <= bandwidth``, max-abs scaled to ``amplitude``."""
    v = _band_limited(grid, bandwidth, np.random.default_rng(seed))
    return FieldSnapshot(grid, amplitude * v / np.abs(v).max())


def zero(grid: GridSpec, amplitude=0.0, **_):
    return FieldSnapshot(grid, np.zeros(grid.shape))


FAMILIES = {
    "gaussian": gaussian_bump,
    "mode": single_mode,
    "bandlimited": band_limited,
    "zero": zero,
}


def parse_family(grid, spec: str, seed=0):
    """Build a snapshot from ``name[:amplitude[:extra]]``.

    ``gaussian:A:width``, ``mode:A:j``, ``bandlimited:A:K``, ``zero``.
    """
    parts = spec.split(":")
    name = parts[0]
    if name not in FAMILIES:
        raise ConfigError(f"unknown initial-data family {name!r}; choose from {sorted(FAMILIES)}")
    try:
        amp = float(parts[1]) if len(parts) > 1 else 1.0
        extra = float(parts[2]) if len(parts) > 2 else None
    except ValueError as exc:
        raise ConfigError(f"bad initial-data spec {spec!r}: {exc}") from None
    if name == "gaussian":
        return gaussian_bump(grid, amp, width=extra)
    if name == "mode":
        return single_mode(grid, amp, mode=1 if extra is None else int(extra))
    if name == "bandlimited":
        return band_limited(grid, amp, bandwidth=3 if extra is None else int(extra), seed=seed)
    return zero(grid)


def normalized_cauchy(phi0: FieldSnapshot, phi1: FieldSnapshot, q, target=1.0) -> CauchyData:
    """Rescale both snapshots so ``||phi0||_{H^(q+1)} + ||phi1||_{H^q} = target``."""
    data = CauchyData(phi0, phi1)
    s = data.norm(q)
    if s == 0:
        return data
    return data * (target / s)


def scenario_data(grid: GridSpec, q=1, target=1.0, bandwidth=3, seed=7):
    """Band-limited Cauchy pair used by the convergence studies."""
    phi0 = band_limited(grid, 1.0, bandwidth, seed)
    phi1 = band_limited(grid, 1.0, bandwidth, seed + 1)
    return normalized_cauchy(phi0, phi1, q, target)
