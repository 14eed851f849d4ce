"""Small input-validation helpers in the spirit of ``sklearn.utils.validation``.

Checks accumulate problems into a list so callers can raise one
:class:`ConfigError` naming every bad key at once.
"""
import math
import numbers

import numpy as np

from .exceptions import ConfigError


def is_integer(x):
    return isinstance(x, numbers.Integral) and not isinstance(x, bool)


def check_integer(problems, name, value, minimum=None):
    if not is_integer(value):
        problems.append(f"{name}: expected an integer, got {value!r}")
        return
    if minimum is not None and value < minimum:
        problems.append(f"{name}: must be >= {minimum}, got {value}")


def check_positive(problems, name, value, allow_zero=False):
    if not isinstance(value, numbers.Real) or isinstance(value, bool) or not math.isfinite(value):
        problems.append(f"{name}: expected a finite real number, got {value!r}")
        return
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        problems.append(f"{name}: must be {bound}, got {value}")


def check_real(problems, name, value):
    if not isinstance(value, numbers.Real) or isinstance(value, bool) or not math.isfinite(value):
        problems.append(f"{name}: expected a finite real number, got {value!r}")


def n_steps(T, dt, tol=1e-9):
    """``T / dt`` as an integer, or ``None`` if ``T`` is not a multiple of ``dt``."""
    r = T / dt
    k = round(r)
    if k < 1 or abs(r - k) > tol * max(1.0, r):
        return None
    return int(k)


def check_time_grid(problems, T, dt, T_name="T", dt_name="dt"):
    before = len(problems)
    check_positive(problems, T_name, T)
    check_positive(problems, dt_name, dt)
    if len(problems) == before and n_steps(T, dt) is None:
        problems.append(f"{T_name}: {T} is not an integer multiple of {dt_name}={dt}")


def raise_if(problems):
    if problems:
        raise ConfigError(problems)


def check_finite_array(values, name="values"):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ConfigError(f"{name}: contains non-finite entries")
    return values
