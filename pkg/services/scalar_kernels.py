"""One-dimensional primitives: the heat kernel on Z, phi and the profiles s_n.

The heat kernel of f(j) - (f(j-1) + f(j+1))/2 on Z is e^{-t} I_j(t). Sequences
of it are evaluated by

* the power series for t <= BESSEL_SERIES_MAX_T,
* Miller's downward recurrence normalised by e^{-t}(I_0 + 2 sum I_j) = 1
  up to BESSEL_MILLER_MAX_T,
* ``scipy.special.ive`` up to BESSEL_ASYMPTOTIC_MIN_T,
* the large-argument expansions beyond that, where ive returns nan.
"""
import logging
import math
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln, ive

from config import (
    BESSEL_ASYMPTOTIC_MIN_T,
    BESSEL_MILLER_MAX_T,
    BESSEL_SERIES_MAX_T,
    PROFILE_GRID_POINTS,
    REFINE_TOL,
)
from services.errors import DomainError

logger = logging.getLogger(__name__)

_RESCALE_AT = 1e250
_SERIES_EPS = 1e-17
_HANKEL_MAX_TERMS = 40

# u_k(p) = p^k * poly_k(p^2) / denominator_k, Debye polynomials k = 1..4
_DEBYE_U = (
    ((3.0, -5.0), 24.0),
    ((81.0, -462.0, 385.0), 1152.0),
    ((30375.0, -369603.0, 765765.0, -425425.0), 414720.0),
    ((4465125.0, -94121676.0, 349922430.0, -446185740.0, 185910725.0), 39813120.0),
)


class ProfileSup(NamedTuple):
    sup: float
    argmax_t: float


def _series_sequence(t: float, n_max: int) -> np.ndarray:
    """e^{-t} I_j(t), j = 0..n_max, by the power series (vectorised over j)."""
    j = np.arange(n_max + 1, dtype=float)
    if t == 0.0:
        out = np.zeros(n_max + 1)
        out[0] = 1.0
        return out
    half = 0.5 * t
    log_lead = j * math.log(half) - gammaln(j + 1.0) - t
    term = np.ones_like(j)
    total = np.ones_like(j)
    k = 0
    while True:
        term = term * (half * half) / ((k + 1.0) * (k + 1.0 + j))
        total += term
        k += 1
        if np.all(term <= _SERIES_EPS * total):
            break
    return np.exp(log_lead) * total


def _miller_sequence(t: float, n_max: int) -> np.ndarray:
    """e^{-t} I_j(t), j = 0..n_max, by downward recurrence from a safe start order."""
    start = max(n_max + 20, int(math.ceil(math.sqrt(n_max * n_max + 80.0 * t))) + 20)
    values = [0.0] * (start + 2)
    values[start] = 1e-30
    two_over_t = 2.0 / t
    for j in range(start, 0, -1):
        nxt = values[j + 1] + j * two_over_t * values[j]
        values[j - 1] = nxt
        if nxt > _RESCALE_AT:
            for i in range(j - 1, start + 1):
                values[i] /= _RESCALE_AT
    seq = np.asarray(values[: start + 1])
    norm = seq[0] + 2.0 * seq[1:].sum()
    return seq[: n_max + 1] / norm


def _asymptotic_sequence(t: float, n_max: int) -> np.ndarray:
    """e^{-t} I_j(t), j = 0..n_max, for large t.

    Order 0 sums the Hankel series. Orders j >= 1 use the uniform expansion
    in j through u_4, whose remainder is O((j^2 + t^2)^{-5/2}) relative.
    """
    out = np.empty(n_max + 1)
    term = total = 1.0
    for k in range(1, _HANKEL_MAX_TERMS + 1):
        term *= (2 * k - 1) ** 2 / (8.0 * k * t)
        total += term
        if term <= _SERIES_EPS * total:
            break
    out[0] = total / math.sqrt(2.0 * math.pi * t)
    if n_max == 0:
        return out
    nu = np.arange(1, n_max + 1, dtype=float)
    root = np.hypot(nu, t)
    p2 = (nu / root) ** 2
    # nu*eta - t = nu^2/(t + root) - nu*asinh(nu/t), free of cancellation
    log_lead = nu * nu / (t + root) - nu * np.arcsinh(nu / t) - 0.5 * math.log(2.0 * math.pi) - 0.5 * np.log(root)
    series = np.ones_like(nu)
    for k, (coeffs, denominator) in enumerate(_DEBYE_U, start=1):
        series += np.polynomial.polynomial.polyval(p2, coeffs) / denominator / root ** k
    out[1:] = np.exp(log_lead) * series
    return out


def bessel_sequence(t: float, n_max: int) -> np.ndarray:
    """Array [e^{-t} I_0(t), ..., e^{-t} I_{n_max}(t)]."""
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    n_max = int(n_max)
    if t <= BESSEL_SERIES_MAX_T:
        return _series_sequence(float(t), n_max)
    if t <= BESSEL_MILLER_MAX_T:
        return _miller_sequence(float(t), n_max)
    if t < BESSEL_ASYMPTOTIC_MIN_T:
        return ive(np.arange(n_max + 1), float(t))
    return _asymptotic_sequence(float(t), n_max)


def bessel_table(t_values: np.ndarray, n_max: int) -> np.ndarray:
    """Rows of ``bessel_sequence`` for every t in t_values, shape (len(t), n_max+1)."""
    t_values = np.asarray(t_values, dtype=float)
    table = np.empty((t_values.size, n_max + 1))
    large = (t_values > BESSEL_MILLER_MAX_T) & (t_values < BESSEL_ASYMPTOTIC_MIN_T)
    for i in np.flatnonzero(~large):
        table[i] = bessel_sequence(t_values[i], n_max)
    if large.any():
        orders = np.arange(n_max + 1)[None, :]
        table[large] = ive(orders, t_values[large][:, None])
    return table


def heat_kernel_Z(t: float, j: int) -> float:
    """h^Z_t(j) = e^{-t} I_j(t)."""
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    j = abs(int(j))
    if t == 0:
        return 1.0 if j == 0 else 0.0
    return float(bessel_sequence(t, j)[j])


def bessel_total_mass(t: float) -> float:
    """e^{-t}(I_0 + 2 sum_{j>=1} I_j), summed far enough to capture the mass."""
    n_max = int(math.ceil(math.sqrt(80.0 * max(t, 1.0)))) + 30
    seq = bessel_sequence(t, n_max)
    return float(seq[0] + 2.0 * seq[1:].sum())


def bessel_comparison_rhs(t: float, j: int) -> float:
    """Two-sided approximation of h^Z_t(j) from the uniform Bessel asymptotics."""
    root = math.sqrt(j * j + t * t)
    log_val = j * j / (t + root) - 0.25 * math.log(1.0 + j * j + t * t)
    if j:
        log_val -= j * math.asinh(j / t)
    return math.exp(log_val)


def phi(t):
    """-t + sqrt(1+t^2) + log t - log(1 + sqrt(1+t^2)), in a cancellation-free form."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise DomainError("phi is defined for t > 0 only")
    val = 1.0 / (t_arr + np.sqrt(1.0 + t_arr * t_arr)) - np.arcsinh(1.0 / t_arr)
    return float(val) if np.ndim(val) == 0 else val


def log_s_profile(n: int, t):
    if n < 0:
        raise DomainError(f"n must be nonnegative, got {n}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise DomainError("s_n is defined for t > 0 only")
    big = n + 1.0
    root = np.sqrt(big * big + t_arr * t_arr)
    val = (
        math.log(big)
        + big * big / (t_arr + root)
        - big * np.arcsinh(big / t_arr)
        - np.log(t_arr)
        - 0.25 * np.log(1.0 + big * big + t_arr * t_arr)
    )
    return float(val) if np.ndim(val) == 0 else val


def s_profile(n: int, t):
    """s_n(t), evaluated in the log domain."""
    val = np.exp(log_s_profile(n, t))
    return float(val) if np.ndim(val) == 0 else val


def s_profile_rescaled(n: int, t: float) -> float:
    """e^{(n+1) phi(t)} / (t (1 + (n+1)^2 + t^2 (n+1)^2)^{1/4}), equal to s_n(t(n+1))."""
    big = n + 1.0
    log_val = big * phi(t) - math.log(t) - 0.25 * math.log(1.0 + big * big * (1.0 + t * t))
    return math.exp(log_val)


def sup_profile(n: int, weighted: bool = False, points: int = PROFILE_GRID_POINTS) -> ProfileSup:
    """Global maximum over t > 0 of s_n(t), or of (n/t) s_n(t) when weighted.

    A log grid on [1e-4 (n+1), 1e4 (n+1)^2] brackets the maximiser; bounded
    Brent refinement on log t finishes it.
    """
    if n < 0:
        raise DomainError(f"n must be nonnegative, got {n}")
    if weighted and n == 0:
        return ProfileSup(0.0, float("nan"))

    def log_objective(u):
        t = np.exp(u)
        val = log_s_profile(n, t)
        if weighted:
            val = val + math.log(n) - u
        return val

    u = np.linspace(math.log(1e-4 * (n + 1)), math.log(1e4 * (n + 1) ** 2), points)
    values = log_objective(u)
    i = int(np.argmax(values))
    lo, hi = u[max(i - 1, 0)], u[min(i + 1, points - 1)]
    res = minimize_scalar(lambda v: -log_objective(v), bounds=(lo, hi), method="bounded",
                          options={"xatol": REFINE_TOL})
    best_u, best = u[i], values[i]
    if res.success and -res.fun > best:
        best_u, best = float(res.x), float(-res.fun)
    logger.debug("sup_profile n=%d weighted=%s -> %.6g at t=%.6g", n, weighted, math.exp(best), math.exp(best_u))
    return ProfileSup(math.exp(best), math.exp(best_u))
