"""Independent references for the flow heat kernel.

* ``uniformization_heat`` expands H_t = e^{-t} sum_k t^k/k! A^k / mu(y) with
  A^k(x, y) read off a lumped chain: the walk from x only matters through the
  class (j, k) of its position, j the height of its confluent with x above x
  and k its depth below that confluent.
* ``mc_heat`` simulates the continuous-time walk that jumps to p(x) with
  probability 1/2 and to each son with probability 1/(2q).
"""
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import gammainc, gammaln

from config import EXACT_POWER_MAX_K, MC_BATCH, MC_SAMPLES, UNIFORMIZATION_K
from services.errors import DomainError, TruncationError
from services.tree_geometry import TreeParams, Vertex, confluent, distance, q_power

logger = logging.getLogger(__name__)

State = Tuple[int, int]


class OracleResult(NamedTuple):
    value: float
    error_bound: float
    meta: dict


def lumped_class(x: Vertex, y: Vertex) -> State:
    """(j, k): y sits k steps below p^j(x), off the path to x when j, k >= 1."""
    c = confluent(x, y)
    return c.level - x.level, c.level - y.level


def class_size(state: State, q: int) -> int:
    j, k = state
    if k == 0:
        return 1
    if j == 0:
        return q ** k
    return (q - 1) * q ** (k - 1)


def _class_size_parts(state: State, q: int) -> Tuple[int, int]:
    """class_size as (coefficient, power)."""
    j, k = state
    if k == 0:
        return 1, 0
    if j == 0:
        return 1, k
    return q - 1, k - 1


def _step(dist: Dict[State, object], q: int, exact: bool) -> Dict[State, object]:
    if exact:
        half, ray, side = Fraction(1, 2), Fraction(1, 2 * q), Fraction(q - 1, 2 * q)
    else:
        half, ray, side = 0.5, 1.0 / (2 * q), (q - 1) / (2.0 * q)
    new: Dict[State, object] = defaultdict(int)
    for (j, k), p in dist.items():
        if k >= 1:
            new[(j, k - 1)] += p * half
            new[(j, k + 1)] += p * half
        elif j == 0:
            new[(1, 0)] += p * half
            new[(0, 1)] += p * half
        else:
            new[(j + 1, 0)] += p * half
            new[(j - 1, 0)] += p * ray
            new[(j, 1)] += p * side
    return dict(new)


@lru_cache(maxsize=16)
def lumped_distributions(q: int, K: int, exact: bool) -> Tuple[Dict[State, object], ...]:
    """Law of the lumped chain after 0..K steps, started at (0, 0)."""
    dist: Dict[State, object] = {(0, 0): Fraction(1) if exact else 1.0}
    out = [dist]
    for _ in range(K):
        dist = _step(dist, q, exact)
        out.append(dist)
    return tuple(out)


def transition_power(x: Vertex, y: Vertex, k: int, tree: TreeParams, exact: Optional[bool] = None):
    """A^k(x, y), a Fraction when exact."""
    if k < 0:
        raise DomainError(f"power must be nonnegative, got {k}")
    exact = k <= EXACT_POWER_MAX_K if exact is None else exact
    state = lumped_class(x, y)
    p = lumped_distributions(tree.q, k, exact)[k].get(state, 0)
    if exact:
        return Fraction(p) / class_size(state, tree.q)
    coef, power = _class_size_parts(state, tree.q)
    return float(p) / coef * q_power(tree.q, -power)


def uniformization_heat(t: float, x: Vertex, y: Vertex, tree: TreeParams, K: int = UNIFORMIZATION_K,
                        radius: Optional[int] = None) -> OracleResult:
    """H_t(x, y) from the first K+1 terms of the uniformization series.

    The dropped terms are bounded by P(Poisson(t) > K) / mu(y), since every
    A^k(x, y) <= 1.
    """
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    d = distance(x, y)
    if K < d:
        raise TruncationError(f"order K={K} cannot reach distance {d}")
    if radius is None:
        radius = d + K
    if radius < d + K:
        raise TruncationError(f"radius {radius} < d + K = {d + K}; walks of length K leave the ball")
    q = tree.q
    exact = K <= EXACT_POWER_MAX_K
    state = lumped_class(x, y)
    coef, power = _class_size_parts(state, q)
    laws = lumped_distributions(q, K, exact)
    total = 0.0
    for k in range(d, K + 1):
        p = laws[k].get(state, 0)
        if not p:
            continue
        weight = 1.0 if (t == 0 and k == 0) else (0.0 if t == 0 else math.exp(k * math.log(t) - t - gammaln(k + 1.0)))
        total += weight * float(p)
    scale = q_power(q, -(power + y.level)) / coef
    bound = float(gammainc(K + 1, t)) * q_power(q, -y.level) if t > 0 else 0.0
    return OracleResult(total * scale, bound, {"K": K, "radius": radius, "exact": exact, "state": state})


# --- Monte Carlo ------------------------------------------------------

def _simulate(t: float, samples: int, rng: np.random.Generator, q: int) -> Tuple[np.ndarray, np.ndarray]:
    """Final lumped states of ``samples`` independent walks run for time t."""
    jumps = rng.poisson(t, size=samples)
    j = np.zeros(samples, dtype=np.int64)
    k = np.zeros(samples, dtype=np.int64)
    for step in range(int(jumps.max()) if samples else 0):
        active = jumps > step
        u = rng.random(samples)
        up = u < 0.5
        deep = k >= 1
        on_ray = (~deep) & (j >= 1)
        at_start = (~deep) & (j == 0)
        # inside a branch: up one or down one
        k = np.where(active & deep, np.where(up, k - 1, k + 1), k)
        # at p^j(x), j >= 1: up the path, back towards x, or into a side branch
        toward_x = u < 0.5 + 1.0 / (2 * q)
        j_new = np.where(up, j + 1, np.where(toward_x, j - 1, j))
        k_new = np.where(up | toward_x, 0, 1)
        j = np.where(active & on_ray, j_new, j)
        k = np.where(active & on_ray, k_new, k)
        # at x itself
        j = np.where(active & at_start & up, 1, j)
        k = np.where(active & at_start & ~up, 1, k)
    return j, k


def _batch_sizes(samples: int, batch: int) -> List[int]:
    sizes = [batch] * (samples // batch)
    if samples % batch:
        sizes.append(samples % batch)
    return sizes


def _run_batches(t: float, samples: int, seed: int, q: int, batch: int, workers: int, reducer):
    sizes = _batch_sizes(samples, batch)
    children = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(args):
        size, child = args
        j, k = _simulate(t, size, np.random.default_rng(child), q)
        return reducer(j, k)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(run, zip(sizes, children)))


def mc_heat(t: float, x: Vertex, y: Vertex, tree: TreeParams, samples: int = MC_SAMPLES, seed: int = 0,
            batch: int = MC_BATCH, workers: int = 1) -> OracleResult:
    """Monte Carlo estimate of H_t(x, y) with a three-standard-error bound."""
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    if samples < 1:
        raise DomainError("samples must be positive")
    state = lumped_class(x, y)
    hits = sum(_run_batches(t, samples, seed, tree.q, batch, workers,
                            lambda j, k: int(np.count_nonzero((j == state[0]) & (k == state[1])))))
    coef, power = _class_size_parts(state, tree.q)
    scale = q_power(tree.q, -(power + y.level)) / coef
    p_hat = hits / samples
    se = math.sqrt(p_hat * (1.0 - p_hat) / samples)
    logger.info("mc_heat t=%g state=%s hits=%d/%d", t, state, hits, samples)
    return OracleResult(p_hat * scale, 3.0 * se * scale,
                        {"samples": samples, "hits": hits, "standard_error": se * scale, "seed": seed})


def mc_level_mean(t: float, x: Vertex, tree: TreeParams, samples: int = MC_SAMPLES, seed: int = 0,
                  batch: int = MC_BATCH, workers: int = 1) -> OracleResult:
    """Mean level of the walk at time t, which stays at l(x)."""
    sums = _run_batches(t, samples, seed, tree.q, batch, workers,
                        lambda j, k: (float(np.sum(j - k)), float(np.sum((j - k) ** 2)), float(np.sum(j + k))))
    s1 = sum(s[0] for s in sums)
    s2 = sum(s[1] for s in sums)
    reach = sum(s[2] for s in sums) / samples
    mean = s1 / samples
    var = max(s2 / samples - mean * mean, 0.0)
    return OracleResult(x.level + mean, 3.0 * math.sqrt(var / samples), {"samples": samples, "seed": seed, "mean_distance": reach})


def detailed_balance_gap(x: Vertex, y: Vertex, k: int, tree: TreeParams) -> Fraction:
    """mu(x) A^k(x, y) - mu(y) A^k(y, x), exactly."""
    q = Fraction(tree.q)
    return q ** x.level * transition_power(x, y, k, tree, exact=True) - q ** y.level * transition_power(y, x, k, tree, exact=True)
