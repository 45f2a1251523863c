"""Choosing k: the log-approximate latency objective and its analysis.

L(k) relaxes the floor in W_O/k and replaces each per-phase order
statistic with N*theta + (N/mu) ln(n/(n-k)).  Up to a constant it equals

    P(k) = h1 k + h2/k + h3 ln(n/(n-k))/k + h4 ln(n/(n-k))

which is convex on [1, n) for n >= 3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .latency import LayerGeometry, PhaseProfile, harmonic, relaxed_sizes

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SystemParams:
    n: int
    geometry: LayerGeometry
    profile: PhaseProfile

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one worker")

    def with_profile(self, **kw) -> "SystemParams":
        return SystemParams(self.n, self.geometry, self.profile.replace(**kw))

    def with_n(self, n: int) -> "SystemParams":
        return SystemParams(n, self.geometry, self.profile)


@dataclass(frozen=True)
class AnalysisCoeffs:
    I_ov: float
    I_W: float
    O: float
    N_cmp_t: float
    h1: float
    h2: float
    h3: float
    h4: float
    h5: float

    @property
    def R(self) -> float:
        return self.h2 / self.h3


def coefficients(params: SystemParams) -> AnalysisCoeffs:
    g, p = params.geometry, params.profile
    s = g.spec
    I_ov = s.in_channels * g.height * (s.kernel_size - s.stride)
    I_W = s.in_channels * g.height * g.out_width * s.stride
    O = s.out_channels * g.out_height * g.out_width
    N_cmp_t = 2.0 * s.out_channels * g.out_height * s.in_channels * s.kernel_size ** 2 * g.out_width
    return AnalysisCoeffs(
        I_ov=I_ov, I_W=I_W, O=O, N_cmp_t=N_cmp_t,
        h1=2.0 * p.unit_cost("m") * (params.n * I_ov + O),
        h2=4 * I_W * p.theta_rec + 4 * O * p.theta_sen + N_cmp_t * p.theta_cmp,
        h3=4 * I_W / p.mu_rec + 4 * O / p.mu_sen + N_cmp_t / p.mu_cmp,
        h4=4 * I_ov / p.mu_rec,
        h5=4 * I_ov * p.theta_rec,
    )


def _log_term(n, k):
    return math.log(n / (n - k))


def objective_L(k: float, params: SystemParams) -> float:
    """Approximate expected latency of the coded layer at (real) k."""
    n = params.n
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= n:
        raise ValueError(f"L diverges at k >= n (k={k}, n={n})")
    z = relaxed_sizes(params.geometry, k, n)
    p = params.profile
    theta_sum = z.N_rec * p.theta_rec + z.N_cmp * p.theta_cmp + z.N_sen * p.theta_sen
    mu_sum = z.N_rec / p.mu_rec + z.N_cmp / p.mu_cmp + z.N_sen / p.mu_sen
    return (z.N_enc + z.N_dec) * p.unit_cost("m") + theta_sum + mu_sum * _log_term(n, k)


def objective_P(k: float, n: int, c: AnalysisCoeffs) -> float:
    lg = _log_term(n, k)
    return c.h1 * k + c.h2 / k + c.h3 * lg / k + c.h4 * lg


def objective_offset(params: SystemParams) -> float:
    """L(k) - P(k), independent of k."""
    c = coefficients(params)
    return 2.0 * params.n * c.I_W * params.profile.unit_cost("m") + c.h5


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-6,
                   max_iter: int = 500) -> float:
    """Minimiser of a unimodal f on [lo, hi] to absolute tolerance ``tol``."""
    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
    x = 0.5 * (a + b)
    # the optimum may sit on an endpoint of a monotone objective
    return min((lo, hi, x), key=f)


@dataclass(frozen=True)
class SplitChoice:
    k_relaxed: float
    k_circ: int
    L_relaxed: float
    L_circ: float


def minimize_L(params: SystemParams, tol: float = 1e-6) -> SplitChoice:
    n = params.n
    if n < 2:
        raise ValueError("need n >= 2 workers for a coded split")
    hi = n - max(1e-9 * n, 1e-9)
    f = lambda k: objective_L(k, params)  # noqa: E731
    k_rel = golden_section(f, 1.0, hi, tol)
    cands = sorted({c for c in (math.floor(k_rel), math.ceil(k_rel)) if 1 <= c <= n - 1})
    k_circ = min(cands, key=lambda c: (f(c), c))
    return SplitChoice(k_rel, int(k_circ), f(k_rel), f(k_circ))


def argmin_L_integer(params: SystemParams) -> int:
    ks = range(1, params.n)
    return min(ks, key=lambda k: (objective_L(k, params), k))


def L_curve(params: SystemParams, ks=None) -> list[tuple[float, float]]:
    ks = range(1, params.n) if ks is None else ks
    return [(k, objective_L(k, params)) for k in ks]


def stationarity_sides(k: float, n: int, c: AnalysisCoeffs) -> tuple[float, float]:
    """Left and right sides of the first-order condition dP/dk = 0."""
    lg = _log_term(n, k)
    left = -c.h1 + c.h2 / k ** 2
    right = c.h4 / (n - k) + c.h3 * (-lg / k ** 2 + 1.0 / (k * (n - k)))
    return left, right


def stationarity_residual(k: float, n: int, c: AnalysisCoeffs) -> float:
    left, right = stationarity_sides(k, n, c)
    return abs(left - right) / max(abs(left), abs(right), 1e-300)


# -- coded vs uncoded ---------------------------------------------------------

def uncoded_expected(params: SystemParams, omit_terms: bool = False) -> float:
    """Expected uncoded latency; ``omit_terms`` drops the h4 term."""
    c = coefficients(params)
    n = params.n
    lg = math.log(n)
    h4 = 0.0 if omit_terms else c.h4
    return c.h2 / n + c.h3 * lg / n + h4 * lg + c.h5


def uncoded_terms(params: SystemParams) -> dict:
    c = coefficients(params)
    n = params.n
    return {"h2": c.h2 / n, "h3": c.h3 * math.log(n) / n, "h4": c.h4 * math.log(n), "h5": c.h5}


def coded_expected_omitted(n: int, k: float, c: AnalysisCoeffs) -> float:
    """L(k) without encode/decode and h4."""
    return c.h2 / k + c.h3 * _log_term(n, k) / k + c.h5


def uncoded_expected_omitted(n: int, c: AnalysisCoeffs) -> float:
    return c.h2 / n + c.h3 * math.log(n) / n + c.h5


def straggler_gain(n: int, k: float) -> float:
    """h(n, k): coding beats uncoded at k exactly when h(n, k) > R."""
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got n={n}, k={k}")
    return (k * math.log(n) - n * _log_term(n, k)) / (n - k)


def k_sub_star(n: int) -> float:
    return n - math.e


@dataclass(frozen=True)
class Comparison:
    n: int
    R: float
    k_sub_star: float
    h_at_k_sub_star: float
    uncoded: float
    coded: float
    delta: float
    reduction: float
    best_integer_k: int
    best_integer_reduction: float


def compare_omitted(n: int, c: AnalysisCoeffs) -> Comparison:
    ks = k_sub_star(n)
    tu = uncoded_expected_omitted(n, c)
    tc = coded_expected_omitted(n, ks, c)
    best = min(range(1, n), key=lambda k: coded_expected_omitted(n, k, c))
    tb = coded_expected_omitted(n, best, c)
    return Comparison(n, c.R, ks, straggler_gain(n, ks), tu, tc, tu - tc, (tu - tc) / tu,
                      best, (tu - tb) / tu)


def optimal_comparison(params: SystemParams) -> Comparison:
    return compare_omitted(params.n, coefficients(params))


def coeffs_for_ratio(R: float, h3: float = 1.0, h5: float = 0.0) -> AnalysisCoeffs:
    """Bare coefficients with h2/h3 = R, for closed-form comparisons."""
    return AnalysisCoeffs(0.0, 0.0, 0.0, 0.0, h1=0.0, h2=R * h3, h3=h3, h4=0.0, h5=h5)


@dataclass(frozen=True)
class FailureComparison:
    n: int
    k: int
    harmonic_increase: float  # in units of the per-subtask N/mu
    normalized_increase: float  # harmonic_increase / k: units of the whole-layer N/mu
    coded_increase_s: float
    R_cmp: float
    uncoded_increase_lower_bound_s: float

    @property
    def coded_wins(self) -> bool:
        return self.coded_increase_s < self.uncoded_increase_lower_bound_s


def order_stat_increase(n: int, k: int) -> float:
    """E[T_(n-1):k] - E[T_n:k] for unit exponentials."""
    if not 1 <= k <= n - 1:
        raise ValueError(f"need 1 <= k <= n-1, got n={n}, k={k}")
    return (harmonic(n - 1) - harmonic(n - 1 - k)) - (harmonic(n) - harmonic(n - k))


def failure_comparison(params: SystemParams, k: int = None) -> FailureComparison:
    """Latency increase from losing one worker, coded (at k) vs uncoded."""
    n = params.n
    if k is None:
        k = int(round(k_sub_star(n)))
    if k >= n:
        raise ValueError("coded failure analysis needs k < n")
    c = coefficients(params)
    inc = order_stat_increase(n, k)
    coded_s = c.h3 / k * inc
    t_u = uncoded_expected_omitted(n, c)
    e_cmp = c.N_cmp_t / n * params.profile.unit_cost("cmp")
    r_cmp = e_cmp / t_u
    return FailureComparison(n, k, inc, inc / k, coded_s, r_cmp, r_cmp * t_u)
