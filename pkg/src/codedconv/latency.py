"""Shift-exponential latency model and per-phase workload sizes.

A phase with scale N (FLOPs or bytes) takes N*theta + Exp(mean N/mu)
seconds.  mu is in work-units per second, theta in seconds per work-unit.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping

import numpy as np

from .split import SplitPlan
from .tensor import ConvSpec


class DegenerateFitError(ValueError):
    pass


@dataclass(frozen=True)
class ShiftExp:
    mu: float
    theta: float
    N: float = 1.0

    def __post_init__(self):
        if not self.mu > 0 or self.theta < 0 or not self.N > 0:
            raise ValueError(f"need mu > 0, theta >= 0, N > 0; got {self}")

    @property
    def shift(self) -> float:
        return self.N * self.theta

    @property
    def scale(self) -> float:
        return self.N / self.mu

    @property
    def mean(self) -> float:
        return self.shift + self.scale


def cdf(t, p: ShiftExp):
    t = np.asarray(t, dtype=np.float64)
    z = np.clip(t - p.shift, 0.0, None)
    out = -np.expm1(-z / p.scale)
    return out if out.ndim else float(out)


def quantile(p: ShiftExp, q):
    q = np.asarray(q, dtype=np.float64)
    if np.any(q < 0) or np.any(q >= 1):
        raise ValueError("quantile level must lie in [0, 1)")
    out = p.shift - p.scale * np.log1p(-q)
    return out if out.ndim else float(out)


def sample(p: ShiftExp, rng, size=None):
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    return quantile(p, rng.random(size))


def fit(samples, N: float = 1.0) -> ShiftExp:
    """Min/mean moment fit: shift from the minimum, rate from the excess mean."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size < 2:
        raise DegenerateFitError("need at least two samples")
    if np.any(x <= 0):
        raise ValueError("latency samples must be positive")
    lo, mean = x.min(), x.mean()
    if mean - lo <= 0:
        raise DegenerateFitError("all samples equal; straggling rate is unbounded")
    return ShiftExp(mu=N / (mean - lo), theta=lo / N, N=N)


def harmonic(m: int) -> float:
    return float(sum(1.0 / i for i in range(1, m + 1)))


def expected_kth_order_stat(n: int, k: int, p: ShiftExp) -> float:
    """E of the k-th smallest of n iid shift-exponentials (exact)."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got n={n}, k={k}")
    return p.shift + p.scale * (harmonic(n) - harmonic(n - k))


def approx_kth_order_stat(n: int, k: int, p: ShiftExp) -> float:
    """Log approximation N*theta + (N/mu) ln(n/(n-k)), valid for k < n."""
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got n={n}, k={k}")
    return p.shift + p.scale * math.log(n / (n - k))


PROFILE_KEYS = ("mu_m", "theta_m", "mu_cmp", "theta_cmp", "mu_rec", "theta_rec",
                "mu_sen", "theta_sen")


@dataclass(frozen=True)
class PhaseProfile:
    """Straggling (mu) and shift (theta) coefficients for each phase."""

    mu_m: float
    theta_m: float
    mu_cmp: float
    theta_cmp: float
    mu_rec: float
    theta_rec: float
    mu_sen: float
    theta_sen: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("mu") and not v > 0:
                raise ValueError(f"{f.name} must be > 0")
            if f.name.startswith("theta") and v < 0:
                raise ValueError(f"{f.name} must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping) -> "PhaseProfile":
        missing = [k for k in PROFILE_KEYS if k not in d]
        if missing:
            raise KeyError(f"profile is missing {missing}")
        return cls(**{k: float(d[k]) for k in PROFILE_KEYS})

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "PhaseProfile":
        return replace(self, **kw)

    def phase(self, name: str, N: float) -> ShiftExp:
        return ShiftExp(getattr(self, "mu_" + name), getattr(self, "theta_" + name), N)

    def unit_cost(self, name: str) -> float:
        """Expected seconds per work-unit: theta + 1/mu."""
        return getattr(self, "theta_" + name) + 1.0 / getattr(self, "mu_" + name)


@dataclass(frozen=True)
class WorkloadSizes:
    N_enc: float
    N_cmp: float
    N_rec: float
    N_sen: float
    N_dec: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LayerGeometry:
    """Padded input dims plus the layer; B is fixed at 1."""

    spec: ConvSpec
    height: int  # padded H_I
    width: int  # padded W_I

    @property
    def out_height(self) -> int:
        return (self.height - self.spec.kernel_size) // self.spec.stride + 1

    @property
    def out_width(self) -> int:
        return (self.width - self.spec.kernel_size) // self.spec.stride + 1

    @classmethod
    def from_unpadded(cls, spec: ConvSpec, height: int, width: int) -> "LayerGeometry":
        return cls(spec, height + 2 * spec.padding, width + 2 * spec.padding)

    def to_dict(self) -> dict:
        return {**self.spec.geometry(), "padded_height": self.height, "padded_width": self.width}

    @property
    def flops(self) -> float:
        s = self.spec
        return 2.0 * s.out_channels * self.out_height * self.out_width * s.in_channels * s.kernel_size ** 2


def phase_sizes(c_in: int, c_out: int, h_in: int, h_out: int, kernel: int, k: float, n: int,
                w_in_piece: float, w_out_piece: float, batch: int = 1) -> WorkloadSizes:
    cin_hw = batch * c_in * h_in
    cout_hw = batch * c_out * h_out
    return WorkloadSizes(
        N_enc=2.0 * k * n * cin_hw * w_in_piece,
        N_cmp=cout_hw * w_out_piece * 2.0 * c_in * kernel ** 2,
        N_rec=4.0 * cin_hw * w_in_piece,
        N_sen=4.0 * cout_hw * w_out_piece,
        N_dec=2.0 * k * k * cout_hw * w_out_piece,
    )


def sizes_for_widths(geo: LayerGeometry, k: float, n: int, w_in_piece: float,
                     w_out_piece: float) -> WorkloadSizes:
    s = geo.spec
    return phase_sizes(s.in_channels, s.out_channels, geo.height, geo.out_height,
                       s.kernel_size, k, n, w_in_piece, w_out_piece)


def workload_sizes(geo: LayerGeometry, plan: SplitPlan, n: int) -> WorkloadSizes:
    """Per-phase scales for one subtask of ``plan`` (floor already applied)."""
    return sizes_for_widths(geo, plan.k, n, plan.piece_width_in, plan.piece_width_out)


def relaxed_sizes(geo: LayerGeometry, k: float, n: int) -> WorkloadSizes:
    """Sizes with W_O/k left unfloored, as used by the analytic objective."""
    w_out = geo.out_width / k
    w_in = geo.spec.kernel_size + (w_out - 1) * geo.spec.stride
    return sizes_for_widths(geo, k, n, w_in, w_out)
