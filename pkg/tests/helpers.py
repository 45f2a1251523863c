"""Shared test utilities."""

import numpy as np

from codedconv.latency import LayerGeometry, PhaseProfile
from codedconv.optimizer import SystemParams
from codedconv.tensor import ConvSpec

# one "criterion N: PASS|FAIL ..." line per acceptance check, printed at session end
ACCEPTANCE_LINES: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def random_params(rng, n):
    """A random layer and profile spanning several orders of magnitude per rate."""
    K = int(rng.choice([1, 3, 5, 7]))
    S = int(rng.integers(1, min(K, 2) + 1))
    spec = ConvSpec(int(rng.integers(1, 513)), int(rng.integers(1, 513)), K, S,
                    int(rng.integers(0, K // 2 + 1)))
    side = int(rng.integers(max(K, 7), 225))
    geo = LayerGeometry.from_unpadded(spec, side, side)

    def lu(a, b):
        return log_uniform(rng, a, b)

    prof = PhaseProfile(lu(1e7, 1e11), lu(1e-12, 1e-8), lu(1e6, 1e11), lu(1e-12, 1e-8),
                        lu(1e5, 1e9), lu(1e-10, 1e-6), lu(1e5, 1e9), lu(1e-10, 1e-6))
    return SystemParams(n, geo, prof)
