"""Luby Transform coding over feature-map partitions (comparison baseline).

Rank is tracked over GF(2) on bitmask encoding vectors.  Once k
independent vectors have arrived, the sources are recovered by a real
solve over exactly those symbols: a 0/1 matrix that is invertible mod 2
has an odd determinant, so it is invertible over the reals too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mds import solve_partial_pivot

DEFAULT_C = 0.03
DEFAULT_DELTA = 0.5


class LTCorruptionError(ValueError):
    """A repeated encoding vector arrived with a different payload."""


def robust_soliton(k: int, c: float = DEFAULT_C, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """Probabilities of degrees 1..k (index 0 is degree 1)."""
    if k < 1 or c <= 0 or not 0 < delta < 1:
        raise ValueError(f"invalid robust soliton parameters k={k}, c={c}, delta={delta}")
    d = np.arange(1, k + 1, dtype=np.float64)
    rho = np.empty(k)
    rho[0] = 1.0 / k
    rho[1:] = 1.0 / (d[1:] * (d[1:] - 1))
    R = c * math.log(k / delta) * math.sqrt(k)
    tau = np.zeros(k)
    if R > 0:
        pivot = int(math.floor(k / R))
        low = min(pivot - 1, k)
        if low >= 1:
            tau[:low] = R / (d[:low] * k)
        if 1 <= pivot <= k:
            tau[pivot - 1] = max(0.0, R * math.log(R / delta) / k)
    mu = rho + tau
    return mu / mu.sum()


def ideal_soliton(k: int) -> np.ndarray:
    rho = np.empty(k)
    rho[0] = 1.0 / k
    d = np.arange(2, k + 1, dtype=np.float64)
    rho[1:] = 1.0 / (d * (d - 1))
    return rho


@dataclass(frozen=True)
class EncodedSymbol:
    mask: int  # bit i set <=> source i is in the sum
    payload: np.ndarray

    @property
    def degree(self) -> int:
        return bin(self.mask).count("1")

    def encoding_vector(self, k: int) -> np.ndarray:
        return np.array([(self.mask >> i) & 1 for i in range(k)], dtype=np.uint8)

    def to_bytes(self, k: int) -> bytes:
        """k-bit vector (little-endian bit order, whole bytes), then float32 payload."""
        nbytes = (k + 7) // 8
        return self.mask.to_bytes(nbytes, "little") + np.asarray(self.payload, "<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, k: int) -> "EncodedSymbol":
        nbytes = (k + 7) // 8
        if len(data) < nbytes or (len(data) - nbytes) % 4:
            raise ValueError("malformed encoded symbol")
        mask = int.from_bytes(data[:nbytes], "little")
        if mask >> k:
            raise ValueError("encoding vector has bits beyond k")
        payload = np.frombuffer(data, dtype="<f4", offset=nbytes).astype(np.float32)
        return cls(mask, payload)


class LTEncoder:
    """Stream of encoded symbols drawn from a seeded generator."""

    def __init__(self, sources, c: float = DEFAULT_C, delta: float = DEFAULT_DELTA, rng=None):
        rows = [np.asarray(s, dtype=np.float64).reshape(-1) for s in sources]
        if len({r.size for r in rows}) > 1:
            raise ValueError("sources must have equal length")
        self.sources = np.stack(rows)
        self.k = len(rows)
        self.dist = robust_soliton(self.k, c, delta)
        self.rng = np.random.default_rng(rng)

    def next_mask(self) -> int:
        d = int(self.rng.choice(self.k, p=self.dist)) + 1
        chosen = self.rng.choice(self.k, size=d, replace=False)
        return sum(1 << int(i) for i in chosen)

    def symbol_for(self, mask: int) -> EncodedSymbol:
        idx = [i for i in range(self.k) if (mask >> i) & 1]
        return EncodedSymbol(mask, self.sources[idx].sum(axis=0))

    def next(self) -> EncodedSymbol:
        return self.symbol_for(self.next_mask())


def lt_encode_next(sources, encoder_state: LTEncoder = None, **kw) -> EncodedSymbol:
    """Draw one symbol; pass an LTEncoder to keep a stream going."""
    enc = encoder_state or LTEncoder(sources, **kw)
    return enc.next()


class LTDecoder:
    """Incremental decoder.  ``add`` returns the sources once rank hits k."""

    def __init__(self, k: int, atol: float = 1e-6):
        self.k = k
        self.atol = atol
        self._basis: dict[int, int] = {}  # leading bit -> reduced mask
        self._accepted: list[EncodedSymbol] = []
        self._seen: dict[int, np.ndarray] = {}
        self.received = 0
        self._result: Optional[np.ndarray] = None

    @property
    def rank(self) -> int:
        return len(self._basis)

    @property
    def done(self) -> bool:
        return self._result is not None

    def _reduce(self, mask: int) -> int:
        while mask:
            top = mask.bit_length() - 1
            row = self._basis.get(top)
            if row is None:
                return mask
            mask ^= row
        return 0

    def add(self, symbol: EncodedSymbol) -> Optional[np.ndarray]:
        self.received += 1
        payload = np.asarray(symbol.payload, dtype=np.float64)
        prior = self._seen.get(symbol.mask)
        if prior is not None:
            if not np.allclose(prior, payload, atol=self.atol, rtol=1e-6):
                raise LTCorruptionError(f"payload mismatch for repeated vector {symbol.mask:#x}")
            return self._result
        self._seen[symbol.mask] = payload
        if self.done:
            return self._result
        reduced = self._reduce(symbol.mask)
        if reduced:
            self._basis[reduced.bit_length() - 1] = reduced
            self._accepted.append(EncodedSymbol(symbol.mask, payload))
            if self.rank == self.k:
                self._result = self._solve()
        return self._result

    def _solve(self) -> np.ndarray:
        a = np.array([s.encoding_vector(self.k) for s in self._accepted], dtype=np.float64)
        b = np.stack([s.payload for s in self._accepted])
        return solve_partial_pivot(a, b)


def lt_decode(symbols, k: int):
    """Feed symbols until decodable.

    Returns ``(sources, used)`` on success or ``(None, rank)`` when the
    stream ran out first.
    """
    dec = LTDecoder(k)
    for sym in symbols:
        out = dec.add(sym)
        if out is not None:
            return out, dec.received
    return None, dec.rank


def symbols_to_decode(k: int, rng, c: float = DEFAULT_C, delta: float = DEFAULT_DELTA,
                      limit: int = None) -> int:
    """Number of random encoding vectors drawn until GF(2) rank reaches k."""
    dist = robust_soliton(k, c, delta)
    basis: dict[int, int] = {}
    limit = limit or 50 * k + 100
    for count in range(1, limit + 1):
        d = int(rng.choice(k, p=dist)) + 1
        mask = 0
        for i in rng.choice(k, size=d, replace=False):
            mask |= 1 << int(i)
        while mask:
            top = mask.bit_length() - 1
            row = basis.get(top)
            if row is None:
                basis[top] = mask
                break
            mask ^= row
        if len(basis) == k:
            return count
    raise RuntimeError(f"rank stuck at {len(basis)} after {limit} symbols")


@dataclass(frozen=True)
class OverheadSummary:
    k: int
    trials: int
    mean: float
    p50: float
    p95: float
    max: int
    samples: np.ndarray


def lt_overhead_trial(k: int, trials: int, seed: int = 0, c: float = DEFAULT_C,
                      delta: float = DEFAULT_DELTA) -> OverheadSummary:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    n_d = np.array([symbols_to_decode(k, rng, c, delta) for _ in range(trials)])
    return OverheadSummary(k, trials, float(n_d.mean()), float(np.percentile(n_d, 50)),
                           float(np.percentile(n_d, 95)), int(n_d.max()), n_d)
