"""Equal-width output splitting and the matching overlapping input ranges."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

from .tensor import ConvSpec, GeometryError, output_dims


class InfeasibleSplitError(ValueError):
    pass


@dataclass(frozen=True)
class PieceRange:
    """Half-open output columns [a_out, b_out) and the input columns they read."""

    a_out: int
    b_out: int
    a_in: int
    b_in: int

    @property
    def width_out(self) -> int:
        return self.b_out - self.a_out

    @property
    def width_in(self) -> int:
        return self.b_in - self.a_in


def piece_for(kernel_size: int, stride: int, a_out: int, b_out: int) -> PieceRange:
    return PieceRange(a_out, b_out, a_out * stride, (b_out - 1) * stride + kernel_size)


@dataclass(frozen=True)
class SplitPlan:
    k: int
    pieces: tuple
    remainder: Optional[PieceRange]
    kernel_size: int
    stride: int
    input_width: int
    output_width: int

    @property
    def piece_width_out(self) -> int:
        """Widest piece (all pieces are equal unless the plan is balanced)."""
        return max(p.width_out for p in self.pieces)

    @property
    def piece_width_in(self) -> int:
        return max(p.width_in for p in self.pieces)

    @property
    def equal(self) -> bool:
        return len({p.width_out for p in self.pieces}) == 1

    def to_dict(self) -> dict:
        def rng(p):
            d = asdict(p)
            d.update(width_out=p.width_out, width_in=p.width_in)
            return d

        return {
            "k": self.k,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "input_width": self.input_width,
            "output_width": self.output_width,
            "piece_width_out": self.piece_width_out,
            "piece_width_in": self.piece_width_in,
            "pieces": [rng(p) for p in self.pieces],
            "remainder": None if self.remainder is None else rng(self.remainder),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def plan_split(spec: ConvSpec, input_width: int, k: int) -> SplitPlan:
    """Split the W_O output columns into k equal pieces plus a remainder.

    ``input_width`` is the padded width.  The last ``W_O mod k`` columns form
    the remainder piece, which the master computes itself.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    K, S = spec.kernel_size, spec.stride
    if input_width < K:
        raise GeometryError(f"input width {input_width} smaller than kernel {K}")
    w_out = (input_width - K) // S + 1
    if k > w_out:
        raise InfeasibleSplitError(f"cannot split {w_out} output columns into {k} pieces")
    width = w_out // k
    pieces = tuple(piece_for(K, S, i * width, (i + 1) * width) for i in range(k))
    remainder = None
    if w_out % k:
        remainder = piece_for(K, S, k * width, w_out)
    return SplitPlan(k, pieces, remainder, K, S, input_width, w_out)


def plan_balanced(spec: ConvSpec, input_width: int, parts: int) -> SplitPlan:
    """Split into ``parts`` pieces whose widths differ by at most one, no remainder.

    Used for uncoded and replicated execution, where pieces need not match.
    """
    if parts < 1:
        raise ValueError("parts must be >= 1")
    K, S = spec.kernel_size, spec.stride
    if input_width < K:
        raise GeometryError(f"input width {input_width} smaller than kernel {K}")
    w_out = (input_width - K) // S + 1
    if parts > w_out:
        raise InfeasibleSplitError(f"cannot split {w_out} output columns into {parts} pieces")
    base, extra = divmod(w_out, parts)
    pieces, a = [], 0
    for i in range(parts):
        b = a + base + (1 if i < extra else 0)
        pieces.append(piece_for(K, S, a, b))
        a = b
    return SplitPlan(parts, tuple(pieces), None, K, S, input_width, w_out)


def plan_for_input(spec: ConvSpec, height: int, width: int, k: int) -> SplitPlan:
    """Plan from unpadded input dims."""
    p = spec.padding
    output_dims(spec, height + 2 * p, width + 2 * p)
    return plan_split(spec, width + 2 * p, k)


def dependency_oracle(spec: ConvSpec, a_out: int, b_out: int) -> tuple[int, int]:
    """Input columns read by output columns [a_out, b_out), by enumeration."""
    cols = set()
    for o in range(a_out, b_out):
        start = o * spec.stride
        cols.update(range(start, start + spec.kernel_size))
    return min(cols), max(cols) + 1
