"""Split, encode and decode one convolutional layer.

Workers run ``conv2d`` without bias on whatever partition they receive; the
master adds bias after decoding because coding relies on linearity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .mds import GenerationMatrix, build_vandermonde, mds_decode, mds_encode
from .split import SplitPlan, plan_balanced, plan_split
from .tensor import ConvSpec, GeometryError, concat_width, conv2d, output_dims, pad, restore, slice_width


@dataclass
class CodedJob:
    """One layer split into k sources and expanded to n coded subtasks.

    With ``G=None`` the job is uncoded: the width is split as evenly as
    possible, subtask i is piece i, and all k (= n) results are needed.
    """

    spec: ConvSpec
    plan: SplitPlan
    G: Optional[GenerationMatrix]
    input_shape: tuple

    @classmethod
    def build(cls, spec: ConvSpec, padded_shape, n: int, k: int, coded: bool = True,
              nodes="integer") -> "CodedJob":
        if coded:
            plan = plan_split(spec, padded_shape[3], k)
            G = build_vandermonde(n, k, nodes)
        else:
            if k != n:
                raise ValueError("uncoded execution uses k = n")
            plan = plan_balanced(spec, padded_shape[3], k)
            G = None
        return cls(spec, plan, G, tuple(padded_shape))

    @property
    def k(self) -> int:
        return self.plan.k

    @property
    def n(self) -> int:
        return self.plan.k if self.G is None else self.G.n

    @property
    def coded(self) -> bool:
        return self.G is not None

    def piece_output_shape(self) -> tuple:
        b, _, h, _ = self.input_shape
        h_out, _ = output_dims(self.spec, h, self.plan.input_width)
        return (b, self.spec.out_channels, h_out, self.plan.piece_width_out)

    def sources(self, x_padded: np.ndarray) -> list:
        if tuple(x_padded.shape) != self.input_shape:
            raise GeometryError(f"job planned for {self.input_shape}, got {x_padded.shape}")
        return [slice_width(x_padded, p.a_in, p.b_in) for p in self.plan.pieces]

    def encode(self, x_padded: np.ndarray) -> list:
        """The n subtask inputs; float64 when coded."""
        parts = self.sources(x_padded)
        if not self.coded:
            return parts
        shape = parts[0].shape
        encoded = mds_encode(self.G, parts)
        return [restore(row, shape) for row in encoded]

    def remainder_output(self, x_padded: np.ndarray) -> Optional[np.ndarray]:
        r = self.plan.remainder
        if r is None:
            return None
        return conv2d(slice_width(x_padded, r.a_in, r.b_in), self.spec)

    def decode(self, results: Mapping[int, np.ndarray], remainder: Optional[np.ndarray] = None,
               apply_bias: bool = True, dtype=np.float32) -> np.ndarray:
        """Assemble the layer output from worker results keyed by subtask index.

        For coded jobs the first k entries of ``results`` (insertion order)
        are used.
        """
        shape = self.piece_output_shape()
        if self.coded:
            if len(results) < self.k:
                raise ValueError(f"need {self.k} results, have {len(results)}")
            chosen = list(results)[: self.k]
            decoded = mds_decode(self.G, chosen, [results[i] for i in chosen])
            pieces = [restore(row, shape) for row in decoded]
        else:
            missing = [i for i in range(self.k) if i not in results]
            if missing:
                raise ValueError(f"missing uncoded pieces {missing}")
            pieces = [np.asarray(results[i], dtype=np.float64) for i in range(self.k)]
        if self.plan.remainder is not None:
            if remainder is None:
                raise ValueError("plan has a remainder piece but no remainder output was given")
            pieces.append(np.asarray(remainder, dtype=np.float64))
        out = concat_width(pieces)
        if apply_bias and self.spec.bias is not None:
            out = out + self.spec.bias.reshape(1, -1, 1, 1)
        return out.astype(dtype)


def coded_conv_layer(x: np.ndarray, spec: ConvSpec, n: int, k: int,
                     subset: Optional[Sequence[int]] = None, apply_bias: bool = True) -> np.ndarray:
    """Run a coded layer in-process, decoding from the workers in ``subset``."""
    xp = pad(x, spec.padding)
    job = CodedJob.build(spec, xp.shape, n, k)
    encoded = job.encode(xp)
    subset = list(range(k)) if subset is None else list(subset)
    results = {i: conv2d(encoded[i], spec) for i in subset}
    return job.decode(results, job.remainder_output(xp), apply_bias=apply_bias, dtype=x.dtype)


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    """max |got - want| / max |want|."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.abs(want).max()
    if denom == 0:
        return float(np.abs(got).max())
    return float(np.abs(got - want).max() / denom)
