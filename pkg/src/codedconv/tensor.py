"""Dense (B, C, H, W) feature maps and a reference 2D convolution.

Tensors are plain numpy arrays in row-major (B, C, H, W) order, width
innermost.  User-facing payloads are float32; coded intermediates are
carried in float64 so decoding stays well conditioned.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

MAGIC_F32 = b"CCT1"
MAGIC_F64 = b"CCT2"
_HEADER = struct.Struct("<4sIIII")


class GeometryError(ValueError):
    """Shapes or ranges that cannot describe a valid convolution."""


def check_tensor4(x, *, finite: bool = True) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 4:
        raise GeometryError(f"expected a 4-D (B, C, H, W) tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise GeometryError(f"all dims must be positive, got {arr.shape}")
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    if finite and not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class ConvSpec:
    """One convolutional layer.

    ``weights`` has shape (out_channels, in_channels, K, K).  It may be left
    as ``None`` when only the geometry matters (latency modelling).
    """

    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    weights: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    bias: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise GeometryError("channel counts must be positive")
        if self.kernel_size < 1 or self.stride < 1:
            raise GeometryError("kernel_size and stride must be >= 1")
        if self.padding < 0:
            raise GeometryError("padding must be non-negative")
        if self.weights is not None:
            w = np.asarray(self.weights)
            want = (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)
            if w.shape != want:
                raise GeometryError(f"weights shape {w.shape} != {want}")
            object.__setattr__(self, "weights", w)
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
            if b.shape != (self.out_channels,):
                raise GeometryError(f"bias must have {self.out_channels} entries")
            object.__setattr__(self, "bias", b)

    @classmethod
    def random(cls, in_channels, out_channels, kernel_size, stride=1, padding=0,
               rng=None, bias=False) -> "ConvSpec":
        """Synthetic weights drawn from N(0, 1/fan_in)."""
        rng = np.random.default_rng(rng)
        fan_in = in_channels * kernel_size * kernel_size
        w = rng.standard_normal((out_channels, in_channels, kernel_size, kernel_size))
        w = (w / np.sqrt(fan_in)).astype(np.float32)
        b = rng.standard_normal(out_channels).astype(np.float32) if bias else None
        return cls(in_channels, out_channels, kernel_size, stride, padding, w, b)

    def geometry(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
        }

    def without_weights(self) -> "ConvSpec":
        return ConvSpec(**self.geometry())

    def with_weights(self, weights, bias=None) -> "ConvSpec":
        return ConvSpec(**self.geometry(), weights=weights, bias=bias)


def output_dims(spec: ConvSpec, height: int, width: int) -> tuple[int, int]:
    """Output (H_O, W_O) for an already padded (height, width) input."""
    k, s = spec.kernel_size, spec.stride
    if height < k or width < k:
        raise GeometryError(f"input {height}x{width} smaller than kernel {k}")
    return (height - k) // s + 1, (width - k) // s + 1


def pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding < 0:
        raise GeometryError("padding must be non-negative")
    x = check_tensor4(x, finite=False)
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x_padded: np.ndarray, spec: ConvSpec, apply_bias: bool = False,
           cancelled: Optional[Callable[[], bool]] = None,
           column_block: int = 16) -> Optional[np.ndarray]:
    """Cross-correlation of an already padded input with ``spec.weights``.

    Accumulates in float64 and returns the input's dtype.  When
    ``cancelled`` is given it is polled between blocks of output columns;
    a true result abandons the work and returns ``None``.
    """
    x = check_tensor4(x_padded, finite=False)
    if spec.weights is None:
        raise GeometryError("spec carries no weights")
    b, c, h, w = x.shape
    if c != spec.in_channels:
        raise GeometryError(f"input has {c} channels, layer expects {spec.in_channels}")
    h_out, w_out = output_dims(spec, h, w)
    k, s = spec.kernel_size, spec.stride
    weights = spec.weights.astype(np.float64)
    out = np.empty((b, spec.out_channels, h_out, w_out), dtype=np.float64)
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    windows = windows[:, :, ::s, ::s]
    for start in range(0, w_out, column_block):
        if cancelled is not None and cancelled():
            return None
        stop = min(start + column_block, w_out)
        block = windows[:, :, :h_out, start:stop].astype(np.float64)
        out[..., start:stop] = np.einsum("bchwij,ocij->bohw", block, weights, optimize=True)
    if apply_bias and spec.bias is not None:
        out += spec.bias.reshape(1, -1, 1, 1)
    return out.astype(x.dtype)


def conv_layer(x: np.ndarray, spec: ConvSpec, apply_bias: bool = True) -> np.ndarray:
    """Pad then convolve: the single-device reference for one layer."""
    return conv2d(pad(x, spec.padding), spec, apply_bias=apply_bias)


def slice_width(x: np.ndarray, a: int, b: int) -> np.ndarray:
    x = check_tensor4(x, finite=False)
    if not 0 <= a < b <= x.shape[3]:
        raise GeometryError(f"column range [{a}, {b}) outside width {x.shape[3]}")
    return np.ascontiguousarray(x[..., a:b])


def concat_width(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise GeometryError("nothing to concatenate")
    lead = parts[0].shape[:3]
    for p in parts:
        if p.ndim != 4 or p.shape[:3] != lead:
            raise GeometryError(f"cannot concatenate {p.shape} onto {lead}")
    return np.concatenate(parts, axis=3)


def flatten(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x).reshape(-1)


def restore(v: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or int(np.prod(dims)) != np.asarray(v).size:
        raise GeometryError(f"cannot restore {np.asarray(v).size} values into {dims}")
    return np.asarray(v).reshape(dims)


def transpose_hw(x: np.ndarray) -> np.ndarray:
    """Swap height and width so inputs with H > W can be split by width."""
    return np.ascontiguousarray(np.swapaxes(check_tensor4(x, finite=False), 2, 3))


def transpose_spec(spec: ConvSpec) -> ConvSpec:
    w = None if spec.weights is None else np.ascontiguousarray(np.swapaxes(spec.weights, 2, 3))
    return spec.with_weights(w, spec.bias)


# -- binary container --------------------------------------------------------

def tensor_to_bytes(x: np.ndarray) -> bytes:
    """Header (magic, B, C, H, W as little-endian u32) then the values.

    float32 tensors use magic CCT1; float64 tensors use CCT2 with 8-byte
    little-endian values.
    """
    x = check_tensor4(x, finite=False)
    if x.dtype == np.float64:
        magic, body = MAGIC_F64, x.astype("<f8").tobytes()
    else:
        magic, body = MAGIC_F32, x.astype("<f4").tobytes()
    return _HEADER.pack(magic, *x.shape) + body


def tensor_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise ValueError("truncated tensor header")
    magic, *dims = _HEADER.unpack_from(data)
    if magic == MAGIC_F32:
        dtype = np.dtype("<f4")
    elif magic == MAGIC_F64:
        dtype = np.dtype("<f8")
    else:
        raise ValueError(f"bad tensor magic {magic!r}")
    if min(dims) < 1:
        raise ValueError(f"bad tensor dims {dims}")
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) != _HEADER.size + count * dtype.itemsize:
        raise ValueError(f"tensor body is {len(data) - _HEADER.size} bytes, dims {dims} need "
                         f"{count * dtype.itemsize}")
    arr = np.frombuffer(data, dtype=dtype, offset=_HEADER.size).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def write_tensor(path, x: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(x))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())
