"""Model description: an ordered layer list plus a raw float32 weights file.

Schema (JSON)::

    {"input_shape": [1, 3, 32, 32],
     "weights_file": "model.weights.bin",          # relative to the JSON file
     "layers": [
       {"id": 0, "type": 1, "op": "conv", "in_channels": 3, "out_channels": 8,
        "kernel_size": 3, "stride": 1, "padding": 1,
        "weights": {"offset": 0, "length": 864},     # bytes
        "bias": {"offset": 864, "length": 32}},      # optional
       {"id": 1, "type": 2, "op": "relu"},
       {"id": 2, "type": 2, "op": "maxpool", "kernel_size": 2, "stride": 2}]}

Type 1 layers run distributed; type 2 layers run on the master.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..tensor import ConvSpec, check_tensor4, conv_layer

OPS = ("conv", "relu", "maxpool")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayerConfig:
    layer_id: int
    task_type: int
    op: str
    spec: Optional[ConvSpec] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task_type not in (1, 2):
            raise ConfigError(f"layer {self.layer_id}: type must be 1 or 2")
        if self.op not in OPS:
            raise ConfigError(f"layer {self.layer_id}: unknown op {self.op!r}")
        if self.op == "conv" and self.spec is None:
            raise ConfigError(f"layer {self.layer_id}: conv layer without a spec")
        if self.task_type == 1 and self.op != "conv":
            raise ConfigError(f"layer {self.layer_id}: only conv layers can run distributed")


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple
    layers: tuple

    def conv_layers(self) -> list[LayerConfig]:
        return [lc for lc in self.layers if lc.op == "conv"]


def maxpool(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride].max(axis=(-1, -2))


def apply_local(layer: LayerConfig, x: np.ndarray) -> np.ndarray:
    if layer.op == "conv":
        return conv_layer(x, layer.spec)
    if layer.op == "relu":
        return np.maximum(x, 0)
    return maxpool(x, int(layer.params.get("kernel_size", 2)), int(layer.params.get("stride", 2)))


def local_inference(model: ModelConfig, x: np.ndarray) -> np.ndarray:
    """Run every layer on one device: the reference output."""
    x = check_tensor4(x)
    for layer in model.layers:
        x = apply_local(layer, x)
    return x


def _read_slice(blob: bytes, entry, count: int, what: str) -> np.ndarray:
    try:
        off, length = int(entry["offset"]), int(entry["length"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"{what}: index needs integer offset and length") from None
    if off < 0 or length < 0 or off + length > len(blob):
        raise ConfigError(f"{what}: bytes [{off}, {off + length}) outside weights file of "
                          f"{len(blob)} bytes")
    if length != 4 * count:
        raise ConfigError(f"{what}: {length} bytes but {count} float32 values expected")
    return np.frombuffer(blob, dtype="<f4", count=count, offset=off).astype(np.float32)


def load_model(path) -> ModelConfig:
    path = Path(path)
    raw = json.loads(path.read_text())
    try:
        layers_raw = raw["layers"]
        input_shape = tuple(int(v) for v in raw["input_shape"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"model config missing {exc}") from None
    if len(input_shape) != 4:
        raise ConfigError("input_shape must have 4 entries")
    blob = b""
    if raw.get("weights_file"):
        blob = (path.parent / raw["weights_file"]).read_bytes()
    layers = []
    for i, d in enumerate(layers_raw):
        if "type" not in d or "op" not in d:
            raise ConfigError(f"layer {i} needs 'type' and 'op'")
        lid = int(d.get("id", i))
        spec = None
        params = {k: v for k, v in d.items() if k not in ("id", "type", "op", "weights", "bias")}
        if d["op"] == "conv":
            geo = ConvSpec(int(d["in_channels"]), int(d["out_channels"]), int(d["kernel_size"]),
                           int(d.get("stride", 1)), int(d.get("padding", 0)))
            shape = (geo.out_channels, geo.in_channels, geo.kernel_size, geo.kernel_size)
            if "weights" not in d:
                raise ConfigError(f"layer {lid}: conv layer needs a weights index")
            w = _read_slice(blob, d["weights"], int(np.prod(shape)), f"layer {lid} weights")
            b = None
            if d.get("bias") is not None:
                b = _read_slice(blob, d["bias"], geo.out_channels, f"layer {lid} bias")
            spec = geo.with_weights(w.reshape(shape), b)
        layers.append(LayerConfig(lid, int(d["type"]), d["op"], spec, params))
    return ModelConfig(input_shape, tuple(layers))


def save_model(path, model: ModelConfig) -> Path:
    """Write the JSON config and its weights file next to it."""
    path = Path(path)
    wpath = path.with_suffix(".weights.bin")
    chunks, offset, entries = [], 0, []
    for lc in model.layers:
        d = {"id": lc.layer_id, "type": lc.task_type, "op": lc.op, **lc.params}
        if lc.op == "conv":
            d.update(lc.spec.geometry())
            for key, arr in (("weights", lc.spec.weights), ("bias", lc.spec.bias)):
                if arr is None:
                    continue
                data = np.asarray(arr, dtype="<f4").tobytes()
                d[key] = {"offset": offset, "length": len(data)}
                chunks.append(data)
                offset += len(data)
        entries.append(d)
    wpath.write_bytes(b"".join(chunks))
    doc = {"input_shape": list(model.input_shape), "weights_file": wpath.name, "layers": entries}
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def synthetic_model(input_shape: Sequence[int], convs: Sequence[tuple], seed: int = 0,
                    relu: bool = True, pool_after: Sequence[int] = ()) -> ModelConfig:
    """Stack of type-1 3x3 convolutions with random weights.

    ``convs`` lists (out_channels, kernel_size, stride, padding) tuples.
    """
    rng = np.random.default_rng(seed)
    c = input_shape[1]
    layers, lid = [], 0
    for j, (c_out, kernel, stride, padding) in enumerate(convs):
        spec = ConvSpec.random(c, c_out, kernel, stride, padding, rng=rng, bias=True)
        layers.append(LayerConfig(lid, 1, "conv", spec))
        lid += 1
        if relu:
            layers.append(LayerConfig(lid, 2, "relu"))
            lid += 1
        if j in pool_after:
            layers.append(LayerConfig(lid, 2, "maxpool", params={"kernel_size": 2, "stride": 2}))
            lid += 1
        c = c_out
    return ModelConfig(tuple(input_shape), tuple(layers))


def layer_input_dims(model: ModelConfig) -> dict:
    """Unpadded (C, H, W) entering each layer, propagated through the stack."""
    _, c, h, w = model.input_shape
    dims = {}
    for lc in model.layers:
        dims[lc.layer_id] = (c, h, w)
        if lc.op == "conv":
            s = lc.spec
            hp, wp = h + 2 * s.padding, w + 2 * s.padding
            c, h, w = s.out_channels, (hp - s.kernel_size) // s.stride + 1, (wp - s.kernel_size) // s.stride + 1
        elif lc.op == "maxpool":
            kk, st = int(lc.params.get("kernel_size", 2)), int(lc.params.get("stride", 2))
            h, w = (h - kk) // st + 1, (w - kk) // st + 1
    return dims

