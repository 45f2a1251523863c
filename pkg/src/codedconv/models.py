"""Synthetic layer stacks and parameter samplers for simulation studies."""

from __future__ import annotations

import numpy as np

from .latency import LayerGeometry, PhaseProfile
from .optimizer import SystemParams
from .simulator import PipelineLayer
from .tensor import ConvSpec

# (in_channels, out_channels, input side) of the 13 VGG16 convolutions; "M" is a 2x2 max-pool
VGG16_CONVS = [(3, 64, 224), (64, 64, 224), "M", (64, 128, 112), (128, 128, 112), "M",
               (128, 256, 56), (256, 256, 56), (256, 256, 56), "M",
               (256, 512, 28), (512, 512, 28), (512, 512, 28), "M",
               (512, 512, 14), (512, 512, 14), (512, 512, 14), "M"]
VGG16_FC = [(512 * 7 * 7, 4096), (4096, 4096), (4096, 1000)]


def vgg16_like(side: int = 224) -> list[PipelineLayer]:
    """VGG16 geometry (no weights).  The first convolution stays on the master."""
    scale = side / 224
    layers = []
    c_prev, h_prev = 3, side
    conv_idx = 0
    for item in VGG16_CONVS:
        if item == "M":
            layers.append(PipelineLayer(f"pool{len(layers)}", 2, flops=float(c_prev * h_prev * h_prev)))
            h_prev //= 2
            continue
        c_in, c_out, s = item
        h = max(3, int(round(s * scale)))
        conv_idx += 1
        geo = LayerGeometry.from_unpadded(ConvSpec(c_in, c_out, 3, 1, 1), h, h)
        task = 2 if conv_idx == 1 else 1
        layers.append(PipelineLayer(f"conv{conv_idx}", task, geo, flops=geo.flops))
        # relu on the master
        layers.append(PipelineLayer(f"relu{conv_idx}", 2, flops=float(c_out * h * h)))
        c_prev, h_prev = c_out, h
    for i, (a, b) in enumerate(VGG16_FC, 1):
        layers.append(PipelineLayer(f"fc{i}", 2, flops=2.0 * a * b))
    return layers


# Single-board-computer workers on a congested wireless link, low baseline
# straggling; seconds per FLOP or byte.  Tuned so that coding only pays off
# once extra transmission delay is injected.
PI_PROFILE = PhaseProfile(mu_m=5e9, theta_m=1.2e-9, mu_cmp=2e10, theta_cmp=1.6e-9,
                          mu_rec=1e8, theta_rec=4e-7, mu_sen=1e8, theta_sen=4e-7)

BENIGN_GEOMETRY = LayerGeometry.from_unpadded(ConvSpec(128, 128, 3, 1, 1), 56, 56)

# log-uniform ranges where the log-approximate objective tracks simulation
BENIGN_RANGES = {
    "mu_m": (5e8, 5e9), "theta_m": (5e-10, 2e-9),
    "mu_cmp": (1e7, 3e8), "theta_cmp": (1e-9, 3e-9),
    "mu_tr": (1e7, 1e8), "theta_rec": (5e-8, 1.5e-7), "theta_sen": (5e-8, 1.5e-7),
}


def sample_benign(rng, n: int = 20, geometry: LayerGeometry = BENIGN_GEOMETRY) -> SystemParams:
    """One system with equal receive/send straggling rates."""
    rng = np.random.default_rng(rng)

    def draw(key):
        lo, hi = BENIGN_RANGES[key]
        return float(10 ** rng.uniform(np.log10(lo), np.log10(hi)))

    mu_m, theta_m = draw("mu_m"), draw("theta_m")
    mu_cmp, theta_cmp = draw("mu_cmp"), draw("theta_cmp")
    mu_tr = draw("mu_tr")
    prof = PhaseProfile(mu_m=mu_m, theta_m=theta_m, mu_cmp=mu_cmp, theta_cmp=theta_cmp,
                        mu_rec=mu_tr, theta_rec=draw("theta_rec"),
                        mu_sen=mu_tr, theta_sen=draw("theta_sen"))
    return SystemParams(n, geometry, prof)
