"""Tri-state frame classification: RGB vs NIR vs Invalid.

Two mechanisms combine:

* a two-branch feature classifier (spatial conv branch + spectral
  channel-statistics branch, fused by a small MLP into a scalar modality
  weight ``m``; NIR iff m >= 0.5), and
* a pixel-counting over-exposure detector (fraction of near-white pixels
  above a ratio threshold marks the frame Invalid).

The classifier here is inference-only: weights are loaded from a file or
built by an initializer; training is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    ShapeError,
    Tensor,
    adaptive_avg_pool,
    adaptive_max_pool,
    as_tensor,
    linear,
    relu,
    sigmoid,
)

# Fixed classifier hyper-parameters (unspecified upstream; pinned so tests
# are deterministic): 3x3 conv, stride 1, pad 1, out channels = in channels;
# spatial pool target 4x4; spectral hidden width 8; fusion hidden width 16.
POOL_HW = (4, 4)
SPECTRAL_HIDDEN = 8
FUSION_HIDDEN = 16

WHITE_LEVEL = 250
DEFAULT_RHO = 0.40


class TriState(str, Enum):
    RGB = "rgb"
    NIR = "nir"
    INVALID = "invalid"


@dataclass(frozen=True)
class TriStateDecision:
    state: TriState
    m: float
    white_ratio: float


@dataclass
class Image:
    """8-bit image, pixels row-major (then channel-interleaved if 3-channel)."""

    width: int
    height: int
    channels: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ShapeError(f"Image: channels must be 1 or 3, got {self.channels}")
        self.pixels = np.asarray(self.pixels, dtype=np.uint8).ravel()
        want = self.width * self.height * self.channels
        if self.pixels.size != want:
            raise ShapeError(
                f"Image: {self.pixels.size} pixel values for "
                f"{self.width}x{self.height}x{self.channels} (need {want})"
            )

    def grayscale(self) -> np.ndarray:
        """Integer BT.601 luma, shape (H, W), values 0..255.

        Integer arithmetic with half-up rounding so results are identical
        across platforms.
        """
        if self.channels == 1:
            return self.pixels.reshape(self.height, self.width).astype(np.int64)
        hwc = self.pixels.reshape(self.height, self.width, 3).astype(np.int64)
        r, g, b = hwc[..., 0], hwc[..., 1], hwc[..., 2]
        return (299 * r + 587 * g + 114 * b + 500) // 1000

    def features(self) -> Tensor:
        """Pixels as a float (C, H, W) tensor scaled to [0, 1]."""
        if self.channels == 1:
            plane = self.pixels.reshape(1, self.height, self.width)
        else:
            plane = self.pixels.reshape(self.height, self.width, 3).transpose(2, 0, 1)
        return plane.astype(np.float64) / 255.0


@dataclass
class SwitchWeights:
    """Parameters of the two-branch modality classifier."""

    conv_w: Tensor  # (C, C, 3, 3)
    conv_b: Tensor  # (C,)
    spec_w: Tensor  # (SPECTRAL_HIDDEN, C)
    spec_b: Tensor
    fuse1_w: Tensor  # (FUSION_HIDDEN, C*16 + SPECTRAL_HIDDEN)
    fuse1_b: Tensor
    fuse2_w: Tensor  # (1, FUSION_HIDDEN)
    fuse2_b: Tensor

    def __post_init__(self):
        for name in (
            "conv_w",
            "conv_b",
            "spec_w",
            "spec_b",
            "fuse1_w",
            "fuse1_b",
            "fuse2_w",
            "fuse2_b",
        ):
            setattr(self, name, as_tensor(getattr(self, name)))
        c = self.conv_w.shape[0]
        fused_in = c * POOL_HW[0] * POOL_HW[1] + SPECTRAL_HIDDEN
        checks = [
            self.conv_w.shape == (c, c, 3, 3),
            self.conv_b.shape == (c,),
            self.spec_w.shape == (SPECTRAL_HIDDEN, c),
            self.spec_b.shape == (SPECTRAL_HIDDEN,),
            self.fuse1_w.shape == (FUSION_HIDDEN, fused_in),
            self.fuse1_b.shape == (FUSION_HIDDEN,),
            self.fuse2_w.shape == (1, FUSION_HIDDEN),
            self.fuse2_b.shape == (1,),
        ]
        if not all(checks):
            raise ShapeError("SwitchWeights: inconsistent parameter shapes")

    @property
    def channels(self) -> int:
        return self.conv_w.shape[0]

    def tensor_map(self) -> dict[str, Tensor]:
        return {
            "switch.conv_w": self.conv_w,
            "switch.conv_b": self.conv_b,
            "switch.spec_w": self.spec_w,
            "switch.spec_b": self.spec_b,
            "switch.fuse1_w": self.fuse1_w,
            "switch.fuse1_b": self.fuse1_b,
            "switch.fuse2_w": self.fuse2_w,
            "switch.fuse2_b": self.fuse2_b,
        }

    @classmethod
    def from_tensor_map(cls, tensors: dict[str, Tensor]) -> "SwitchWeights":
        try:
            return cls(
                conv_w=tensors["switch.conv_w"],
                conv_b=tensors["switch.conv_b"],
                spec_w=tensors["switch.spec_w"],
                spec_b=tensors["switch.spec_b"],
                fuse1_w=tensors["switch.fuse1_w"],
                fuse1_b=tensors["switch.fuse1_b"],
                fuse2_w=tensors["switch.fuse2_w"],
                fuse2_b=tensors["switch.fuse2_b"],
            )
        except KeyError as exc:
            raise KeyError(f"weights file missing tensor {exc}") from exc


def random_switch_weights(rng: np.random.Generator, channels: int = 3) -> SwitchWeights:
    """Seeded random initializer (scale 0.1) for property tests."""
    c = channels
    fused_in = c * POOL_HW[0] * POOL_HW[1] + SPECTRAL_HIDDEN

    def init(*shape):
        return 0.1 * rng.standard_normal(shape)

    return SwitchWeights(
        conv_w=init(c, c, 3, 3),
        conv_b=init(c),
        spec_w=init(SPECTRAL_HIDDEN, c),
        spec_b=init(SPECTRAL_HIDDEN),
        fuse1_w=init(FUSION_HIDDEN, fused_in),
        fuse1_b=init(FUSION_HIDDEN),
        fuse2_w=init(1, FUSION_HIDDEN),
        fuse2_b=init(1),
    )


def separator_switch_weights(channels: int = 3) -> SwitchWeights:
    """Weights correct-by-construction for the synthetic sequences.

    The spectral branch measures mean(R) - mean(B), which is far from zero on
    color frames and exactly zero on channel-collapsed (single-band) frames.
    The fusion head thresholds that statistic: logit = 4 - 40*relu(meanR-meanB),
    so color frames get m ~ 0 and single-band frames m = sigmoid(4) ~ 0.98.
    The spatial branch is zeroed out; it carries no signal the synthetic
    frames need.
    """
    c = channels
    fused_in = c * POOL_HW[0] * POOL_HW[1] + SPECTRAL_HIDDEN
    spec_w = np.zeros((SPECTRAL_HIDDEN, c))
    spec_w[0, 0] = 1.0
    spec_w[0, c - 1] = -1.0
    spec_w[1, 0] = -1.0
    spec_w[1, c - 1] = 1.0
    fuse1_w = np.zeros((FUSION_HIDDEN, fused_in))
    fuse1_w[0, c * POOL_HW[0] * POOL_HW[1]] = 1.0  # pick spectral unit 0
    fuse2_w = np.zeros((1, FUSION_HIDDEN))
    fuse2_w[0, 0] = -40.0
    return SwitchWeights(
        conv_w=np.zeros((c, c, 3, 3)),
        conv_b=np.zeros(c),
        spec_w=spec_w,
        spec_b=np.zeros(SPECTRAL_HIDDEN),
        fuse1_w=fuse1_w,
        fuse1_b=np.zeros(FUSION_HIDDEN),
        fuse2_w=fuse2_w,
        fuse2_b=np.array([4.0]),
    )


def conv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1.  Forward only.

    x: (C_in, H, W); w: (C_out, C_in, 3, 3); b: (C_out,).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0] or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv3x3: x {x.shape} vs kernel {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv3x3: bias {b.shape} vs kernel {w.shape}")
    c_in, h, wd = x.shape
    padded = np.zeros((c_in, h + 2, wd + 2), dtype=np.float64)
    padded[:, 1:-1, 1:-1] = x
    out = np.empty((w.shape[0], h, wd), dtype=np.float64)
    for o in range(w.shape[0]):
        acc = np.full((h, wd), b[o], dtype=np.float64)
        for ci in range(c_in):
            for di in range(3):
                for dj in range(3):
                    acc += w[o, ci, di, dj] * padded[ci, di : di + h, dj : dj + wd]
        out[o] = acc
    return out


def spatial_branch(f_in: Tensor, w: SwitchWeights) -> Tensor:
    """conv -> relu -> adaptive max pool to 4x4 -> flatten."""
    pooled = adaptive_max_pool(relu(conv3x3(f_in, w.conv_w, w.conv_b)), POOL_HW)
    return pooled.ravel()


def spectral_branch(f_in: Tensor, w: SwitchWeights) -> Tensor:
    """adaptive avg pool to 1x1 (channel means) -> linear -> relu."""
    means = adaptive_avg_pool(as_tensor(f_in), (1, 1)).ravel()
    return relu(linear(means, w.spec_w, w.spec_b))


def modality_weight(f_spa: Tensor, f_spe: Tensor, w: SwitchWeights) -> float:
    """Fuse the two branch vectors into a scalar modality weight in (0, 1)."""
    fused = np.concatenate([as_tensor(f_spa).ravel(), as_tensor(f_spe).ravel()])
    hidden = relu(linear(fused, w.fuse1_w, w.fuse1_b))
    return float(sigmoid(linear(hidden, w.fuse2_w, w.fuse2_b))[0])


def is_over_exposed(
    img: Image, rho: float = DEFAULT_RHO, white_level: int = WHITE_LEVEL
) -> tuple[bool, float]:
    """White-pixel ratio test.  Invalid iff the ratio strictly exceeds rho."""
    gray = img.grayscale()
    if gray.size == 0:
        raise ShapeError("is_over_exposed: empty image")
    white_ratio = float(np.count_nonzero(gray >= white_level)) / gray.size
    return white_ratio > rho, white_ratio


def classify(
    img: Image, f_in: Tensor, w: SwitchWeights, rho: float = DEFAULT_RHO
) -> TriStateDecision:
    """Full tri-state decision for one frame.

    Over-exposure is checked first; the modality weight is computed and
    reported either way (downstream consumers use it even on invalid frames).
    """
    over, white_ratio = is_over_exposed(img, rho)
    m = modality_weight(spatial_branch(f_in, w), spectral_branch(f_in, w), w)
    if over:
        state = TriState.INVALID
    elif m >= 0.5:
        state = TriState.NIR
    else:
        state = TriState.RGB
    return TriStateDecision(state=state, m=m, white_ratio=white_ratio)
