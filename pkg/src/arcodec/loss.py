"""Training objective: rate, background distortion, and box region losses.

The box loss family is indexed by k: with m the mean squared error over
a box crop, each box contributes k + (-1)^k * m, so k=0 rewards faithful
reconstruction inside the box and k=1 rewards its destruction. The two
are complementary: for any box the k=0 and k=1 terms sum to exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputError, NumericError

HBOX = "hbox"
VBOX = "vbox"
_ROLES = (None, HBOX, VBOX)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle in pixel units, (x, y) the top-left corner.

    Coordinates may be fractional (rescaling preserves exact scaled
    values); pixel indexing covers the spanned region via pixel_region.
    ``role`` tags what the box outlines: a head (hbox), a full person
    (vbox), or nothing in particular (None).
    """

    x: float
    y: float
    w: float
    h: float
    role: str | None = None

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            try:
                fv = float(v)
            except (TypeError, ValueError):
                raise InputError(f"box coordinate {name} is not a number: {v!r}")
            if not math.isfinite(fv):
                raise InputError(f"box coordinate {name} must be finite, got {fv}")
            object.__setattr__(self, name, fv)
        if self.w <= 0 or self.h <= 0:
            raise InputError(f"box must have positive extent, got w={self.w}, h={self.h}")
        if self.role not in _ROLES:
            raise InputError(f"unknown box role {self.role!r}")

    def pixel_region(self) -> tuple[int, int, int, int]:
        """(y0, y1, x0, x1) integer pixel span covering the box.

        Integer-valued boxes map exactly to rows y..y+h and columns
        x..x+w; fractional boxes cover every partially touched pixel.
        """
        x0 = math.floor(self.x)
        y0 = math.floor(self.y)
        x1 = math.ceil(self.x + self.w)
        y1 = math.ceil(self.y + self.h)
        return y0, y1, x0, x1

    def area(self) -> float:
        return self.w * self.h

    def scaled(self, sx: float, sy: float) -> "BoundingBox":
        return BoundingBox(self.x * sx, self.y * sy, self.w * sx, self.h * sy,
                           role=self.role)

    def validate_for(self, width: int, height: int) -> None:
        """Check the box lies inside an image of the given pixel dims."""
        if self.x < 0 or self.y < 0:
            raise InputError(f"box origin ({self.x}, {self.y}) is negative")
        if self.x + self.w > width + 1e-9 or self.y + self.h > height + 1e-9:
            raise InputError(
                f"box ({self.x}, {self.y}, {self.w}, {self.h}) exceeds "
                f"{width}x{height} image bounds")
        if self.w < 1 or self.h < 1:
            raise InputError("boxes attached to images must span at least 1x1 pixel")


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights for the four loss components."""

    lambda_r: float = 0.04
    lambda_bg: float = 1.0
    lambda_hbox: float = 0.6
    lambda_vbox: float = 1.0

    def __post_init__(self):
        for name in ("lambda_r", "lambda_bg", "lambda_hbox", "lambda_vbox"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ConfigurationError(f"{name} must be a finite non-negative number")


@dataclass(frozen=True)
class LossBreakdown:
    """Component values plus their weighted total."""

    rate: float
    bg: float
    hbox: float
    vbox: float
    total: float

    @classmethod
    def combine(cls, rate: float, bg: float, hbox: float, vbox: float,
                weights: LossWeights) -> "LossBreakdown":
        parts = {"rate": float(rate), "bg": float(bg),
                 "hbox": float(hbox), "vbox": float(vbox)}
        for name, value in parts.items():
            if not math.isfinite(value):
                raise NumericError(f"loss component {name!r} is non-finite ({value})")
        total = (weights.lambda_r * parts["rate"]
                 + weights.lambda_bg * parts["bg"]
                 + weights.lambda_hbox * parts["hbox"]
                 + weights.lambda_vbox * parts["vbox"])
        return cls(total=total, **parts)


def crop(t: np.ndarray, b: BoundingBox) -> np.ndarray:
    """View of the pixels a box covers; t is [C, H, W].

    For an integer box, output pixel (i, j) is input pixel
    (b.y + i, b.x + j) and the shape is [C, b.h, b.w].
    """
    t = np.asarray(t)
    if t.ndim != 3:
        raise InputError(f"crop expects a [C, H, W] tensor, got {t.ndim}-D")
    y0, y1, x0, x1 = b.pixel_region()
    _, height, width = t.shape
    if y0 < 0 or x0 < 0 or y1 > height or x1 > width:
        raise InputError(
            f"box covering rows [{y0}, {y1}) cols [{x0}, {x1}) is out of "
            f"bounds for a {height}x{width} image")
    return t[:, y0:y1, x0:x1]


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared error over all elements of two same-shaped tensors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise InputError("mse over an empty tensor is undefined")
    d = a - b
    return float(np.mean(d * d))


def mse_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of mse(a, b) with respect to b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch {a.shape} vs {b.shape}")
    return 2.0 * (b - a) / a.size


def _check_k(k: int) -> None:
    if k not in (0, 1):
        raise ConfigurationError(f"box loss index k must be 0 or 1, got {k}")


def roi_loss(x: np.ndarray, xhat: np.ndarray,
             boxes: Sequence[BoundingBox], k: int) -> float:
    """Mean over boxes of k + (-1)^k * mse(crop(x, b), crop(xhat, b)).

    k=0 penalizes reconstruction error inside the boxes; k=1 rewards it
    (inverted distortion). An empty box list contributes 0. With x and
    xhat in [0, 1] the value lies in [0, 1] for either k.
    """
    _check_k(k)
    if len(boxes) == 0:
        return 0.0
    sign = 1.0 if k == 0 else -1.0
    total = 0.0
    for b in boxes:
        total += k + sign * mse(crop(x, b), crop(xhat, b))
    return total / len(boxes)


def roi_loss_grad(x: np.ndarray, xhat: np.ndarray,
                  boxes: Sequence[BoundingBox], k: int,
                  pool_count: int | None = None) -> np.ndarray:
    """Gradient of roi_loss with respect to xhat.

    ``pool_count`` overrides the divisor when these boxes are part of a
    larger pool (batch training averages over all boxes jointly).
    """
    _check_k(k)
    xhat = np.asarray(xhat, dtype=np.float64)
    g = np.zeros_like(xhat)
    n = len(boxes) if pool_count is None else pool_count
    if n == 0 or len(boxes) == 0:
        return g
    sign = 1.0 if k == 0 else -1.0
    for b in boxes:
        y0, y1, x0, x1 = b.pixel_region()
        diff = xhat[:, y0:y1, x0:x1] - np.asarray(x)[:, y0:y1, x0:x1]
        g[:, y0:y1, x0:x1] += sign * 2.0 * diff / (diff.size * n)
    return g


def region_mask(height: int, width: int,
                boxes: Sequence[BoundingBox]) -> np.ndarray:
    """Boolean [H, W] mask of pixels covered by any of the boxes."""
    mask = np.zeros((height, width), dtype=bool)
    for b in boxes:
        y0, y1, x0, x1 = b.pixel_region()
        mask[max(y0, 0):min(y1, height), max(x0, 0):min(x1, width)] = True
    return mask


def _as_batch(x, xhat, hboxes, vboxes):
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise InputError(f"shape mismatch {x.shape} vs {xhat.shape}")
    if x.ndim == 3:
        return x[None], xhat[None], [list(hboxes)], [list(vboxes)]
    if x.ndim != 4:
        raise InputError("expected [C, H, W] or [B, C, H, W] tensors")
    hb = [list(b) for b in hboxes]
    vb = [list(b) for b in vboxes]
    if len(hb) != x.shape[0] or len(vb) != x.shape[0]:
        raise InputError("one box list required per batch image")
    return x, xhat, hb, vb


def roi_loss_batch(x, xhat, boxes_per_image, k: int) -> float:
    """Box loss pooled over every box of a batch (single mean over boxes)."""
    _check_k(k)
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    sign = 1.0 if k == 0 else -1.0
    total = 0.0
    count = 0
    for i, boxes in enumerate(boxes_per_image):
        for b in boxes:
            total += k + sign * mse(crop(x[i], b), crop(xhat[i], b))
            count += 1
    return total / count if count else 0.0


def total_loss(rate, x, xhat, hboxes, vboxes,
               weights: LossWeights) -> LossBreakdown:
    """Weighted sum of rate, background MSE, and the two box losses.

    Accepts a single image ([C, H, W] with flat box lists) or a batch
    ([B, C, H, W] with one box list per image). ``rate`` is a scalar or
    a per-image vector, averaged over the batch. Background distortion
    is the batch mean of the full-image MSE, overlapping regions
    included; box losses pool every box in the batch. A non-finite
    component raises NumericError naming the component.
    """
    x4, xhat4, hb, vb = _as_batch(x, xhat, hboxes, vboxes)
    rate_arr = np.asarray(rate, dtype=np.float64)
    rate_val = float(rate_arr) if rate_arr.ndim == 0 else float(rate_arr.mean())
    bg = mse(x4, xhat4)
    hbox_val = roi_loss_batch(x4, xhat4, hb, k=1)
    vbox_val = roi_loss_batch(x4, xhat4, vb, k=0)
    return LossBreakdown.combine(rate_val, bg, hbox_val, vbox_val, weights)
