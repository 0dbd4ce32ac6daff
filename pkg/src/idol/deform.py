"""Random smooth deformation fields and the warps that apply them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter


@dataclass(frozen=True)
class DeformParams:
    amplitude: float = 3.0  # max displacement, pixels
    smoothness: float = 4.0  # gaussian sigma, pixels
    seed: int = 0

    def __post_init__(self):
        if not self.amplitude >= 0:
            raise ValueError("amplitude must be >= 0")
        if not self.smoothness > 0:
            raise ValueError("smoothness must be > 0")


@dataclass(frozen=True)
class DeformationField:
    """Per-pixel displacement; ``dx`` runs along columns, ``dy`` along rows."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise ValueError("dx and dy must be 2-D arrays of equal shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.dx, self.dy)

    @classmethod
    def uniform(cls, height, width, dx=0.0, dy=0.0) -> "DeformationField":
        return cls(np.full((height, width), float(dx)), np.full((height, width), float(dy)))


def random_dvf(height: int, width: int, params: DeformParams) -> DeformationField:
    """Gaussian-smoothed uniform noise, rescaled to peak magnitude ``amplitude``."""
    if height < 4 or width < 4:
        raise ValueError("deformation fields need height, width >= 4")
    if params.amplitude == 0:
        return DeformationField.uniform(height, width)
    rng = np.random.default_rng(params.seed)
    noise = rng.uniform(-1.0, 1.0, size=(2, height, width))
    dx = gaussian_filter(noise[0], params.smoothness, mode="reflect", truncate=3.0)
    dy = gaussian_filter(noise[1], params.smoothness, mode="reflect", truncate=3.0)
    peak = np.hypot(dx, dy).max()
    if peak == 0:
        return DeformationField(dx, dy)
    scale = params.amplitude / peak
    # rounding can overshoot the bound by an ulp
    while np.hypot(dx * scale, dy * scale).max() > params.amplitude:
        scale = np.nextafter(scale, 0.0)
    return DeformationField(dx * scale, dy * scale)


def _sample_coords(shape, field: DeformationField):
    if tuple(shape) != field.shape:
        raise ValueError(f"image shape {tuple(shape)} does not match field shape {field.shape}")
    h, w = shape
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    y = np.clip(rows + field.dy, 0.0, h - 1.0)
    x = np.clip(cols + field.dx, 0.0, w - 1.0)
    return y, x


def warp_image(image, field: DeformationField) -> np.ndarray:
    """Backward bilinear warp with edge clamping."""
    img = np.asarray(image, dtype=np.float64)
    y, x = _sample_coords(img.shape, field)
    h, w = img.shape
    y0 = np.floor(y).astype(int)
    x0 = np.floor(x).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = y - y0
    fx = x - x0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def warp_labels(labels, field: DeformationField) -> np.ndarray:
    """Backward nearest-neighbour warp; keeps the label set closed."""
    lab = np.asarray(labels)
    y, x = _sample_coords(lab.shape, field)
    yi = np.floor(y + 0.5).astype(int)
    xi = np.floor(x + 0.5).astype(int)
    return lab[yi, xi]


def augment_prior(prior_input, prior_target, k: int, params: DeformParams, task: str) -> list[tuple[np.ndarray, np.ndarray]]:
    """K warped copies of the prior pair; pair 0 is the prior itself.

    Pair ``i`` uses the field seeded with ``params.seed + i``, applied to
    input and target alike. Segmentation targets are warped by nearest
    neighbour so they stay binary.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    x = np.asarray(prior_input, dtype=np.float64)
    y = np.asarray(prior_target, dtype=np.float64)
    pairs = [(x.copy(), y.copy())]
    h, w = x.shape
    warp_target = warp_labels if task == "seg" else warp_image
    for i in range(1, k):
        f = random_dvf(h, w, DeformParams(params.amplitude, params.smoothness, params.seed + i))
        pairs.append((warp_image(x, f), warp_target(y, f)))
    return pairs
