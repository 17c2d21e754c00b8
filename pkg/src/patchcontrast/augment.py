"""Stochastic patch augmentation: geometry, gamma, blur/sharpen.

A draw of :class:`AugmentParams` fixes every random choice, so applying the
pipeline is a pure function of (source patch, params). The pipeline order is
geometric resampling first (rotation, vertical mirror, center translation in
one bilinear pass), then the unbiased gamma intensity map, then at most one of
Gaussian blur or sharpen.

Parameter distributions (uniform unless stated): rotation over [-pi, pi],
translation distance over [0, 0.2] mm in a uniform direction, mirror with
probability 1/2, gamma alpha over [0.9, 1.0], beta over [-0.1, 0.1], Z over
[-0.05, 0.05], blur/sharpen each chosen with probability 1/4 (blur wins the
draw; they never co-occur), sigma over [0.125, 1.0], sharpen amount over
[0.5, 1.5].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ParameterError

Z_LIMIT = 0.05
TRANSLATION_MAX_MM = 0.2


@dataclass(frozen=True)
class AugmentParams:
    rotation: float
    shift_mm: float
    shift_direction: float
    mirror: bool
    gamma_alpha: float
    gamma_beta: float
    gamma_z: float
    filter_kind: str  # "blur" | "sharpen" | "none"
    blur_sigma: float
    sharpen_sigma: float
    sharpen_amount: float


def identity_params() -> AugmentParams:
    return AugmentParams(0.0, 0.0, 0.0, False, 1.0, 0.0, 0.0, "none", 0.5, 0.5, 1.0)


def draw_params(rng: np.random.Generator) -> AugmentParams:
    """Draw one full augmentation parameter set (fixed draw order)."""
    rotation = rng.uniform(-math.pi, math.pi)
    shift_mm = rng.uniform(0.0, TRANSLATION_MAX_MM)
    shift_direction = rng.uniform(0.0, 2.0 * math.pi)
    mirror = bool(rng.uniform() < 0.5)
    alpha = rng.uniform(0.9, 1.0)
    beta = rng.uniform(-0.1, 0.1)
    z = rng.uniform(-Z_LIMIT, Z_LIMIT)
    filter_draw = rng.uniform()
    if filter_draw < 0.25:
        filter_kind = "blur"
    elif filter_draw < 0.5:
        filter_kind = "sharpen"
    else:
        filter_kind = "none"
    blur_sigma = rng.uniform(0.125, 1.0)
    sharpen_sigma = rng.uniform(0.125, 1.0)
    sharpen_amount = rng.uniform(0.5, 1.5)
    return AugmentParams(
        rotation, shift_mm, shift_direction, mirror, alpha, beta, z,
        filter_kind, blur_sigma, sharpen_sigma, sharpen_amount,
    )


def gamma_exponent(z: float) -> float:
    """gamma = log(0.5 + z/sqrt(2)) / log(0.5 - z/sqrt(2)); identity at z=0."""
    if abs(z) > Z_LIMIT + 1e-12:
        raise ParameterError(f"gamma parameter Z={z} outside [-{Z_LIMIT}, {Z_LIMIT}]")
    half_sqrt2 = z / math.sqrt(2.0)
    return math.log(0.5 + half_sqrt2) / math.log(0.5 - half_sqrt2)


def gamma_augment(pixels: np.ndarray, alpha: float, beta: float, z: float) -> np.ndarray:
    """Per-pixel x -> clamp(alpha * x**gamma(z) + beta, 0, 1)."""
    gamma = gamma_exponent(z)
    out = alpha * np.power(pixels, gamma) + beta
    return np.clip(out, 0.0, 1.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ParameterError(f"blur sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (t / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian convolution with mass-preserving reflected borders."""
    kernel = gaussian_kernel(sigma)
    radius = len(kernel) // 2
    out = pixels.astype(np.float64)
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="symmetric")
        acc = np.zeros_like(out)
        for j, weight in enumerate(kernel):
            if axis == 0:
                acc += weight * padded[j : j + out.shape[0], :]
            else:
                acc += weight * padded[:, j : j + out.shape[1]]
        out = acc
    return out.astype(pixels.dtype)


def sharpen(pixels: np.ndarray, sigma: float, amount: float, toward_blur: bool = True) -> np.ndarray:
    """x + amount * (blur(x) - x), clamped to [0, 1].

    As printed this moves the image *toward* its blur; pass
    ``toward_blur=False`` for the conventional unsharp-mask sign.
    """
    blurred = gaussian_blur(pixels, sigma)
    if toward_blur:
        out = (1.0 - amount) * pixels + amount * blurred
    else:
        out = (1.0 + amount) * pixels - amount * blurred
    return np.clip(out, 0.0, 1.0)


def required_source_side(target_side: int, shift_mm: float, resolution_um: float) -> int:
    """Smallest source side with margin for any rotation plus the given shift."""
    shift_px = shift_mm * 1000.0 / resolution_um
    return int(math.ceil(target_side * math.sqrt(2.0) + 2.0 * shift_px))


def rotate_mirror_translate(
    source: np.ndarray,
    rotation: float,
    mirror: bool,
    shift_mm: float,
    shift_direction: float,
    target_side: int,
    resolution_um: float = 2.0,
) -> np.ndarray:
    """Bilinear crop of ``source`` around a shifted center, rotated, then mirrored.

    The source must be oversized: side >= target_side * sqrt(2) + 2 * shift_px,
    so no padding is ever sampled.
    """
    src_side = source.shape[0]
    if source.ndim != 2 or source.shape[0] != source.shape[1]:
        raise GeometryError(f"source patch must be square, got {source.shape}")
    needed = required_source_side(target_side, shift_mm, resolution_um)
    if src_side < needed:
        raise GeometryError(
            f"source side {src_side} too small: target {target_side} with shift "
            f"{shift_mm} mm at {resolution_um} um/px requires side >= {needed}"
        )
    shift_px = shift_mm * 1000.0 / resolution_um
    center = (src_side - 1) / 2.0
    cx = center + shift_px * math.cos(shift_direction)
    cy = center + shift_px * math.sin(shift_direction)
    offsets = np.arange(target_side, dtype=np.float64) - (target_side - 1) / 2.0
    cos_t, sin_t = math.cos(rotation), math.sin(rotation)
    # sample coords: rows index v (y), cols index u (x)
    xs = cx + offsets[None, :] * cos_t - offsets[:, None] * sin_t
    ys = cy + offsets[None, :] * sin_t + offsets[:, None] * cos_t
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, src_side - 2)
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, src_side - 2)
    wx = xs - x0
    wy = ys - y0
    top = source[y0, x0] * (1.0 - wx) + source[y0, x0 + 1] * wx
    bottom = source[y0 + 1, x0] * (1.0 - wx) + source[y0 + 1, x0 + 1] * wx
    out = top * (1.0 - wy) + bottom * wy
    if mirror:
        out = out[::-1, :]
    return np.ascontiguousarray(np.clip(out, 0.0, 1.0).astype(source.dtype))


def apply_pipeline(
    source: np.ndarray,
    params: AugmentParams,
    target_side: int,
    resolution_um: float = 2.0,
    sharpen_toward_blur: bool = True,
) -> np.ndarray:
    """Geometric transform, then gamma, then at most one of blur/sharpen."""
    out = rotate_mirror_translate(
        source, params.rotation, params.mirror, params.shift_mm,
        params.shift_direction, target_side, resolution_um,
    )
    out = gamma_augment(out, params.gamma_alpha, params.gamma_beta, params.gamma_z)
    if params.filter_kind == "blur":
        out = gaussian_blur(out, params.blur_sigma)
    elif params.filter_kind == "sharpen":
        out = sharpen(out, params.sharpen_sigma, params.sharpen_amount, sharpen_toward_blur)
    elif params.filter_kind != "none":
        raise ParameterError(f"unknown filter kind {params.filter_kind!r}")
    return out


def center_crop(source: np.ndarray, target_side: int) -> np.ndarray:
    """Deterministic evaluation-time crop (no augmentation)."""
    side = source.shape[0]
    if side < target_side:
        raise GeometryError(f"source side {side} smaller than crop side {target_side}")
    start = (side - target_side) // 2
    return source[start : start + target_side, start : start + target_side]
