"""Albedo-quotient relighting and physics-based light estimation.

Relighting multiplies the luminance channel by the ratio of new to old
shading, which cancels the unknown per-pixel reflectance: no albedo map is
ever required. The inverse problem (recover the light from an image plus
normals) is a 9-parameter linear least squares under a uniform-albedo
assumption.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import pngio
from .errors import DegenerateLightError, EmptyMaskError, SingularFitError
from .shading import BAND_GAINS, NormalMap, SHLight, _light_coeffs, sh_basis, shade

#: Rec. 601 luma weights.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

#: Floor applied to the denominator shading before division.
DENOM_FLOOR = 1e-4

_CHROMA_EPS = 1e-12


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FaceImage:
    """An RGB face crop with an explicit luminance channel.

    ``luminance`` is what shading operations act on; ``chroma`` is the
    per-channel ratio rgb / luminance, kept so that a relit luminance can be
    reattached to the original colors. Build instances with
    :meth:`from_rgb` or :meth:`from_luminance`.
    """

    rgb: np.ndarray
    luminance: np.ndarray
    chroma: np.ndarray

    def __post_init__(self):
        rgb = np.array(self.rgb, dtype=np.float64)
        lum = np.array(self.luminance, dtype=np.float64)
        chroma = np.array(self.chroma, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"rgb must be HxWx3, got {rgb.shape}")
        if lum.shape != rgb.shape[:2] or chroma.shape != rgb.shape:
            raise ValueError("luminance/chroma shapes must match rgb")
        for name, arr, hi in (("rgb", rgb, 1.0), ("luminance", lum, 1.0)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            if arr.min() < -1e-9 or arr.max() > hi + 1e-9:
                raise ValueError(f"{name} must lie in [0, 1]")
        object.__setattr__(self, "rgb", _freeze(rgb))
        object.__setattr__(self, "luminance", _freeze(lum))
        object.__setattr__(self, "chroma", _freeze(chroma))

    @classmethod
    def from_rgb(cls, rgb) -> "FaceImage":
        rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
        lum = rgb @ LUMA_WEIGHTS
        safe = np.maximum(lum, _CHROMA_EPS)[:, :, None]
        chroma = np.where(lum[:, :, None] > _CHROMA_EPS, rgb / safe, 0.0)
        return cls(rgb, lum, chroma)

    @classmethod
    def from_luminance(cls, luminance) -> "FaceImage":
        lum = np.clip(np.asarray(luminance, dtype=np.float64), 0.0, 1.0)
        return cls.from_rgb(np.repeat(lum[:, :, None], 3, axis=2))

    def with_luminance(self, luminance) -> "FaceImage":
        """Reattach chroma to a new (already clamped) luminance channel."""
        lum = np.asarray(luminance, dtype=np.float64)
        rgb = np.clip(self.chroma * lum[:, :, None], 0.0, 1.0)
        return FaceImage(rgb, lum, self.chroma)

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


@dataclass(frozen=True)
class RelightResult:
    image: FaceImage
    new_light: SHLight
    old_light: SHLight
    clamp_fraction: float

    def __post_init__(self):
        if not 0.0 <= self.clamp_fraction <= 1.0:
            raise ValueError("clamp_fraction must lie in [0, 1]")


def _relight_parts(image: FaceImage, normals: NormalMap, old_light):
    """Shared denominator bookkeeping for the quotient and its Jacobian."""
    if image.luminance.shape != normals.mask.shape:
        raise ValueError("image and normal map dimensions differ")
    mask = normals.mask
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise EmptyMaskError("relighting needs at least one masked pixel")
    f_old = shade(normals, old_light)
    floored = mask & (f_old < DENOM_FLOOR)
    if floored.sum() > 0.5 * n_masked:
        raise DegenerateLightError(
            f"denominator floored on {floored.sum()}/{n_masked} masked pixels"
        )
    denom = np.maximum(f_old, DENOM_FLOOR)
    return mask, denom, floored


def quotient_relight(image: FaceImage, normals: NormalMap, old_light, new_light) -> RelightResult:
    """Relight via the shading quotient f(N, L') / f(N, L).

    Masked luminance is multiplied by the quotient (denominator floored at
    ``DENOM_FLOOR``) and clamped to [0, 1]; unmasked pixels pass through.
    """
    mask, denom, _ = _relight_parts(image, normals, old_light)
    f_new = shade(normals, new_light)
    raw = image.luminance.copy()
    raw[mask] = image.luminance[mask] * f_new[mask] / denom[mask]
    clipped = np.clip(raw, 0.0, 1.0)
    clamp_fraction = float(((raw != clipped) & mask).sum() / mask.sum())
    return RelightResult(
        image=image.with_luminance(clipped),
        new_light=SHLight(_light_coeffs(new_light)),
        old_light=SHLight(_light_coeffs(old_light)),
        clamp_fraction=clamp_fraction,
    )


def estimate_light(image: FaceImage, normals: NormalMap) -> SHLight:
    """Least-squares light from an image and its normals (uniform albedo).

    Solves luminance ~= sum_j A_j L_j b_j(n) over masked pixels and returns
    the residual-norm minimizer. Raises :class:`SingularFitError` when the
    system has rank below 9.
    """
    if image.luminance.shape != normals.mask.shape:
        raise ValueError("image and normal map dimensions differ")
    mask = normals.mask
    if not mask.any():
        raise EmptyMaskError("light estimation needs at least one masked pixel")
    design = sh_basis(normals.normals[mask]) * BAND_GAINS
    target = image.luminance[mask]
    solution, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < 9:
        raise SingularFitError(rank=int(rank))
    return SHLight(solution)


def random_relight(image: FaceImage, normals: NormalMap, old_light, epsilon: float, seed: int) -> RelightResult:
    """Baseline: relight under L + u with u uniform in [-epsilon, epsilon]^9."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    rng = np.random.default_rng(seed)
    offset = rng.uniform(-epsilon, epsilon, size=9)
    new_light = _light_coeffs(old_light) + offset
    return quotient_relight(image, normals, old_light, new_light)


def save_face_image(path, image: FaceImage) -> None:
    pngio.write_png(path, np.round(image.rgb * 255.0).astype(np.uint8))


def load_face_image(path) -> FaceImage:
    arr = pngio.read_png(path)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.shape[2] == 4:
        arr = arr[:, :, :3]
    scale = 65535.0 if arr.dtype == np.uint16 else 255.0
    return FaceImage.from_rgb(arr.astype(np.float64) / scale)
