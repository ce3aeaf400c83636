"""Image representation and the 16 augmentation transforms.

Images are float64 arrays of shape (H, W, C) with C in {1, 3} and
intensities in [0, 1]; soft labels are length-C probability vectors.
Every operation returns a new array of the same shape with intensities
clipped back to [0, 1]; geometric operations fill out-of-bounds samples
with mid-gray (0.5) and use bilinear sampling.

Each transform takes a strength level in [0, 1] mapped linearly onto a
fixed moderate parameter range (shear factor up to 0.3, translation up to
0.3 of the axis, rotation up to 30 degrees, enhancement factors in
[0.1, 1.9], and so on).  Directional transforms draw their sign from the
supplied random generator with a fair coin; AutoContrast, Equalize and
Invert ignore the level entirely.
"""

import math
from enum import IntEnum

import numpy as np

from . import kernels

FILL_GRAY = 0.5

MAX_SHEAR = 0.3
MAX_TRANSLATE = 0.3
MAX_ROTATE_DEG = 30.0
MAX_ENHANCE = 0.9
MAX_CUTOUT_FRAC = 0.2
MAX_MIXUP_LAM = 0.4

# ITU-R 601 luma weights for the 3-channel grayscale reduction
_LUMA = np.array([0.299, 0.587, 0.114])


class TransformKind(IntEnum):
    """The 16 transform kinds, with stable integer ids."""

    AUTO_CONTRAST = 0
    BRIGHTNESS = 1
    COLOR = 2
    CONTRAST = 3
    CUTOUT = 4
    EQUALIZE = 5
    INVERT = 6
    MIXUP = 7
    POSTERIZE = 8
    ROTATE = 9
    SHARPNESS = 10
    SHEAR_X = 11
    SHEAR_Y = 12
    SOLARIZE = 13
    TRANSLATE_X = 14
    TRANSLATE_Y = 15


#: Kinds whose output does not depend on the level argument.
LEVEL_FREE_KINDS = frozenset(
    {TransformKind.AUTO_CONTRAST, TransformKind.EQUALIZE, TransformKind.INVERT}
)


class MissingPartnerError(ValueError):
    """Mixup was requested without a partner sample."""


def check_image(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, C) image with C in {{1, 3}}, got shape {img.shape}")
    return np.asarray(img, dtype=np.float64)


def _clip(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def _gray(img: np.ndarray) -> np.ndarray:
    """Per-pixel luminance, shape (H, W, 1)."""
    if img.shape[2] == 1:
        return img
    return (img * _LUMA).sum(axis=2, keepdims=True)


def _coin_sign(rng: np.random.Generator) -> float:
    return 1.0 if rng.random() < 0.5 else -1.0


# ---------------------------------------------------------------------------
# photometric primitives


def invert(img: np.ndarray) -> np.ndarray:
    return 1.0 - img


def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return _clip(factor * img)


def color_balance(img: np.ndarray, factor: float) -> np.ndarray:
    """Interpolate between the grayscale version (0) and the original (1)."""
    gray = _gray(img)
    return _clip(gray + factor * (img - gray))


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    """Interpolate between the mean-luminance flat image (0) and the original (1)."""
    mean = float(_gray(img).mean())
    return _clip(mean + factor * (img - mean))


def adjust_sharpness(img: np.ndarray, factor: float) -> np.ndarray:
    """Interpolate between a 3x3-smoothed version (0) and the original (1)."""
    smooth = kernels.smooth3x3(img)
    return _clip(smooth + factor * (img - smooth))


def autocontrast(img: np.ndarray) -> np.ndarray:
    """Stretch each channel so its minimum maps to 0 and maximum to 1."""
    out = img.copy()
    for ch in range(img.shape[2]):
        plane = img[:, :, ch]
        lo = plane.min()
        hi = plane.max()
        if hi > lo:
            out[:, :, ch] = (plane - lo) / (hi - lo)
    return _clip(out)


def equalize(img: np.ndarray) -> np.ndarray:
    """Histogram-equalize each channel over the 8-bit quantization."""
    out = np.empty_like(img)
    for ch in range(img.shape[2]):
        u = np.rint(img[:, :, ch] * 255.0).astype(np.int64)
        np.clip(u, 0, 255, out=u)
        hist = np.bincount(u.ravel(), minlength=256)
        nonzero = hist[hist > 0]
        if nonzero.size <= 1:
            out[:, :, ch] = img[:, :, ch]
            continue
        step = (int(nonzero.sum()) - int(nonzero[-1])) // 255
        if step == 0:
            out[:, :, ch] = img[:, :, ch]
            continue
        shifted = np.concatenate(([step // 2], (step // 2) + np.cumsum(hist)[:-1]))
        lut = np.minimum(shifted // step, 255)
        out[:, :, ch] = lut[u] / 255.0
    return _clip(out)


def posterize(img: np.ndarray, bits: int) -> np.ndarray:
    """Keep the top `bits` bits of the 8-bit quantization of each intensity."""
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must be in [1, 8], got {bits}")
    u = np.rint(img * 255.0).astype(np.int64)
    np.clip(u, 0, 255, out=u)
    mask = (0xFF << (8 - bits)) & 0xFF
    return (u & mask) / 255.0


def solarize(img: np.ndarray, threshold: float) -> np.ndarray:
    """Invert every intensity at or above the threshold."""
    return np.where(img >= threshold, 1.0 - img, img)


# ---------------------------------------------------------------------------
# geometric primitives


def _warp(img: np.ndarray, a: float, b: float, c: float,
          d: float, e: float, f: float) -> np.ndarray:
    return _clip(kernels.warp_affine(img, a, b, c, d, e, f, FILL_GRAY))


_EXACT_TRIG = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center, filling uncovered pixels with gray.

    Multiples of 90 degrees use exact trig values, so a square image
    rotated by 90/180/270 is an exact pixel permutation.
    """
    snapped = _EXACT_TRIG.get(degrees % 360.0)
    if snapped is not None:
        cos_t, sin_t = snapped
    else:
        rad = math.radians(degrees)
        cos_t, sin_t = math.cos(rad), math.sin(rad)
    h, w, _ = img.shape
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    a, b = cos_t, sin_t
    c = cx - cos_t * cx - sin_t * cy
    d, e = -sin_t, cos_t
    f = cy + sin_t * cx - cos_t * cy
    return _warp(img, a, b, c, d, e, f)


def shear_x(img: np.ndarray, factor: float) -> np.ndarray:
    cy = (img.shape[0] - 1) / 2.0
    return _warp(img, 1.0, factor, -factor * cy, 0.0, 1.0, 0.0)


def shear_y(img: np.ndarray, factor: float) -> np.ndarray:
    cx = (img.shape[1] - 1) / 2.0
    return _warp(img, 1.0, 0.0, 0.0, factor, 1.0, -factor * cx)


def translate_x(img: np.ndarray, shift_px: float) -> np.ndarray:
    return _warp(img, 1.0, 0.0, -shift_px, 0.0, 1.0, 0.0)


def translate_y(img: np.ndarray, shift_px: float) -> np.ndarray:
    return _warp(img, 1.0, 0.0, 0.0, 0.0, 1.0, -shift_px)


# ---------------------------------------------------------------------------
# occlusion / blending


def cutout_at(img: np.ndarray, side: int, center_row: int, center_col: int) -> np.ndarray:
    """Fill a side x side gray square centered at the given pixel, clipped at borders."""
    out = img.copy()
    if side <= 0:
        return out
    r0 = center_row - side // 2
    c0 = center_col - side // 2
    r1 = min(r0 + side, img.shape[0])
    c1 = min(c0 + side, img.shape[1])
    out[max(r0, 0):r1, max(c0, 0):c1, :] = FILL_GRAY
    return out


def cutout(img: np.ndarray, side_frac: float, rng: np.random.Generator) -> np.ndarray:
    """Gray out a random square patch of side ceil(side_frac * min(H, W))."""
    if not 0.0 <= side_frac <= 1.0:
        raise ValueError(f"side_frac must be in [0, 1], got {side_frac}")
    h, w, _ = img.shape
    side = math.ceil(side_frac * min(h, w))
    row = int(rng.integers(h))
    col = int(rng.integers(w))
    return cutout_at(img, side, row, col)


def mixup(img_a: np.ndarray, label_a: np.ndarray, img_b: np.ndarray,
          label_b: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Blend two samples: (1 - lam) * A + lam * B for both image and label."""
    if img_a.shape != img_b.shape:
        raise ValueError(f"mixup shape mismatch: {img_a.shape} vs {img_b.shape}")
    if label_a.shape != label_b.shape:
        raise ValueError(f"mixup label shape mismatch: {label_a.shape} vs {label_b.shape}")
    if not 0.0 <= lam <= 0.5:
        raise ValueError(f"mixup lambda must be in [0, 0.5], got {lam}")
    img = (1.0 - lam) * img_a + lam * img_b
    label = (1.0 - lam) * label_a + lam * label_b
    return _clip(img), label


# ---------------------------------------------------------------------------
# dispatch


def apply_transform(
    img: np.ndarray,
    kind: TransformKind,
    level: float,
    rng: np.random.Generator,
    partner: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, float]:
    """Apply one transform at the given strength level.

    Returns the transformed image and the mixing weight folded into the
    label: 0.0 for every kind except Mixup, which returns the lambda that
    was applied (the caller blends labels with the partner's label).

    `partner` is the (image, label) pair blended in by Mixup and must be
    supplied exactly when `kind` is Mixup.
    """
    img = check_image(img)
    if not math.isfinite(level):
        raise ValueError(f"level must be finite, got {level}")
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"level must be in [0, 1], got {level}")
    kind = TransformKind(kind)
    if kind is TransformKind.MIXUP:
        if partner is None:
            raise MissingPartnerError("Mixup requires a partner sample")
    elif partner is not None:
        raise ValueError(f"partner is only valid for Mixup, got {kind.name}")

    if kind is TransformKind.AUTO_CONTRAST:
        return autocontrast(img), 0.0
    if kind is TransformKind.EQUALIZE:
        return equalize(img), 0.0
    if kind is TransformKind.INVERT:
        return invert(img), 0.0
    if kind is TransformKind.POSTERIZE:
        return posterize(img, 8 - int(4.0 * level)), 0.0
    if kind is TransformKind.SOLARIZE:
        return solarize(img, 1.0 - level), 0.0
    if kind is TransformKind.CUTOUT:
        return cutout(img, MAX_CUTOUT_FRAC * level, rng), 0.0
    if kind is TransformKind.MIXUP:
        lam = MAX_MIXUP_LAM * level
        partner_img = check_image(partner[0])
        if partner_img.shape != img.shape:
            raise ValueError(
                f"mixup shape mismatch: {img.shape} vs {partner_img.shape}")
        return _clip((1.0 - lam) * img + lam * partner_img), lam

    sign = _coin_sign(rng)
    if kind is TransformKind.BRIGHTNESS:
        return adjust_brightness(img, 1.0 + MAX_ENHANCE * level * sign), 0.0
    if kind is TransformKind.COLOR:
        return color_balance(img, 1.0 + MAX_ENHANCE * level * sign), 0.0
    if kind is TransformKind.CONTRAST:
        return adjust_contrast(img, 1.0 + MAX_ENHANCE * level * sign), 0.0
    if kind is TransformKind.SHARPNESS:
        return adjust_sharpness(img, 1.0 + MAX_ENHANCE * level * sign), 0.0
    if kind is TransformKind.ROTATE:
        return rotate(img, sign * MAX_ROTATE_DEG * level), 0.0
    if kind is TransformKind.SHEAR_X:
        return shear_x(img, sign * MAX_SHEAR * level), 0.0
    if kind is TransformKind.SHEAR_Y:
        return shear_y(img, sign * MAX_SHEAR * level), 0.0
    if kind is TransformKind.TRANSLATE_X:
        return translate_x(img, sign * MAX_TRANSLATE * level * img.shape[1]), 0.0
    if kind is TransformKind.TRANSLATE_Y:
        return translate_y(img, sign * MAX_TRANSLATE * level * img.shape[0]), 0.0
    raise ValueError(f"unhandled transform kind {kind!r}")
