"""Gaussian low-pass filtering in the frequency domain.

Severities are expressed as cutoff frequencies in cycles/mm on the physical
object; the conversion to cycles per frame length uses the shorter image side
and the pixel pitch. Filtering is: centered 2-D DFT, element-wise Gaussian
mask, inverse DFT, real part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InvalidMetadataError, RoiAnnotation


class FilterError(Exception):
    pass


class DegenerateCutoffError(FilterError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    """One rung of the severity ladder.

    cutoff_cycles_per_mm is None for the unfiltered rung and 0.0 for the
    keep-DC-only limit (every pixel becomes the image mean).
    """

    severity_index: int
    cutoff_cycles_per_mm: float | None

    @property
    def unfiltered(self) -> bool:
        return self.cutoff_cycles_per_mm is None

    @property
    def dc_only(self) -> bool:
        return self.cutoff_cycles_per_mm == 0.0


def default_ladder(n: int = 9, base_wavelength_mm: float = 0.125 / 8) -> list[FilterSpec]:
    """Severity ladder: index 0 unfiltered, then cutoffs strictly decreasing.

    Wavelengths double per rung, starting from base_wavelength_mm * 8 at
    index 1; cutoff = 1 / wavelength.
    """
    specs = [FilterSpec(0, None)]
    for i in range(1, n):
        wavelength = base_wavelength_mm * (2 ** (i + 2))
        specs.append(FilterSpec(i, 1.0 / wavelength))
    return specs


@dataclass
class GrayImage:
    pixels: np.ndarray  # (H, W) float64
    mm_per_pixel: float

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise InvalidMetadataError("image must be 2-D")
        if self.mm_per_pixel <= 0:
            raise InvalidMetadataError("mm_per_pixel must be > 0")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def severity_to_cycles_per_frame(cutoff_cycles_per_mm: float, image: GrayImage) -> float:
    """Convert a cutoff in cycles/mm to cycles per frame length of the image."""
    if cutoff_cycles_per_mm < 0:
        raise FilterError("cutoff must be nonnegative")
    alpha = min(image.height, image.width)
    return cutoff_cycles_per_mm * alpha * image.mm_per_pixel


def gaussian_mask(height: int, width: int, cutoff_frame: float) -> np.ndarray:
    """Centered Gaussian low-pass mask, exp(-D^2 / (2 D0^2)).

    The zero-frequency bin sits at (H//2, W//2) after the shift. Distances are
    in cycles per min(H, W) frame; each axis is normalized by its own extent so
    circles in physical frequency stay circles in index space for non-square
    images.
    """
    if cutoff_frame == 0:
        raise DegenerateCutoffError("cutoff 0 has no Gaussian mask; use the dc_only path")
    if cutoff_frame < 0:
        raise FilterError("cutoff must be nonnegative")
    alpha = min(height, width)
    cy, cx = height // 2, width // 2
    u = (np.arange(height) - cy) * (alpha / height)
    v = (np.arange(width) - cx) * (alpha / width)
    d2 = u[:, None] ** 2 + v[None, :] ** 2
    return np.exp(-d2 / (2.0 * cutoff_frame**2))


def lowpass(image: GrayImage, spec: FilterSpec) -> GrayImage:
    """Apply Gaussian low-pass filtering at the given severity."""
    if not np.all(np.isfinite(image.pixels)):
        raise FilterError("image contains non-finite pixels")
    if spec.unfiltered:
        return GrayImage(image.pixels.copy(), image.mm_per_pixel)
    if spec.dc_only:
        mean = float(image.pixels.mean())
        return GrayImage(np.full_like(image.pixels, mean), image.mm_per_pixel)
    cutoff_frame = severity_to_cycles_per_frame(spec.cutoff_cycles_per_mm, image)
    mask = gaussian_mask(image.height, image.width, cutoff_frame)
    spectrum = np.fft.fftshift(np.fft.fft2(image.pixels))
    filtered = np.fft.ifft2(np.fft.ifftshift(spectrum * mask))
    return GrayImage(filtered.real, image.mm_per_pixel)


def roi_mask(height: int, width: int, rois: RoiAnnotation) -> np.ndarray:
    """Boolean mask, True inside the union of the annotation's boxes."""
    m = np.zeros((height, width), dtype=bool)
    for b in rois.boxes:
        if b.x < 0 or b.y < 0 or b.x + b.w > width or b.y + b.h > height:
            raise FilterError(f"ROI box ({b.x},{b.y},{b.w},{b.h}) exceeds {height}x{width} image")
        m[b.y : b.y + b.h, b.x : b.x + b.w] = True
    return m


def roi_scheme_filter(
    image: GrayImage, rois: RoiAnnotation, scheme: str, spec: FilterSpec
) -> GrayImage:
    """Filter the ROI interior, the exterior, or the full image.

    Compositing is a hard spatial mask over the fully filtered image; boundary
    ringing at box edges is a known artifact of this scheme.
    """
    if scheme not in ("interior", "exterior", "full"):
        raise FilterError(f"unknown scheme {scheme!r}")
    filtered = lowpass(image, spec)
    if scheme == "full":
        return filtered
    inside = roi_mask(image.height, image.width, rois)
    if scheme == "exterior":
        inside = ~inside
    out = np.where(inside, filtered.pixels, image.pixels)
    return GrayImage(out, image.mm_per_pixel)


def quantize_u16(image: GrayImage) -> np.ndarray:
    """Clip and round to uint16 for export/display only."""
    return np.clip(np.rint(image.pixels), 0, 65535).astype(np.uint16)


def band_energy_above(image: GrayImage, cutoff_cycles_per_mm: float) -> float:
    """Total spectral power strictly above a physical cutoff frequency."""
    h, w = image.height, image.width
    alpha = min(h, w)
    cutoff_frame = cutoff_cycles_per_mm * alpha * image.mm_per_pixel
    cy, cx = h // 2, w // 2
    u = (np.arange(h) - cy) * (alpha / h)
    v = (np.arange(w) - cx) * (alpha / w)
    d = np.sqrt(u[:, None] ** 2 + v[None, :] ** 2)
    power = np.abs(np.fft.fftshift(np.fft.fft2(image.pixels))) ** 2
    return float(power[d > cutoff_frame].sum())


def spectral_power(image: GrayImage) -> float:
    return float((np.abs(np.fft.fft2(image.pixels)) ** 2).sum())
