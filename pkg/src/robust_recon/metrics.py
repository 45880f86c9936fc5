"""Shift-tolerant image quality metrics.

A reconstruction may be displaced by a fraction of the grid against the
ground-truth geometry without being any worse, so both quality numbers are
taken as the maximum over a grid of reference shifts: the analytic support
is re-rasterized at every shift and the metric evaluated against each
candidate. Ties resolve to the first shift in lexicographic order.

PSNR uses a fixed peak value (not the per-image maximum) so scores are
comparable across reconstructions; identical images return +inf. SSIM uses
the standard Gaussian window (11 taps, sigma 1.5) with symmetric padding
and a fixed dynamic range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .model import VoxelGrid, rasterize_support

__all__ = [
    "ShiftGrid",
    "ReferenceImage",
    "QualityReport",
    "ShiftMetricResult",
    "rasterize_reference",
    "reference_stack",
    "psnr",
    "ssim",
    "shift_max_metric",
    "quality_report",
]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class ShiftGrid:
    """Symmetric shift lattice: per axis -extent..extent in steps of step_mm.

    Extents must be integer multiples of the step (0 collapses an axis to
    the single shift 0). Shifts enumerate lexicographically, x slowest.
    """

    extent_mm: tuple[float, float, float]
    step_mm: float

    def __post_init__(self):
        if self.step_mm <= 0:
            raise ValueError("shift step must be positive")
        if len(self.extent_mm) != 3 or any(e < 0 for e in self.extent_mm):
            raise ValueError("shift extents must be three nonnegative lengths")
        for e in self.extent_mm:
            k = e / self.step_mm
            if abs(k - round(k)) > 1e-9 * max(1.0, k):
                raise ValueError("shift extent must be an integer multiple of the step")
        object.__setattr__(self, "extent_mm", tuple(float(e) for e in self.extent_mm))
        object.__setattr__(self, "step_mm", float(self.step_mm))

    def axis_values(self, axis: int) -> np.ndarray:
        k = int(round(self.extent_mm[axis] / self.step_mm))
        return np.arange(-k, k + 1, dtype=np.float64) * self.step_mm

    @property
    def count(self) -> int:
        n = 1
        for axis in range(3):
            n *= 2 * int(round(self.extent_mm[axis] / self.step_mm)) + 1
        return n

    def shifts(self) -> np.ndarray:
        """All shifts as an (count, 3) array in enumeration order."""
        ax = [self.axis_values(a) for a in range(3)]
        gx, gy, gz = np.meshgrid(*ax, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


@dataclass
class ReferenceImage:
    """Ground-truth support rasterized at one shift."""

    grid: VoxelGrid
    values: np.ndarray
    shift_mm: tuple[float, float, float]
    concentration: float


def rasterize_reference(support, shift_mm, grid: VoxelGrid, concentration: float,
                        subsamples: int = 4) -> ReferenceImage:
    """Rasterize the shifted support; shares the phantom rasterizer so the
    reference at zero shift equals the generating phantom exactly."""
    values = rasterize_support(support, grid, concentration, subsamples, shift_mm=shift_mm)
    return ReferenceImage(grid, values, tuple(float(s) for s in shift_mm), concentration)


def reference_stack(support, grid: VoxelGrid, shift_grid: ShiftGrid,
                    concentration: float, subsamples: int = 4) -> np.ndarray:
    """Reference images for every shift: (count, nx, ny, nz), enumeration
    order. Precompute once when scoring many reconstructions."""
    out = np.empty((shift_grid.count,) + grid.shape)
    for k, shift in enumerate(shift_grid.shifts()):
        out[k] = rasterize_reference(support, shift, grid, concentration, subsamples).values
    return out


def psnr(image: np.ndarray, reference: np.ndarray, peak: float) -> float:
    """10*log10(peak^2 / MSE); +inf when the images are identical."""
    image = np.asarray(image, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if image.shape != reference.shape:
        raise ValueError("image shapes differ")
    if peak <= 0:
        raise ValueError("peak must be positive")
    diff = image - reference
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return np.inf
    return 10.0 * np.log10(peak * peak / mse)


def _gaussian_window(taps: int, sigma: float) -> np.ndarray:
    t = np.arange(taps, dtype=np.float64) - (taps - 1) / 2.0
    w = np.exp(-0.5 * (t / sigma) ** 2)
    return w / w.sum()


def _filter3(volume: np.ndarray, window: np.ndarray) -> np.ndarray:
    out = volume
    for axis in range(3):
        out = correlate1d(out, window, axis=axis, mode="reflect")
    return out


def ssim(image: np.ndarray, reference: np.ndarray, dynamic_range: float,
         taps: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Mean structural similarity over all voxel-centered Gaussian windows.

    Per window: (2 mu_x mu_r + C1)(2 cov + C2) /
                ((mu_x^2 + mu_r^2 + C1)(var_x + var_r + C2))
    with C1 = (0.01 L)^2, C2 = (0.03 L)^2, L the dynamic range. Weighted
    (biased) moments, symmetric boundary handling. Length-1 axes pass
    through the window unchanged.
    """
    x = np.asarray(image, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if x.shape != r.shape:
        raise ValueError("image shapes differ")
    if x.ndim != 3:
        raise ValueError("ssim expects (nx, ny, nz) volumes")
    if dynamic_range <= 0:
        raise ValueError("dynamic range must be positive")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    w = _gaussian_window(taps, sigma)
    mu_x = _filter3(x, w)
    mu_r = _filter3(r, w)
    var_x = _filter3(x * x, w) - mu_x * mu_x
    var_r = _filter3(r * r, w) - mu_r * mu_r
    cov = _filter3(x * r, w) - mu_x * mu_r
    num = (2.0 * mu_x * mu_r + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_r * mu_r + c1) * (var_x + var_r + c2)
    return float(np.mean(num / den))


@dataclass
class ShiftMetricResult:
    """Max-over-shifts outcome for one metric."""

    metric: str
    value: float
    argmax_shift: tuple[float, float, float]
    shifts: np.ndarray
    per_shift: np.ndarray


@dataclass
class QualityReport:
    """Both shift-tolerant quality numbers plus the per-shift table."""

    eps_psnr: float
    eps_ssim: float
    argmax_psnr: tuple[float, float, float]
    argmax_ssim: tuple[float, float, float]
    shifts: np.ndarray
    psnr_values: np.ndarray
    ssim_values: np.ndarray


def _metric_values(image, stack, metric, peak, dynamic_range):
    values = np.empty(stack.shape[0])
    for k in range(stack.shape[0]):
        if metric == "psnr":
            values[k] = psnr(image, stack[k], peak)
        else:
            values[k] = ssim(image, stack[k], dynamic_range)
    return values


def _argmax_first(values: np.ndarray) -> int:
    best = 0
    for k in range(1, values.shape[0]):
        if values[k] > values[best]:
            best = k
    return best


def shift_max_metric(image: np.ndarray, support, grid: VoxelGrid,
                     shift_grid: ShiftGrid, metric: str, *,
                     concentration: float, subsamples: int = 4,
                     peak: float | None = None,
                     dynamic_range: float | None = None,
                     stack: np.ndarray | None = None) -> ShiftMetricResult:
    """Maximum of the metric against the support rasterized at every shift.

    ``metric`` is "psnr" (requires peak) or "ssim" (requires dynamic_range).
    A precomputed reference_stack can be passed to amortize rasterization
    over many evaluations; it must match the shift grid.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape != grid.shape:
        raise ValueError("image does not match the grid shape")
    if metric not in ("psnr", "ssim"):
        raise ValueError("metric must be 'psnr' or 'ssim'")
    if metric == "psnr" and peak is None:
        raise ValueError("psnr requires a peak value")
    if metric == "ssim" and dynamic_range is None:
        raise ValueError("ssim requires a dynamic range")
    if stack is None:
        stack = reference_stack(support, grid, shift_grid, concentration, subsamples)
    elif stack.shape != (shift_grid.count,) + grid.shape:
        raise ValueError("precomputed stack does not match the shift grid")
    values = _metric_values(image, stack, metric, peak, dynamic_range)
    best = _argmax_first(values)
    shifts = shift_grid.shifts()
    argmax = tuple(float(v) for v in shifts[best])
    return ShiftMetricResult(metric, float(values[best]), argmax, shifts, values)


def quality_report(image: np.ndarray, support, grid: VoxelGrid,
                   shift_grid: ShiftGrid, *, concentration: float,
                   subsamples: int = 4, peak: float = 100.0,
                   dynamic_range: float = 100.0,
                   stack: np.ndarray | None = None) -> QualityReport:
    """Evaluate both metrics over one shared reference stack."""
    if stack is None:
        stack = reference_stack(support, grid, shift_grid, concentration, subsamples)
    res_p = shift_max_metric(image, support, grid, shift_grid, "psnr",
                             concentration=concentration, subsamples=subsamples,
                             peak=peak, stack=stack)
    res_s = shift_max_metric(image, support, grid, shift_grid, "ssim",
                             concentration=concentration, subsamples=subsamples,
                             dynamic_range=dynamic_range, stack=stack)
    return QualityReport(res_p.value, res_s.value, res_p.argmax_shift,
                         res_s.argmax_shift, res_p.shifts, res_p.per_shift,
                         res_s.per_shift)
