"""From raw spectra to a reduced real linear system.

Steps, in pipeline order: restrict to a frequency band, estimate the
per-scan background by interpolating the enclosing empty scans, score every
component by its signal-to-background ratio, threshold the scores, subtract
the background, optionally whiten rows by the inverse empty-scan std, split
complex components into real/imaginary row pairs, and scale the stacked
system to unit operator norm.

Row order is canonical throughout: coil-major, then selected frequency
index, with the real row immediately before the imaginary row of each
component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acquisition import EmptyScanSet, Measurement, background_mean
from .errors import NumericalError
from .model import SystemMatrix

__all__ = [
    "FrequencySelection",
    "WhiteningWeights",
    "ReducedSystem",
    "band_pass",
    "interp_background",
    "interp_backgrounds",
    "snr_scores",
    "select_frequencies",
    "subtract_background",
    "calibration_system_matrix",
    "whitening_weights",
    "power_iteration_norm",
    "assemble_reduced_system",
    "complex_rows",
]


def band_pass(freq_count: int, period_ms: float, b1_khz: float, b2_khz: float) -> np.ndarray:
    """Indices j with b1 <= j/period <= b2, ascending. b2 may be infinite."""
    if freq_count < 1 or period_ms <= 0:
        raise ValueError("freq_count and period must be positive")
    if b1_khz < 0 or not b1_khz < b2_khz:
        raise ValueError("band edges must satisfy 0 <= b1 < b2")
    f = np.arange(freq_count) / period_ms
    return np.nonzero((f >= b1_khz) & (f <= b2_khz))[0]


def interp_background(scans: EmptyScanSet, calibration_index: int,
                      scans_per_bracket: int) -> np.ndarray:
    """Background estimate for one calibration scan.

    Calibration scan i lives in bracket b = i // Q between empty scans b and
    b+1 and gets mu = kappa * spectra[b] + (1 - kappa) * spectra[b+1] with
    kappa = (i mod Q)/(Q - 1): equidistant within the bracket, kappa = 0 for
    the bracket's first scan.
    """
    q = int(scans_per_bracket)
    if q < 2:
        raise ValueError("scans_per_bracket must be >= 2")
    i = int(calibration_index)
    if i < 0:
        raise ValueError("calibration_index must be nonnegative")
    b = i // q
    if b + 1 >= scans.count:
        raise ValueError("calibration_index beyond the empty-scan schedule")
    kappa = (i % q) / (q - 1)
    return kappa * scans.spectra[b] + (1.0 - kappa) * scans.spectra[b + 1]


def interp_backgrounds(scans: EmptyScanSet, calibration_count: int,
                       scans_per_bracket: int) -> np.ndarray:
    """Stacked interp_background for scans 0..calibration_count-1:
    (count, coils, freqs)."""
    q = int(scans_per_bracket)
    if q < 2:
        raise ValueError("scans_per_bracket must be >= 2")
    i = np.arange(calibration_count)
    b = i // q
    if calibration_count > 0 and b[-1] + 1 >= scans.count:
        raise ValueError("calibration count beyond the empty-scan schedule")
    kappa = (i % q) / (q - 1)
    k = kappa[:, None, None]
    return k * scans.spectra[b] + (1.0 - k) * scans.spectra[b + 1]


def _as_scan_array(calib_scans) -> np.ndarray:
    if isinstance(calib_scans, np.ndarray):
        arr = calib_scans
    else:
        arr = np.stack([
            m.spectrum if isinstance(m, Measurement) else np.asarray(m)
            for m in calib_scans
        ])
    arr = np.asarray(arr, dtype=np.complex128)
    if arr.ndim != 3:
        raise ValueError("calibration scans must have shape (count, coils, freqs)")
    return arr


def snr_scores(calib_scans, interp_bg: np.ndarray, empty_scans: EmptyScanSet,
               band_indices: np.ndarray, scan_subset=None) -> np.ndarray:
    """Signal-to-background score per (coil, in-band component).

    Numerator: mean over calibration scans of the magnitude of the
    background-corrected component. Denominator: mean magnitude of the
    empty-scan deviations from their own mean. A zero denominator yields
    +inf (a component with no background noise is perfectly reliable).
    """
    calib = _as_scan_array(calib_scans)
    interp_bg = np.asarray(interp_bg, dtype=np.complex128)
    if calib.shape[0] == 0:
        raise ValueError("empty calibration set")
    if interp_bg.shape != calib.shape:
        raise ValueError("interpolated backgrounds must match the calibration scans")
    band_indices = np.asarray(band_indices, dtype=np.int64)
    if scan_subset is not None:
        scan_subset = np.asarray(scan_subset, dtype=np.int64)
        if scan_subset.size == 0:
            raise ValueError("empty calibration subset")
        calib = calib[scan_subset]
        interp_bg = interp_bg[scan_subset]
    num = np.abs(calib[:, :, band_indices] - interp_bg[:, :, band_indices]).mean(axis=0)
    mu = background_mean(empty_scans)
    den = np.abs(empty_scans.spectra[:, :, band_indices] - mu[None, :, band_indices]).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), np.inf)
    return scores


@dataclass
class FrequencySelection:
    """Thresholded component choice: per coil, the retained frequency indices."""

    band_indices: np.ndarray
    scores: np.ndarray
    tau: float
    selected: list

    def __post_init__(self):
        self.band_indices = np.asarray(self.band_indices, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape[1] != self.band_indices.shape[0]:
            raise ValueError("scores must align with the band indices")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        self.selected = [np.asarray(s, dtype=np.int64) for s in self.selected]
        if len(self.selected) != self.scores.shape[0]:
            raise ValueError("need one selection per coil")

    @property
    def coils(self) -> int:
        return self.scores.shape[0]

    @property
    def row_count(self) -> int:
        """Rows of the reduced real system: a real/imag pair per component."""
        return 2 * sum(len(s) for s in self.selected)


def select_frequencies(scores: np.ndarray, tau: float,
                       band_indices: np.ndarray) -> FrequencySelection:
    """Keep, per coil, the in-band components whose score reaches tau."""
    scores = np.asarray(scores, dtype=np.float64)
    band_indices = np.asarray(band_indices, dtype=np.int64)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    selected = [band_indices[scores[c] >= tau] for c in range(scores.shape[0])]
    return FrequencySelection(band_indices, scores, float(tau), selected)


def subtract_background(measurement, background: np.ndarray) -> np.ndarray:
    """Componentwise background subtraction; shapes must match."""
    spectrum = measurement.spectrum if isinstance(measurement, Measurement) else np.asarray(measurement)
    background = np.asarray(background)
    if spectrum.shape != background.shape:
        raise ValueError("measurement and background shapes differ")
    return spectrum - background


def calibration_system_matrix(calib_scans, interp_bg: np.ndarray,
                              concentration: float) -> np.ndarray:
    """System-matrix estimate from calibration scans: background-corrected
    per-voxel spectra divided by the calibration concentration, (coils,
    freqs, voxels)."""
    calib = _as_scan_array(calib_scans)
    if concentration <= 0:
        raise ValueError("calibration concentration must be positive")
    if np.asarray(interp_bg).shape != calib.shape:
        raise ValueError("interpolated backgrounds must match the calibration scans")
    corrected = (calib - interp_bg) / concentration
    return np.transpose(corrected, (1, 2, 0))


@dataclass
class WhiteningWeights:
    """Per-row inverse-std weights in canonical row order."""

    weights: np.ndarray
    floor: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or np.any(~np.isfinite(self.weights)) or np.any(self.weights <= 0):
            raise ValueError("whitening weights must be positive and finite")


def whitening_weights(empty_scans: EmptyScanSet, selection: FrequencySelection,
                      floor_ratio: float = 1e-8) -> WhiteningWeights:
    """Inverse empty-scan std per retained row, floored at floor_ratio times
    the largest retained std so near-constant components cannot blow up."""
    stds = []
    for c, sel in enumerate(selection.selected):
        block = empty_scans.spectra[:, c, sel]
        std = np.empty((2, sel.size))
        std[0] = block.real.std(axis=0, ddof=1)
        std[1] = block.imag.std(axis=0, ddof=1)
        stds.append(std.T.ravel())  # (re, im) interleaved per component
    flat = np.concatenate(stds) if stds else np.empty(0)
    if flat.size == 0:
        raise ValueError("empty selection")
    max_std = flat.max()
    if max_std == 0.0:
        raise NumericalError("all retained components are constant across empty scans")
    floor = floor_ratio * max_std
    return WhiteningWeights(1.0 / np.maximum(flat, floor), floor)


def power_iteration_norm(a: np.ndarray, tol: float = 1e-6, max_iter: int = 500) -> float:
    """Spectral norm estimate by power iteration on A^T A.

    Deterministic start vector. Stops once the Rayleigh quotient is
    certified to lie within tol of the top eigenvalue, using the
    eigen-residual together with a gap estimate from the residual decay (a
    plain change-based stop can halt far from the true norm when the
    spectral gap is small). Raises NumericalError if max_iter is exhausted.
    """
    a = np.asarray(a, dtype=np.float64)
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(a.shape[1])
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return 0.0
    v /= norm
    res_prev = np.inf
    for k in range(max_iter):
        w = a.T @ (a @ v)
        lam = float(v @ w)
        if lam <= 0.0:
            return 0.0
        res = float(np.linalg.norm(w - lam * v))
        if res <= 1e-12 * lam:
            # at the rounding floor the eigenvalue error is below res itself
            return float(np.sqrt(lam))
        rho = res / res_prev
        # certify |lam - lam_max| <= tol * lam via res^2 / gap with the gap
        # estimated from the residual decay ratio; needs one prior residual
        if k >= 1 and rho < 1.0 and res * res <= 0.5 * tol * lam * lam * (1.0 - rho):
            return float(np.sqrt(lam))
        res_prev = res
        v = w / np.linalg.norm(w)
    raise NumericalError("power iteration did not converge")


@dataclass
class ReducedSystem:
    """Real linear system A x = y after selection, splitting and scaling.

    ``row_index`` maps each row to (coil, frequency index, part) with part
    0 = real, 1 = imaginary; ``scale`` is the operator norm divided out of
    (A, y); ``whitened`` records whether rows were weighted first.
    """

    A: np.ndarray
    y: np.ndarray
    row_index: np.ndarray | None = None
    scale: float = 1.0
    whitened: bool = False
    tau: float | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.A.ndim != 2 or self.y.shape != (self.A.shape[0],):
            raise ValueError("A must be (n, m) with matching y")
        if self.row_index is not None:
            self.row_index = np.asarray(self.row_index, dtype=np.int64)
            if self.row_index.shape != (self.A.shape[0], 3):
                raise ValueError("row_index must be (n, 3)")

    @property
    def rows(self) -> int:
        return self.A.shape[0]

    @property
    def voxels(self) -> int:
        return self.A.shape[1]


def assemble_reduced_system(system, y_spectrum: np.ndarray,
                            selection: FrequencySelection,
                            weights: WhiteningWeights | None = None) -> ReducedSystem:
    """Stack selected components into real row pairs and normalize.

    ``system`` is a SystemMatrix or a raw (coils, freqs, voxels) complex
    array; ``y_spectrum`` the background-subtracted measurement. Optional
    whitening multiplies rows and data entries before the operator norm of
    the stacked matrix is estimated and divided out of both A and y.
    """
    data = system.data if isinstance(system, SystemMatrix) else np.asarray(system, dtype=np.complex128)
    if data.ndim != 3:
        raise ValueError("system matrix must have shape (coils, freqs, voxels)")
    y_spectrum = np.asarray(y_spectrum, dtype=np.complex128)
    if y_spectrum.shape != data.shape[:2]:
        raise ValueError("measurement spectrum does not match the system matrix")
    n = selection.row_count
    if n == 0:
        raise ValueError("empty selection: no components retained")
    m = data.shape[2]
    a = np.empty((n, m))
    y = np.empty(n)
    row_index = np.empty((n, 3), dtype=np.int64)
    pos = 0
    for c, sel in enumerate(selection.selected):
        k = sel.size
        if k == 0:
            continue
        block = data[c, sel, :]
        a[pos:pos + 2 * k:2] = block.real
        a[pos + 1:pos + 2 * k:2] = block.imag
        y[pos:pos + 2 * k:2] = y_spectrum[c, sel].real
        y[pos + 1:pos + 2 * k:2] = y_spectrum[c, sel].imag
        row_index[pos:pos + 2 * k:2] = np.stack(
            [np.full(k, c), sel, np.zeros(k, dtype=np.int64)], axis=1)
        row_index[pos + 1:pos + 2 * k:2] = np.stack(
            [np.full(k, c), sel, np.ones(k, dtype=np.int64)], axis=1)
        pos += 2 * k
    if weights is not None:
        w = weights.weights
        if w.shape != (n,):
            raise ValueError("whitening weights do not match the selection")
        a *= w[:, None]
        y *= w
    scale = power_iteration_norm(a)
    if not np.isfinite(scale) or scale <= 0.0:
        raise NumericalError("reduced system has no usable operator norm")
    a /= scale
    y /= scale
    return ReducedSystem(a, y, row_index, scale, weights is not None, selection.tau)


def complex_rows(system: ReducedSystem) -> np.ndarray:
    """Recombine stored real/imag row pairs into complex rows (n/2, m).

    Together with row_index this reconstructs the selected entries of the
    complex system as stored, i.e. after whitening and operator-norm
    scaling.
    """
    if system.rows % 2 != 0:
        raise ValueError("reduced system rows do not pair up")
    return system.A[0::2] + 1j * system.A[1::2]
