"""Synthetic signal acquisition: background, empty scans, noisy measurements.

The scanner background is modeled per spectral component as a fixed mean
(peaked at odd harmonics of each drive frequency), an optional linear drift
in the scan index, and additive complex Gaussian noise. A configurable
subset of components carries inflated noise ("outliers", e.g. mains or
amplifier interference lines); repetitions of a scan average the noise down
by sqrt(repetitions).

Scan scheduling interleaves empty (blank) scans with calibration scans:
one empty scan, then a bracket of ``scans_per_bracket`` calibration scans,
then the next empty scan, and so on, with a final empty scan after the last
bracket. Global scan indices feed the drift term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Phantom, SystemMatrix

__all__ = [
    "BackgroundModel",
    "EmptyScanSet",
    "Measurement",
    "make_background",
    "acquisition_schedule",
    "draw_empty_scans",
    "draw_calibration_scans",
    "draw_phantom_measurement",
    "background_mean",
    "background_variance",
]


@dataclass
class BackgroundModel:
    """Per-component background statistics.

    ``base_variance`` is the Gaussian variance of the real part and of the
    imaginary part of each component separately. ``outlier_mask`` marks
    components whose noise std is multiplied by ``outlier_scale``. ``drift``
    is a complex slope added as drift * scan_index.
    """

    mean_spectrum: np.ndarray
    base_variance: np.ndarray
    outlier_mask: np.ndarray
    outlier_scale: float
    drift: np.ndarray

    def __post_init__(self):
        self.mean_spectrum = np.asarray(self.mean_spectrum, dtype=np.complex128)
        if self.mean_spectrum.ndim != 2:
            raise ValueError("mean_spectrum must have shape (coils, freqs)")
        shape = self.mean_spectrum.shape
        self.base_variance = np.broadcast_to(
            np.asarray(self.base_variance, dtype=np.float64), shape
        ).copy()
        if np.any(self.base_variance < 0):
            raise ValueError("base_variance must be nonnegative")
        self.outlier_mask = np.broadcast_to(
            np.asarray(self.outlier_mask, dtype=bool), shape
        ).copy()
        if self.outlier_scale < 1:
            raise ValueError("outlier_scale must be >= 1")
        self.outlier_scale = float(self.outlier_scale)
        self.drift = np.broadcast_to(
            np.asarray(self.drift, dtype=np.complex128), shape
        ).copy()

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean_spectrum.shape

    def outlier_indices(self) -> list[tuple[int, int]]:
        """Flagged components as (coil, frequency index) pairs."""
        return [tuple(idx) for idx in np.argwhere(self.outlier_mask)]

    def noise_std(self) -> np.ndarray:
        """Effective per-part noise std of a single scan."""
        std = np.sqrt(self.base_variance)
        return np.where(self.outlier_mask, std * self.outlier_scale, std)


def make_background(coils: int, freq_count: int, period_ms: float,
                    drive_frequencies_khz, base_std: float,
                    mean_peak: float, mean_decay: float = 0.5,
                    outlier_fraction: float = 0.03, outlier_scale: float = 100.0,
                    drift_scale: float = 0.0, seed: int = 0) -> BackgroundModel:
    """Stock background profile.

    The mean spectrum has peaks of amplitude mean_peak * mean_decay**k at the
    odd harmonics (1, 3, 5, ...) of every drive frequency, with random phases
    drawn from ``seed``. A fraction of all components (rounded) is flagged as
    outliers. ``drift_scale`` expresses the per-scan drift magnitude in units
    of base_std.
    """
    if base_std < 0 or mean_peak < 0 or not 0 <= outlier_fraction <= 1:
        raise ValueError("invalid background profile parameters")
    rng = np.random.default_rng(seed)
    mean = np.zeros((coils, freq_count), dtype=np.complex128)
    for f in drive_frequencies_khz:
        base_bin = round(f * period_ms)
        k = 0
        while True:
            h = 2 * k + 1
            j = h * base_bin
            if j >= freq_count:
                break
            phase = rng.uniform(0.0, 2.0 * np.pi, size=coils)
            mean[:, j] += mean_peak * mean_decay**k * np.exp(1j * phase)
            k += 1
    total = coils * freq_count
    n_out = int(round(outlier_fraction * total))
    mask = np.zeros(total, dtype=bool)
    if n_out > 0:
        mask[rng.choice(total, size=n_out, replace=False)] = True
    mask = mask.reshape(coils, freq_count)
    if drift_scale != 0.0:
        drift = drift_scale * base_std * (
            rng.standard_normal((coils, freq_count))
            + 1j * rng.standard_normal((coils, freq_count))
        )
    else:
        drift = np.zeros((coils, freq_count), dtype=np.complex128)
    return BackgroundModel(mean, base_std**2, mask, outlier_scale, drift)


@dataclass
class EmptyScanSet:
    """Blank scanner spectra: shape (count, coils, freqs), with the global
    scan index of each scan."""

    spectra: np.ndarray
    scan_schedule: np.ndarray
    seed: int

    def __post_init__(self):
        self.spectra = np.asarray(self.spectra, dtype=np.complex128)
        if self.spectra.ndim != 3:
            raise ValueError("empty-scan spectra must have shape (count, coils, freqs)")
        if self.spectra.shape[0] < 2:
            raise ValueError("at least 2 empty scans are required")
        self.scan_schedule = np.asarray(self.scan_schedule, dtype=np.int64)
        if self.scan_schedule.shape != (self.spectra.shape[0],):
            raise ValueError("scan_schedule must give one index per empty scan")

    @property
    def count(self) -> int:
        return self.spectra.shape[0]


@dataclass
class Measurement:
    """One acquired spectrum set (coils, freqs)."""

    spectrum: np.ndarray
    repetitions: int
    seed: int
    scan_index: int = 0

    def __post_init__(self):
        self.spectrum = np.asarray(self.spectrum, dtype=np.complex128)
        if self.spectrum.ndim != 2:
            raise ValueError("measurement spectrum must have shape (coils, freqs)")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


def acquisition_schedule(voxel_count: int, scans_per_bracket: int):
    """Global scan indices of calibration and empty scans.

    Returns (calibration_indices, empty_indices). Empty scan b sits at index
    b * (Q + 1); the q-th calibration scan of bracket b at b*(Q+1) + 1 + q.
    The number of empty scans is ceil(m/Q) + 1 so every bracket is enclosed.
    """
    if voxel_count < 1:
        raise ValueError("voxel_count must be positive")
    q = int(scans_per_bracket)
    if q < 2:
        raise ValueError("scans_per_bracket must be >= 2")
    brackets = -(-voxel_count // q)
    empty = np.arange(brackets + 1, dtype=np.int64) * (q + 1)
    i = np.arange(voxel_count, dtype=np.int64)
    calib = (i // q) * (q + 1) + 1 + (i % q)
    return calib, empty


def _draw_noise(rng, shape, std, repetitions):
    scale = std / np.sqrt(repetitions)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_empty_scans(bg: BackgroundModel, count: int, seed: int,
                     schedule=None, repetitions: int = 1) -> EmptyScanSet:
    """Draw ``count`` blank scans. ``schedule`` defaults to 0..count-1."""
    if count < 2:
        raise ValueError("at least 2 empty scans are required")
    if schedule is None:
        schedule = np.arange(count, dtype=np.int64)
    schedule = np.asarray(schedule, dtype=np.int64)
    if schedule.shape != (count,):
        raise ValueError("schedule must give one scan index per empty scan")
    rng = np.random.default_rng(seed)
    noise = _draw_noise(rng, (count,) + bg.shape, bg.noise_std()[None, :, :], repetitions)
    spectra = bg.mean_spectrum[None, :, :] + bg.drift[None, :, :] * schedule[:, None, None] + noise
    return EmptyScanSet(spectra, schedule, seed)


def draw_calibration_scans(system: SystemMatrix, bg: BackgroundModel,
                           concentration: float, seed: int,
                           scan_indices, repetitions: int = 1) -> np.ndarray:
    """Noisy delta-sample spectra, one scan per voxel: (voxels, coils, freqs).

    Scan i measures a point sample of the given concentration in voxel i at
    global scan index scan_indices[i].
    """
    if concentration <= 0:
        raise ValueError("calibration concentration must be positive")
    scan_indices = np.asarray(scan_indices, dtype=np.int64)
    if scan_indices.shape != (system.voxel_count,):
        raise ValueError("need one scan index per voxel")
    if bg.shape != (system.coils, system.freq_count):
        raise ValueError("background shape does not match the system matrix")
    rng = np.random.default_rng(seed)
    signal = concentration * np.transpose(system.data, (2, 0, 1))
    noise = _draw_noise(rng, signal.shape, bg.noise_std()[None, :, :], repetitions)
    return (
        signal
        + bg.mean_spectrum[None, :, :]
        + bg.drift[None, :, :] * scan_indices[:, None, None]
        + noise
    )


def draw_phantom_measurement(system: SystemMatrix, phantom: Phantom,
                             bg: BackgroundModel, seed: int,
                             scan_index: int = 0, repetitions: int = 1) -> Measurement:
    """One noisy phantom measurement: S*x + mean + drift*scan_index + noise."""
    if bg.shape != (system.coils, system.freq_count):
        raise ValueError("background shape does not match the system matrix")
    rng = np.random.default_rng(seed)
    noise = _draw_noise(rng, bg.shape, bg.noise_std(), repetitions)
    spectrum = system.apply(phantom.flat()) + bg.mean_spectrum + bg.drift * scan_index + noise
    return Measurement(spectrum, repetitions, seed, scan_index)


def background_mean(scans: EmptyScanSet) -> np.ndarray:
    """Componentwise mean spectrum over all empty scans."""
    return scans.spectra.mean(axis=0)


def background_variance(scans: EmptyScanSet):
    """Sample variance (ddof=1) of real and imaginary parts: a pair of
    (coils, freqs) arrays."""
    var_re = scans.spectra.real.var(axis=0, ddof=1)
    var_im = scans.spectra.imag.var(axis=0, ddof=1)
    return var_re, var_im
