"""Signal preprocessing: raw multichannel trials to 200 Hz envelope trials.

The chain is detrend -> common-average re-reference -> 70-170 Hz bandpass +
50 Hz notch (both zero-phase) -> per-channel scale/clamp -> Hilbert envelope
-> anti-aliased integer downsampling to 200 Hz. Every stage is a pure
function on float64 arrays; identical inputs give bitwise-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

DEFAULT_BAND = (70.0, 170.0)
DEFAULT_NOTCH_HZ = 50.0
DEFAULT_NOTCH_Q = 30.0
DEFAULT_BP_ORDER = 4
DEFAULT_CLAMP = 5.0
ENVELOPE_FS = 200.0
# Quadrature bound: |analytic| = sqrt(x^2 + H[x]^2) <= sqrt(2) * clamp when
# both components saturate, so envelope values are validated against it.
ENVELOPE_BOUND_FACTOR = math.sqrt(2.0)


@dataclass
class RawTrial:
    """One recorded trial: channels x samples at the acquisition rate."""

    data: np.ndarray
    fs: float
    word_id: int
    block: int
    subject: int

    def validate(self, band_hi: float = DEFAULT_BAND[1]) -> None:
        if self.data.ndim != 2:
            raise ValueError(f"trial data must be 2-D, got shape {self.data.shape}")
        c, t = self.data.shape
        if c < 1 or t < 2:
            raise ValueError(f"trial too small: {c} channels x {t} samples")
        if self.fs <= 2.0 * band_hi:
            raise ValueError(f"fs={self.fs} Hz must exceed 2 x {band_hi} Hz")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("trial contains non-finite values")


@dataclass
class EnvelopeTrial:
    """Preprocessed trial: Hilbert-envelope channels at 200 Hz."""

    data: np.ndarray
    word_id: int
    block: int
    subject: int
    fs: float = ENVELOPE_FS

    def validate(self, clamp: float = DEFAULT_CLAMP) -> None:
        if not np.all(np.isfinite(self.data)):
            raise ValueError("envelope contains non-finite values")
        bound = ENVELOPE_BOUND_FACTOR * clamp * (1.0 + 1e-9)
        peak = float(np.max(np.abs(self.data))) if self.data.size else 0.0
        if peak > bound:
            raise ValueError(f"envelope peak {peak:.3g} exceeds bound {bound:.3g}")


@dataclass
class PreprocessConfig:
    band: tuple[float, float] = DEFAULT_BAND
    notch_hz: float = DEFAULT_NOTCH_HZ
    notch_q: float = DEFAULT_NOTCH_Q
    bp_order: int = DEFAULT_BP_ORDER
    clamp: float = DEFAULT_CLAMP
    fs_out: float = ENVELOPE_FS
    # anti-alias cutoff as a fraction of the output Nyquist
    aa_cutoff_frac: float = 0.8
    extra: dict = field(default_factory=dict)


def detrend(x: np.ndarray) -> np.ndarray:
    """Remove the least-squares linear fit along the last axis.

    The residual has zero mean and zero covariance with the time index.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise ValueError("detrend needs at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("detrend: non-finite input")
    t = np.arange(n, dtype=np.float64)
    t0 = t - t.mean()
    denom = float(t0 @ t0)
    slope = (x @ t0) / denom
    intercept = x.mean(axis=-1)
    return x - intercept[..., None] - slope[..., None] * t0


def rereference(data: np.ndarray) -> np.ndarray:
    """Common-average reference: subtract the channel mean at each sample."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("rereference needs a matrix with >= 2 channels")
    return data - data.mean(axis=0, keepdims=True)


def _bandpass_sos(band: tuple[float, float], fs: float, order: int) -> np.ndarray:
    lo, hi = band
    if not 0.0 < lo < hi < fs / 2.0:
        raise ValueError(f"band {band} must lie inside (0, {fs / 2.0}) Hz")
    return sps.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")


def bandpass_notch(
    data: np.ndarray,
    fs: float,
    band: tuple[float, float] = DEFAULT_BAND,
    notch_hz: float = DEFAULT_NOTCH_HZ,
    notch_q: float = DEFAULT_NOTCH_Q,
    order: int = DEFAULT_BP_ORDER,
) -> np.ndarray:
    """Zero-phase Butterworth bandpass plus IIR notch along the last axis.

    Both filters run forward-backward (filtfilt), so the net phase response
    is zero and a symmetric pulse stays symmetric.
    """
    data = np.asarray(data, dtype=np.float64)
    sos = _bandpass_sos(band, fs, order)
    out = sps.sosfiltfilt(sos, data, axis=-1)
    b, a = sps.iirnotch(notch_hz, notch_q, fs=fs)
    return sps.filtfilt(b, a, out, axis=-1)


def scale_clamp(data: np.ndarray, clamp: float = DEFAULT_CLAMP) -> np.ndarray:
    """Per-channel standardization followed by clipping to [-clamp, clamp].

    Zero-variance channels map to all zeros.
    """
    if clamp <= 0:
        raise ValueError("clamp must be positive")
    data = np.asarray(data, dtype=np.float64)
    mean = data.mean(axis=-1, keepdims=True)
    std = data.std(axis=-1, keepdims=True)
    safe = np.where(std > 0, std, 1.0)
    z = np.where(std > 0, (data - mean) / safe, 0.0)
    return np.clip(z, -clamp, clamp)


def hilbert_envelope(x: np.ndarray) -> np.ndarray:
    """Magnitude of the analytic signal, computed in the frequency domain.

    Negative-frequency bins are zeroed, positive bins doubled, and the DC
    (and, for even lengths, Nyquist) bins kept, then the spectrum is
    inverse-transformed. Output is nonnegative and the same length.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 4:
        raise ValueError("hilbert_envelope needs at least 4 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("hilbert_envelope: non-finite input")
    spec = np.fft.fft(x, axis=-1)
    gain = np.zeros(n)
    gain[0] = 1.0
    if n % 2 == 0:
        gain[n // 2] = 1.0
        gain[1 : n // 2] = 2.0
    else:
        gain[1 : (n + 1) // 2] = 2.0
    analytic = np.fft.ifft(spec * gain, axis=-1)
    return np.abs(analytic)


def analytic_signal(x: np.ndarray) -> np.ndarray:
    """Complex analytic signal (same construction as hilbert_envelope)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    spec = np.fft.fft(x, axis=-1)
    gain = np.zeros(n)
    gain[0] = 1.0
    if n % 2 == 0:
        gain[n // 2] = 1.0
        gain[1 : n // 2] = 2.0
    else:
        gain[1 : (n + 1) // 2] = 2.0
    return np.fft.ifft(spec * gain, axis=-1)


def downsample(
    data: np.ndarray,
    fs_in: float,
    fs_out: float,
    aa_cutoff_frac: float = 0.8,
) -> np.ndarray:
    """Anti-aliased integer decimation along the last axis.

    fs_in must be an integer multiple of fs_out. A zero-phase Butterworth
    lowpass at ``aa_cutoff_frac * fs_out / 2`` runs before keeping every
    factor-th sample.
    """
    data = np.asarray(data, dtype=np.float64)
    ratio = fs_in / fs_out
    factor = int(round(ratio))
    if abs(ratio - factor) > 1e-9 or factor < 1:
        raise ValueError(f"fs_in={fs_in} is not an integer multiple of fs_out={fs_out}")
    if factor == 1:
        return data.copy()
    cutoff = aa_cutoff_frac * fs_out / 2.0
    sos = sps.butter(8, cutoff, btype="lowpass", fs=fs_in, output="sos")
    smoothed = sps.sosfiltfilt(sos, data, axis=-1)
    return smoothed[..., ::factor].copy()


def preprocess(trial: RawTrial, cfg: PreprocessConfig | None = None) -> EnvelopeTrial:
    """Run the full chain on one trial and return its envelope at 200 Hz."""
    if cfg is None:
        cfg = PreprocessConfig()
    trial.validate(band_hi=cfg.band[1])
    x = detrend(trial.data)
    x = rereference(x)
    x = bandpass_notch(x, trial.fs, cfg.band, cfg.notch_hz, cfg.notch_q, cfg.bp_order)
    x = scale_clamp(x, cfg.clamp)
    x = hilbert_envelope(x)
    x = downsample(x, trial.fs, cfg.fs_out, cfg.aa_cutoff_frac)
    out = EnvelopeTrial(
        data=x,
        word_id=trial.word_id,
        block=trial.block,
        subject=trial.subject,
        fs=cfg.fs_out,
    )
    out.validate(clamp=cfg.clamp)
    return out
