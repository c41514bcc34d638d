"""Noise-based data augmentation for envelope trials.

Four noise families (Gaussian, centered Poisson, pink, salt & pepper) can be
applied either directly in the time domain or to the FFT coefficients of
each channel. Augmentation always returns new trials and never mutates the
original; callers are responsible for restricting it to training data.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .dsp import EnvelopeTrial


class NoiseKind(enum.Enum):
    GAUSSIAN = "gaussian"
    POISSON = "poisson"
    PINK = "pink"
    SALT_PEPPER = "saltpepper"


class NoiseDomain(enum.Enum):
    TIME = "time"
    FREQUENCY = "freq"


@dataclass
class NoiseConfig:
    """Noise parameters.

    ``amplitude`` scales additive noise; with ``relative_amplitude`` it is a
    fraction of each channel's standard deviation. ``copies`` is the number
    of augmented trials generated per original.
    """

    kind: NoiseKind = NoiseKind.GAUSSIAN
    mu: float = 0.0
    sigma: float = 1.0
    kappa: float = 4.0
    alpha: float = 1.0
    p_s: float = 0.05
    p_p: float = 0.05
    amplitude: float = 0.1
    relative_amplitude: bool = True
    copies: int = 1

    def validate(self) -> None:
        if self.kind is NoiseKind.GAUSSIAN and self.sigma <= 0:
            raise ValueError("sigma must be > 0 for Gaussian noise")
        if self.kind is NoiseKind.POISSON and self.kappa <= 0:
            raise ValueError("kappa must be > 0 for Poisson noise")
        if self.kind is NoiseKind.PINK and self.alpha <= 0:
            raise ValueError("alpha must be > 0 for pink noise")
        if not (0.0 <= self.p_s <= 1.0 and 0.0 <= self.p_p <= 1.0):
            raise ValueError("p_s and p_p must be probabilities")
        if self.p_s + self.p_p > 1.0:
            raise ValueError("p_s + p_p must not exceed 1")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.copies < 0:
            raise ValueError("copies must be >= 0")


def pink_noise(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean unit-variance noise with power spectral density ~ 1/f^alpha.

    White Gaussian noise is shaped in the frequency domain by f^(-alpha/2)
    with the DC bin zeroed, then renormalized.
    """
    if n < 2:
        raise ValueError("pink noise needs n >= 2")
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n)
    shape = np.zeros_like(freqs)
    shape[1:] = freqs[1:] ** (-alpha / 2.0)
    out = np.fft.irfft(spec * shape, n=n)
    out -= out.mean()
    std = out.std()
    if std > 0:
        out /= std
    return out


def sample_noise(cfg: NoiseConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an additive-noise vector of length n.

    Gaussian -> N(mu, sigma^2); Poisson -> Poisson(kappa) - kappa (centered
    so the signal mean is preserved); pink -> unit-variance 1/f^alpha noise.
    Salt & pepper is a substitution, not an additive sample: use
    :func:`salt_pepper`.
    """
    cfg.validate()
    if n < 1:
        raise ValueError("n must be >= 1")
    if cfg.kind is NoiseKind.GAUSSIAN:
        return rng.normal(cfg.mu, cfg.sigma, size=n)
    if cfg.kind is NoiseKind.POISSON:
        return rng.poisson(cfg.kappa, size=n).astype(np.float64) - cfg.kappa
    if cfg.kind is NoiseKind.PINK:
        return pink_noise(n, cfg.alpha, rng)
    raise ValueError(f"{cfg.kind} is applied by substitution, not sampled additively")


def salt_pepper(data: np.ndarray, p_s: float, p_p: float, rng: np.random.Generator) -> np.ndarray:
    """Replace each point with its channel max (prob p_s) or min (prob p_p).

    For 2-D input the max/min are computed per channel (row) before any
    corruption; 1-D input is treated as a single channel.
    """
    if not (0.0 <= p_s <= 1.0 and 0.0 <= p_p <= 1.0 and p_s + p_p <= 1.0):
        raise ValueError("invalid salt/pepper probabilities")
    data = np.asarray(data, dtype=np.float64)
    out = data.copy()
    hi = data.max(axis=-1, keepdims=True)
    lo = data.min(axis=-1, keepdims=True)
    u = rng.random(data.shape)
    salt = u < p_s
    pepper = (u >= p_s) & (u < p_s + p_p)
    out = np.where(salt, np.broadcast_to(hi, data.shape), out)
    out = np.where(pepper, np.broadcast_to(lo, data.shape), out)
    return out


def _channel_scales(data: np.ndarray, cfg: NoiseConfig) -> np.ndarray:
    if cfg.relative_amplitude:
        return cfg.amplitude * data.std(axis=-1, keepdims=True)
    return np.full((data.shape[0], 1), cfg.amplitude)


def _additive_matrix(shape: tuple[int, int], cfg: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    c, t = shape
    if cfg.kind is NoiseKind.PINK:
        return np.stack([pink_noise(t, cfg.alpha, rng) for _ in range(c)])
    return sample_noise(cfg, c * t, rng).reshape(c, t)


def augment_time(trial: EnvelopeTrial, cfg: NoiseConfig, rng: np.random.Generator) -> list[EnvelopeTrial]:
    """Generate ``cfg.copies`` noisy copies by corrupting the envelope directly."""
    cfg.validate()
    out: list[EnvelopeTrial] = []
    for _ in range(cfg.copies):
        if cfg.kind is NoiseKind.SALT_PEPPER:
            data = salt_pepper(trial.data, cfg.p_s, cfg.p_p, rng)
        else:
            noise = _additive_matrix(trial.data.shape, cfg, rng)
            data = trial.data + _channel_scales(trial.data, cfg) * noise
        out.append(replace(trial, data=data))
    return out


def _corrupt_spectrum(x: np.ndarray, cfg: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Corrupt one channel through its non-redundant half spectrum."""
    n = x.shape[-1]
    spec = np.fft.rfft(x)
    m = spec.shape[-1]
    if cfg.kind is NoiseKind.SALT_PEPPER:
        mags = np.abs(spec)
        new_mags = salt_pepper(mags, cfg.p_s, cfg.p_p, rng)
        phases = np.where(mags > 0, spec / np.where(mags > 0, mags, 1.0), 1.0)
        spec = phases * new_mags
    else:
        if cfg.relative_amplitude:
            scale = cfg.amplitude * x.std()
        else:
            scale = cfg.amplitude
        # sqrt(n/2) makes the induced time-domain perturbation variance match
        # the time-domain counterpart at the same amplitude setting
        scale = scale * np.sqrt(n / 2.0)
        re = sample_noise(cfg, m, rng)
        im = sample_noise(cfg, m, rng)
        im[0] = 0.0
        if n % 2 == 0:
            im[-1] = 0.0
        spec = spec + scale * (re + 1j * im)
    return np.fft.irfft(spec, n=n)


def augment_freq(trial: EnvelopeTrial, cfg: NoiseConfig, rng: np.random.Generator) -> list[EnvelopeTrial]:
    """Generate noisy copies by corrupting FFT coefficients per channel.

    Additive noise hits real and imaginary parts of the half-spectrum
    independently (DC/Nyquist stay real); salt & pepper replaces coefficient
    magnitudes while preserving phase. Conjugate symmetry is restored by the
    inverse real FFT, so the output is exactly real.
    """
    cfg.validate()
    out: list[EnvelopeTrial] = []
    for _ in range(cfg.copies):
        data = np.stack([_corrupt_spectrum(ch, cfg, rng) for ch in trial.data])
        out.append(replace(trial, data=data))
    return out


def augment_trial(
    trial: EnvelopeTrial,
    cfg: NoiseConfig,
    domain: NoiseDomain,
    rng: np.random.Generator,
) -> list[EnvelopeTrial]:
    if domain is NoiseDomain.TIME:
        return augment_time(trial, cfg, rng)
    return augment_freq(trial, cfg, rng)
