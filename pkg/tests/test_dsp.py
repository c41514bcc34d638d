import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masd import dsp
from masd.dsp import EnvelopeTrial, PreprocessConfig, RawTrial


def tone(freq, fs=1000.0, secs=1.0, amp=1.0):
    t = np.arange(int(fs * secs)) / fs
    return amp * np.sin(2 * np.pi * freq * t)


def fft_amplitude(x, freq, fs):
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.shape[-1], d=1.0 / fs)
    return np.abs(spec[np.argmin(np.abs(freqs - freq))])


class TestDetrend:
    def test_linear_ramp(self):
        assert np.allclose(dsp.detrend(np.array([1.0, 2.0, 3.0, 4.0])), 0.0, atol=1e-12)

    def test_constant(self):
        assert np.allclose(dsp.detrend(np.array([5.0, 5.0, 5.0])), 0.0, atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_residual_orthogonal_to_time(self, seed):
        x = np.random.default_rng(seed).normal(size=200)
        r = dsp.detrend(x)
        t = np.arange(200.0)
        assert abs(r.mean()) < 1e-9
        assert abs(r @ (t - t.mean())) / 200 < 1e-9

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            dsp.detrend(np.array([1.0, np.nan, 2.0]))


class TestRereference:
    def test_two_channels(self):
        out = dsp.rereference(np.array([[1.0], [3.0]]))
        assert np.array_equal(out, np.array([[-1.0], [1.0]]))

    def test_three_channels(self):
        out = dsp.rereference(np.array([[1.0], [2.0], [3.0]]))
        assert np.array_equal(out, np.array([[-1.0], [0.0], [1.0]]))

    def test_idempotent(self):
        x = np.random.default_rng(0).normal(size=(4, 50))
        once = dsp.rereference(x)
        assert np.allclose(dsp.rereference(once), once, atol=1e-12)

    def test_column_sums_zero(self):
        x = np.random.default_rng(1).normal(size=(6, 30))
        assert np.allclose(dsp.rereference(x).sum(axis=0), 0.0, atol=1e-9)

    def test_single_channel_rejected(self):
        with pytest.raises(ValueError):
            dsp.rereference(np.ones((1, 10)))


class TestBandpassNotch:
    def test_passband_tone(self):
        x = tone(120.0)
        y = dsp.bandpass_notch(x, 1000.0)
        assert fft_amplitude(y, 120, 1000) / fft_amplitude(x, 120, 1000) >= 0.9

    def test_notch_tone(self):
        x = tone(50.0)
        y = dsp.bandpass_notch(x, 1000.0)
        assert fft_amplitude(y, 50, 1000) / fft_amplitude(x, 50, 1000) <= 0.1

    def test_stopband_tone(self):
        x = tone(10.0)
        y = dsp.bandpass_notch(x, 1000.0)
        assert fft_amplitude(y, 10, 1000) / fft_amplitude(x, 10, 1000) <= 0.1

    def test_zero_phase_symmetry(self):
        t = np.arange(1001)
        pulse = np.exp(-0.5 * ((t - 500) / 30.0) ** 2) * np.cos(2 * np.pi * 0.12 * (t - 500))
        y = dsp.bandpass_notch(pulse, 1000.0)
        assert np.abs(y - y[::-1]).max() / np.abs(y).max() < 1e-6

    def test_band_edge_validation(self):
        with pytest.raises(ValueError):
            dsp.bandpass_notch(tone(10.0), 300.0)


class TestScaleClamp:
    def test_constant_channel_zeros(self):
        assert np.array_equal(dsp.scale_clamp(np.full((2, 10), 7.0)), np.zeros((2, 10)))

    def test_mean_maps_to_zero(self):
        x = np.array([[1.0, 2.0, 3.0]])
        out = dsp.scale_clamp(x)
        assert out[0, 1] == 0.0

    def test_clamp_bound(self):
        x = np.zeros((1, 101))
        x[0, 0] = 10.0  # z-score of the spike is 10, well past the default clamp
        out = dsp.scale_clamp(x, clamp=5.0)
        assert out[0, 0] == 5.0
        assert np.abs(out).max() <= 5.0

    def test_invalid_clamp(self):
        with pytest.raises(ValueError):
            dsp.scale_clamp(np.ones((1, 4)), clamp=0.0)


class TestHilbertEnvelope:
    def test_pure_tone_amplitude(self):
        x = tone(50.0, amp=2.5)
        env = dsp.hilbert_envelope(x)
        center = env[100:900]
        assert np.abs(center - 2.5).max() / 2.5 < 0.01

    def test_nonnegative(self):
        x = np.random.default_rng(2).normal(size=500)
        assert dsp.hilbert_envelope(x).min() >= 0.0

    def test_amplitude_modulation(self):
        fs = 1000.0
        t = np.arange(1000) / fs
        mod = 1.0 + 0.5 * np.cos(2 * np.pi * 2.0 * t)
        x = mod * np.sin(2 * np.pi * 50.0 * t)
        env = dsp.hilbert_envelope(x)
        # analytic-signal oracle: for a narrowband carrier the envelope is |mod|
        sl = slice(100, 900)
        assert np.abs(env[sl] - np.abs(mod[sl])).max() / np.abs(mod[sl]).max() < 0.02

    def test_parseval_identity(self):
        x = np.random.default_rng(3).normal(size=512)
        a = dsp.analytic_signal(x)
        spec = np.fft.fft(x)
        n = x.size
        expected = 2.0 * (x**2).sum() - (np.abs(spec[0]) ** 2 + np.abs(spec[n // 2]) ** 2) / n
        assert abs((np.abs(a) ** 2).sum() - expected) / expected < 1e-9

    def test_short_input_rejected(self):
        with pytest.raises(ValueError):
            dsp.hilbert_envelope(np.array([1.0, 2.0, 3.0]))


class TestDownsample:
    def test_length(self):
        x = np.random.default_rng(4).normal(size=(2, 1600))
        assert dsp.downsample(x, 1000.0, 200.0).shape == (2, 320)

    def test_constant_preserved(self):
        x = np.full((1, 800), 3.0)
        assert np.allclose(dsp.downsample(x, 1000.0, 200.0), 3.0, rtol=1e-9)

    def test_identity_when_rates_match(self):
        x = np.random.default_rng(5).normal(size=(2, 100))
        assert np.array_equal(dsp.downsample(x, 200.0, 200.0), x)

    def test_non_integer_factor_rejected(self):
        with pytest.raises(ValueError):
            dsp.downsample(np.ones((1, 100)), 300.0, 200.0)


class TestPreprocess:
    def make_trial(self, c=8, fs=1000.0, secs=1.6, seed=0):
        rng = np.random.default_rng(seed)
        t = np.arange(int(fs * secs)) / fs
        data = np.stack([np.sin(2 * np.pi * 100 * t + p) + 0.1 * rng.normal(size=t.size)
                         for p in rng.uniform(0, 2 * np.pi, c)])
        return RawTrial(data=data, fs=fs, word_id=3, block=1, subject=0)

    def test_output_shape(self):
        env = dsp.preprocess(self.make_trial())
        assert env.data.shape == (8, 320)
        assert env.fs == 200.0
        assert (env.word_id, env.block, env.subject) == (3, 1, 0)

    def test_full_scale_trial_shape(self):
        # 1.6 s at 1000 Hz with 64 channels comes out as 64 x 320 at 200 Hz
        env = dsp.preprocess(self.make_trial(c=64))
        assert env.data.shape == (64, 320)

    def test_all_zero_input(self):
        trial = RawTrial(data=np.zeros((4, 1600)), fs=1000.0, word_id=0, block=0, subject=0)
        assert np.allclose(dsp.preprocess(trial).data, 0.0, atol=1e-12)

    def test_low_fs_rejected(self):
        trial = RawTrial(data=np.ones((4, 480)), fs=300.0, word_id=0, block=0, subject=0)
        with pytest.raises(ValueError):
            dsp.preprocess(trial)

    def test_deterministic(self):
        a = dsp.preprocess(self.make_trial(seed=7)).data
        b = dsp.preprocess(self.make_trial(seed=7)).data
        assert np.array_equal(a, b)

    def test_envelope_stage_nonnegative(self):
        trial = self.make_trial()
        x = dsp.detrend(trial.data)
        x = dsp.rereference(x)
        x = dsp.bandpass_notch(x, trial.fs)
        x = dsp.scale_clamp(x)
        assert dsp.hilbert_envelope(x).min() >= 0.0

    def test_envelope_bound_validation(self):
        bad = EnvelopeTrial(data=np.full((2, 10), 100.0), word_id=0, block=0, subject=0)
        with pytest.raises(ValueError, match="bound"):
            bad.validate(clamp=5.0)

    def test_single_channel_error_propagates(self):
        trial = RawTrial(data=tone(100.0, secs=1.6)[None, :], fs=1000.0, word_id=0, block=0, subject=0)
        with pytest.raises(ValueError):
            dsp.preprocess(trial)
