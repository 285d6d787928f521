import json

import numpy as np
import pytest

from pulseforge import dsp
from pulseforge.errors import ConfigurationError, DomainError
from pulseforge.recovery import BvpEstimate

FS = 30.0


@pytest.fixture(scope="module")
def bp():
    return dsp.design_butterworth(6, 0.7, 2.5, FS)


class TestDesign:
    def test_cutoff_magnitudes(self, bp):
        mags = bp.magnitude_db([0.7, 2.5])
        assert np.all(np.abs(mags - (-3.0)) <= 0.5)

    def test_band_center_flat(self, bp):
        center = np.sqrt(0.7 * 2.5)
        assert bp.magnitude_db([center])[0] >= -0.1

    def test_stopband(self, bp):
        mags = bp.magnitude_db([0.1, 7.0])
        assert np.all(mags <= -40.0)

    def test_poles_stable(self, bp):
        assert np.all(bp.pole_magnitudes() < 1.0)

    def test_invalid_band(self):
        with pytest.raises(ConfigurationError):
            dsp.design_butterworth(6, 2.5, 0.7, FS)
        with pytest.raises(ConfigurationError):
            dsp.design_butterworth(6, 0.7, 20.0, FS)
        with pytest.raises(ConfigurationError):
            dsp.design_butterworth(5, 0.7, 2.5, FS)

    def test_json_roundtrip(self, bp):
        data = json.loads(bp.to_json())
        assert data["order"] == 6
        assert np.allclose(np.asarray(data["sos"]), bp.sos)


class TestFiltfilt:
    def test_dc_killed(self, bp):
        out = dsp.filtfilt(bp, np.full(600, 3.7))
        assert np.max(np.abs(out)) < 1e-6

    def test_midband_amplitude(self, bp):
        t = np.arange(int(60 * FS)) / FS
        x = np.sin(2 * np.pi * 1.5 * t)
        out = dsp.filtfilt(bp, x)
        mid = out[300:-300]
        assert np.max(np.abs(mid)) == pytest.approx(1.0, rel=0.01)

    def test_zero_phase(self, bp):
        t = np.arange(int(30 * FS)) / FS
        x = np.sin(2 * np.pi * 1.3 * t)
        out = dsp.filtfilt(bp, x)
        lags = np.arange(-10, 11)
        xc = [np.dot(out[10:-10], x[10 + k:x.size - 10 + k]) for k in lags]
        assert lags[int(np.argmax(xc))] == 0

    def test_linear_gain_equivariance(self, bp):
        rng = np.random.default_rng(3)
        x = rng.normal(0, 1, 900)
        a = 17.3
        lhs = dsp.filtfilt(bp, a * x)
        rhs = a * dsp.filtfilt(bp, x)
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * np.max(np.abs(rhs))

    def test_too_short_rejected(self, bp):
        with pytest.raises(DomainError):
            dsp.filtfilt(bp, np.zeros(18))


class TestPowerSpectrum:
    def test_pure_tone_peak(self):
        t = np.arange(int(30 * FS)) / FS
        spec = dsp.power_spectrum(np.sin(2 * np.pi * 1.0 * t), FS)
        df = spec.frequencies[1] - spec.frequencies[0]
        assert abs(spec.frequencies[np.argmax(spec.power)] - 1.0) <= df

    def test_parseval(self):
        x = np.random.default_rng(5).normal(0, 1, 777)
        spec = dsp.power_spectrum(x, FS)
        energy = np.sum((x * np.hanning(x.size)) ** 2)
        assert abs(np.sum(spec.power) - energy) <= 1e-6 * energy

    def test_white_noise_no_dominant_peak(self):
        x = np.random.default_rng(3).normal(0, 1, 1800)
        spec = dsp.power_spectrum(x, FS)
        positive = spec.power[spec.power > 0]
        assert spec.power.max() < 10 * np.median(positive)

    def test_grid(self):
        spec = dsp.power_spectrum(np.arange(64.0), FS)
        assert spec.frequencies[0] == 0.0
        assert spec.frequencies[-1] == pytest.approx(FS / 2)
        assert np.all(np.diff(spec.frequencies) > 0)
        assert np.all(spec.power >= 0)


class TestEstimateHr:
    def test_one_hz(self):
        t = np.arange(int(60 * FS)) / FS
        assert dsp.estimate_hr(np.sin(2 * np.pi * t), FS) == pytest.approx(60.0, abs=0.1)

    def test_interpolated_peak(self):
        t = np.arange(int(60 * FS)) / FS
        hr = dsp.estimate_hr(np.sin(2 * np.pi * 1.23 * t), FS)
        assert hr == pytest.approx(73.8, abs=0.5)

    def test_out_of_band_peak_ignored(self):
        t = np.arange(int(60 * FS)) / FS
        x = 10 * np.sin(2 * np.pi * 0.5 * t) + np.sin(2 * np.pi * 1.2 * t)
        assert dsp.estimate_hr(x, FS) == pytest.approx(72.0, abs=0.5)

    def test_scale_and_dc_invariance(self):
        t = np.arange(int(30 * FS)) / FS
        x = np.sin(2 * np.pi * 1.1 * t)
        base = dsp.estimate_hr(x, FS)
        assert dsp.estimate_hr(5.5 * x + 100.0, FS) == pytest.approx(base, abs=1e-9)

    def test_short_signal_rejected(self):
        with pytest.raises(DomainError):
            dsp.estimate_hr(np.zeros(100), FS)

    def test_windowed_mode(self):
        t = np.arange(int(60 * FS)) / FS
        series = dsp.estimate_hr_windowed(np.sin(2 * np.pi * 1.2 * t), FS,
                                          window_s=30, stride_s=5)
        assert series.size == 7
        assert np.all(np.abs(series - 72.0) < 0.5)


class TestSnrBvp:
    def _est(self, x):
        return BvpEstimate(samples=x, sample_rate=FS, method="test")

    def test_pure_tone_high(self):
        t = np.arange(int(120 * FS)) / FS
        snr = dsp.snr_bvp(self._est(np.sin(2 * np.pi * 1.2 * t)), 72.0)
        assert snr >= 20.0

    def test_analytic_oracle(self):
        # sinusoid at f_ref plus white noise; in/out template powers are
        # analytic: signal a^2/2 in-template, noise spread over [0, fs/2]
        a, sigma = 0.1, 0.05
        n = int(120 * FS)
        rng = np.random.default_rng(7)
        x = a * np.sin(2 * np.pi * 1.2 * np.arange(n) / FS) + rng.normal(0, sigma, n)
        noise_psd = sigma ** 2 / (FS / 2)
        analytic = 10 * np.log10((noise_psd * 0.4 + a ** 2 / 2)
                                 / (noise_psd * (4.5 - 0.4)))
        measured = dsp.snr_bvp(self._est(x), 72.0)
        assert measured == pytest.approx(analytic, abs=1.0)

    def test_out_of_template_tone_negative(self):
        t = np.arange(int(60 * FS)) / FS
        snr = dsp.snr_bvp(self._est(np.sin(2 * np.pi * 0.9 * t)), 120.0)
        assert snr <= -10.0

    def test_gain_invariance(self):
        t = np.arange(int(60 * FS)) / FS
        rng = np.random.default_rng(1)
        x = np.sin(2 * np.pi * 1.2 * t) + rng.normal(0, 0.3, t.size)
        assert dsp.snr_bvp(self._est(x), 72.0) == pytest.approx(
            dsp.snr_bvp(self._est(123.0 * x), 72.0), abs=1e-9)

    def test_cap(self):
        t = np.arange(int(60 * FS)) / FS
        x = np.sin(2 * np.pi * 1.2 * t)
        assert dsp.snr_bvp(self._est(x), 72.0) <= 60.0

    def test_ref_domain(self):
        with pytest.raises(DomainError):
            dsp.snr_bvp(self._est(np.zeros(600)), 200.0)


def test_spectrum_csv(tmp_path):
    t = np.arange(600) / FS
    spec = dsp.power_spectrum(np.sin(2 * np.pi * t), FS)
    path = tmp_path / "spec.csv"
    dsp.write_spectrum_csv(spec, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "freq_hz,power"
    assert len(lines) == spec.frequencies.size + 1
