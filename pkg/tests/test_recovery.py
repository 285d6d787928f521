import numpy as np
import pytest

from pulseforge import drm, dsp, recovery, waveform
from pulseforge.errors import ConfigurationError, DomainError

FS = 30.0


def drm_trace(hr=72.0, duration=60.0, seed=1, psi_motion=0.0, phi_motion=0.0,
              velocity=0.0, max_angle=30.0):
    model = drm.default_optical_model()
    pulse = waveform.synth_pulse(hr, duration, FS, seed=seed)
    motion = drm.make_motion(velocity, duration, FS, max_angle_deg=max_angle)
    mod = drm.ModulationModel(phi_motion=phi_motion, psi_motion=psi_motion)
    rgb = drm.pixel_trace(model, mod, pulse, motion)
    return recovery.RoiTrace(rgb=rgb, sample_rate=FS)


@pytest.fixture(scope="module")
def clean72():
    return drm_trace()


class TestSpatialAverage:
    def test_uniform_frame(self):
        frames = np.full((60, 4, 4, 3), 0.25, dtype=np.float32)
        frames[:, :, :, 1] = 0.5
        video = drm.VideoTensor(frames=frames, sample_rate=FS)
        trace = recovery.spatial_average(video, np.ones((4, 4), bool))
        assert np.allclose(trace.rgb, [0.25, 0.5, 0.25], atol=1e-7)

    def test_single_pixel_mask(self):
        rng = np.random.default_rng(0)
        frames = rng.uniform(0, 1, (90, 4, 4, 3)).astype(np.float32)
        video = drm.VideoTensor(frames=frames, sample_rate=FS)
        mask = np.zeros((4, 4), bool)
        mask[2, 1] = True
        trace = recovery.spatial_average(video, mask)
        assert np.allclose(trace.rgb, frames[:, 2, 1, :], atol=1e-7)

    def test_empty_mask_rejected(self):
        frames = np.zeros((60, 4, 4, 3), dtype=np.float32)
        video = drm.VideoTensor(frames=frames, sample_rate=FS)
        with pytest.raises(DomainError):
            recovery.spatial_average(video, np.zeros((4, 4), bool))


class TestPos:
    def test_constant_trace(self):
        trace = recovery.RoiTrace(rgb=np.full((300, 3), 0.4), sample_rate=FS)
        est = recovery.pos(trace)
        assert np.max(np.abs(est.samples)) < 1e-12

    def test_hr_oracle(self, clean72):
        est = recovery.pos(clean72)
        assert dsp.estimate_hr(est.samples, FS) == pytest.approx(72.0, abs=1.0)
        assert est.samples.size == clean72.rgb.shape[0]

    def test_intensity_modulation_cancelled(self):
        # 0.25 Hz illumination flicker (period-4s triangular motion),
        # no specular coupling: POS still reads the pulse
        trace = drm_trace(psi_motion=0.1, velocity=30.0, max_angle=30.0)
        est = recovery.pos(trace)
        assert dsp.estimate_hr(est.samples, FS) == pytest.approx(72.0, abs=1.0)

    def test_gain_invariance(self, clean72):
        est = recovery.pos(clean72)
        scaled = recovery.pos(recovery.RoiTrace(rgb=clean72.rgb * 7.5,
                                                sample_rate=FS))
        assert np.max(np.abs(est.samples - scaled.samples)) < 1e-9

    def test_too_short_rejected(self):
        trace = recovery.RoiTrace(rgb=np.random.default_rng(0).uniform(
            0.2, 0.3, (61, 3)), sample_rate=FS)
        with pytest.raises(DomainError):
            recovery.pos(recovery.RoiTrace(rgb=trace.rgb[:40], sample_rate=FS))


class TestChrom:
    def test_constant_trace(self):
        trace = recovery.RoiTrace(rgb=np.full((300, 3), 0.4), sample_rate=FS)
        est = recovery.chrom(trace)
        assert np.max(np.abs(est.samples)) < 1e-9

    def test_hr_oracle(self, clean72):
        est = recovery.chrom(clean72)
        assert dsp.estimate_hr(est.samples, FS) == pytest.approx(72.0, abs=1.0)
        assert est.samples.size == clean72.rgb.shape[0]

    def test_gain_invariance(self, clean72):
        est = recovery.chrom(clean72)
        scaled = recovery.chrom(recovery.RoiTrace(rgb=clean72.rgb * 2.0,
                                                  sample_rate=FS))
        hr_a = dsp.estimate_hr(est.samples, FS)
        hr_b = dsp.estimate_hr(scaled.samples, FS)
        assert hr_a == pytest.approx(hr_b, abs=1e-6)
        assert np.max(np.abs(est.samples - scaled.samples)) < 1e-9


class TestIca:
    def test_identity_mixing_recovers_sources(self):
        # independent in-band sinusoids, identity mixing: components must
        # match sources up to permutation and sign
        t = np.arange(int(60 * FS)) / FS
        sources = np.stack([np.sin(2 * np.pi * f * t + ph)
                            for f, ph in ((0.8, 0.0), (1.3, 1.0), (2.1, 2.0))])
        x = sources.copy()
        z = recovery._whiten(x - x.mean(axis=1, keepdims=True))
        w, converged = recovery._fixed_point_ica(z, seed=0)
        comps = w @ z
        assert converged
        matched = set()
        for k in range(3):
            rhos = [abs(np.corrcoef(comps[k], s)[0, 1]) for s in sources]
            best = int(np.argmax(rhos))
            assert rhos[best] >= 0.999
            matched.add(best)
        assert matched == {0, 1, 2}

    def test_known_sources_mixture(self):
        # pulse + drift + noise through a random well-conditioned mixing
        rng = np.random.default_rng(12)
        t = np.arange(int(60 * FS)) / FS
        pulse = waveform.synth_pulse(72, 60, FS, seed=3).samples
        drift = np.sin(2 * np.pi * 0.3 * t)
        noise = rng.normal(0, 1, t.size)
        sources = np.stack([pulse, drift, noise])
        while True:
            mixing = rng.uniform(-1, 1, (3, 3))
            if np.linalg.cond(mixing) < 10:
                break
        mixed = (mixing @ sources).T + 5.0
        trace = recovery.RoiTrace(rgb=mixed, sample_rate=FS)
        est = recovery.ica(trace, seed=0)
        rho = np.corrcoef(est.samples, pulse)[0, 1]
        assert abs(rho) >= 0.95

    def test_hr_oracle(self, clean72):
        est = recovery.ica(clean72, seed=0)
        assert dsp.estimate_hr(est.samples, FS) == pytest.approx(72.0, abs=2.0)
        assert est.samples.size == clean72.rgb.shape[0]

    def test_seed_determinism(self, clean72):
        a = recovery.ica(clean72, seed=3)
        b = recovery.ica(clean72, seed=3)
        assert np.array_equal(a.samples, b.samples)

    def test_sign_follows_green(self, clean72):
        est = recovery.ica(clean72, seed=0)
        green = clean72.rgb[:, 1] - clean72.rgb[:, 1].mean()
        assert float(est.samples @ green) > 0


class TestRecoverDispatch:
    def test_unknown_method(self, clean72):
        with pytest.raises(ConfigurationError, match="chrom, ica, pos"):
            recovery.recover(clean72, "pca")

    @pytest.mark.parametrize("method", ["pos", "chrom", "ica"])
    def test_waveform_correlation(self, clean72, method):
        # on the noise-free linearized trace every method tracks the pulse
        pulse = waveform.synth_pulse(72, 60, FS, seed=1)
        filt = dsp.design_butterworth(6, 0.7, 2.5, FS)
        ref = dsp.filtfilt(filt, pulse.samples)
        est = recovery.recover(clean72, method, seed=0)
        out = dsp.filtfilt(filt, est.samples)
        rho = abs(np.corrcoef(out, ref)[0, 1])
        assert rho >= 0.9


class TestCsvRoundtrip:
    def test_roi(self, tmp_path, clean72):
        path = tmp_path / "trace.csv"
        recovery.write_roi_csv(clean72, path)
        back = recovery.read_roi_csv(path)
        assert back.sample_rate == pytest.approx(FS, rel=1e-6)
        assert np.allclose(back.rgb, clean72.rgb)

    def test_estimate(self, tmp_path, clean72):
        est = recovery.pos(clean72)
        path = tmp_path / "est.csv"
        recovery.write_estimate_csv(est, path)
        back = recovery.read_estimate_csv(path)
        assert back.method == "pos"
        assert np.allclose(back.samples, est.samples)
        header = path.read_text().splitlines()[0]
        assert header == "# method=pos"
