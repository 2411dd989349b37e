import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import THOROUGH
from dronessl.config import PipelineConfig
from dronessl.errors import DelayTooLarge, FileNotFound, ShapeMismatch, ZeroNoise
from dronessl.geometry import ArrayGeometry, Direction, great_circle_distance, random_directions, tdoa
from dronessl.localize import gcc
from dronessl.pipeline import localize_recording
from dronessl.recording import MultichannelRecording
from dronessl.simulate import (NoiseSource, SceneSpec, fractional_delay, generate_task, make_scene, mix_at_snr,
                               mix_components, render_source, synth_ego_noise)

FS = 44100


def xcorr_lag(a, b, max_lag=40):
    """Lag l maximizing sum_t a[t] b[t + l], brute force."""
    n = len(a)
    lags = range(-max_lag, max_lag + 1)
    vals = [np.dot(a[max(0, -l): n - max(0, l)], b[max(0, l): n - max(0, -l) + 0]) if l >= 0
            else np.dot(a[-l:], b[: n + l]) for l in lags]
    return list(lags)[int(np.argmax(vals))]


def measured_delay(x_ref, x_k, fft=4096):
    """Delay of x_k relative to x_ref from GCC-PHAT over the first ``fft`` samples."""
    lags, r = gcc(np.fft.rfft(x_ref[:fft]), np.fft.rfft(x_k[:fft]), max_lag=40)
    return lags[int(np.argmax(r))]


class TestFractionalDelay:
    def test_zero_delay(self, rng):
        x = rng.standard_normal(4000)
        assert np.max(np.abs(fractional_delay(x, 0.0) - x)) < 1e-9

    def test_integer_delay_exact(self, rng):
        x = rng.standard_normal(2000)
        y = fractional_delay(x, 7.0)
        assert np.array_equal(y[7:], x[:-7]) and np.all(y[:7] == 0)
        assert np.array_equal(fractional_delay(x, -4.0)[:-4], x[4:])

    def test_delay_three_by_cross_correlation(self, rng):
        x = rng.standard_normal(3000)
        assert xcorr_lag(x, fractional_delay(x, 3.0)) == 3

    def test_half_sample_phase(self):
        n = 44100
        t = np.arange(n) / FS
        x = np.sin(2 * np.pi * 1000 * t)
        y = fractional_delay(x, 0.5)
        mid = slice(4410, 4410 + 35280)  # 0.8 s = 800 whole cycles
        k = 800
        px = np.angle(np.fft.rfft(x[mid])[k])
        py = np.angle(np.fft.rfft(y[mid])[k])
        lag = np.angle(np.exp(1j * (px - py)))
        assert abs(lag - 2 * np.pi * 1000 * 0.5 / FS) < 1e-3

    def test_too_large(self, rng):
        with pytest.raises(DelayTooLarge):
            fractional_delay(rng.standard_normal(100), 25.0)

    @given(st.floats(-20.0, 20.0))
    def test_band_limited_accuracy(self, d):
        t = np.arange(8000) / FS
        f = 2500.0
        y = fractional_delay(np.sin(2 * np.pi * f * t), d)
        ref = np.sin(2 * np.pi * f * (t - d / FS))
        mid = slice(200, -200)
        assert np.max(np.abs(y[mid] - ref[mid])) < 1e-3


class TestRenderSource:
    def test_broadside_two_mic(self):
        geom = ArrayGeometry(np.array([[0.05, 0, 0], [-0.05, 0, 0]]))
        rec = render_source(SceneSpec(Direction(90.0, 0.0), "white", duration=0.2, geometry=geom, seed=1))
        assert np.max(np.abs(rec.samples[0] - rec.samples[1])) < 1e-6 * np.max(np.abs(rec.samples))

    @pytest.mark.parametrize("d", [Direction(0, 0), Direction(135, -30), Direction(-60, 70)])
    def test_delays_match_geometry(self, cube, d):
        rec = render_source(SceneSpec(d, "white", duration=0.2, geometry=cube, seed=4))
        for k in range(1, 8):
            expected = tdoa(d, cube, 0, k) * FS
            assert abs(measured_delay(rec.samples[0], rec.samples[k]) - expected) <= 1.0

    def test_deterministic(self, cube):
        spec = SceneSpec(Direction(10, 10), "speech", duration=0.3, geometry=cube, seed=11)
        assert np.array_equal(render_source(spec).samples, render_source(spec).samples)

    def test_spec_validation(self):
        for bad in (dict(duration=0), dict(snr_db=np.inf), dict(source_kind="violin")):
            with pytest.raises(ValueError):
                SceneSpec(Direction(0, 0), **bad)


class TestEgoNoise:
    def test_single_harmonic_peak(self, cube):
        noise = NoiseSource(rpm=(6000.0,) * 4, harmonics=1, modulation=0.0)
        rec, _ = synth_ego_noise(noise, 2.0, cube, seed=3)
        spec = np.abs(np.fft.rfft(rec.samples[0])) ** 2
        f = np.fft.rfftfreq(rec.n_samples, 1 / FS)
        assert abs(f[np.argmax(spec)] - 100.0) < 1.0
        assert 10 * np.log10(spec.max() / np.median(spec)) >= 20.0

    def test_length_and_metadata(self, cube):
        noise = NoiseSource()
        rec, motor = synth_ego_noise(noise, 2.0, cube, seed=0)
        assert rec.samples.shape == (8, 88200)
        assert motor.speeds == noise.rpm and rec.motor_rpm == noise.rpm

    def test_deterministic(self, cube):
        a, _ = synth_ego_noise(NoiseSource(), 0.5, cube, seed=8)
        b, _ = synth_ego_noise(NoiseSource(), 0.5, cube, seed=8)
        c, _ = synth_ego_noise(NoiseSource(), 0.5, cube, seed=9)
        assert np.array_equal(a.samples, b.samples) and not np.array_equal(a.samples, c.samples)

    def test_template_bank(self, cube):
        _, motor = synth_ego_noise(NoiseSource(), 0.3, cube, seed=1, template_rpms=3)
        assert len(motor.template_bank) == 3 and list(motor.bank_speeds) == sorted(motor.bank_speeds)
        assert all(v.shape == (4, 513) for v in motor.template_bank.values())

    def test_recorded_mode(self, tmp_path, cube):
        from dronessl.io import write_wav

        src = MultichannelRecording(np.arange(8 * 1000, dtype=float).reshape(8, 1000) / 1e4, FS)
        write_wav(src, tmp_path / "n.wav")
        rec, _ = synth_ego_noise(NoiseSource(kind="recorded", path=str(tmp_path / "n.wav")), 2500 / FS, cube)
        assert rec.n_samples == 2500
        np.testing.assert_allclose(rec.samples[:, 1000:2000], src.samples, atol=1e-6)
        with pytest.raises(FileNotFound):
            synth_ego_noise(NoiseSource(kind="recorded", path=str(tmp_path / "missing.wav")), 1.0, cube)

    def test_bad_rpm(self):
        with pytest.raises(ValueError):
            NoiseSource(rpm=(0.0, 1.0, 1.0, 1.0))


def power(x):
    return np.mean(np.asarray(x) ** 2)


class TestMix:
    def test_equal_power_unit_scale(self, rng):
        c = MultichannelRecording(rng.standard_normal((3, 1000)), FS)
        n = rng.standard_normal((3, 1000))
        n *= np.sqrt(power(c.samples) / power(n))
        _, scaled = mix_components(c, MultichannelRecording(n, FS), 0.0)
        np.testing.assert_allclose(scaled, n, rtol=1e-9)

    @THOROUGH
    @given(st.integers(0, 2 ** 32 - 1), st.floats(-30.0, 30.0))
    def test_snr_exact(self, seed, snr):
        rng = np.random.default_rng(seed)
        c = MultichannelRecording(rng.standard_normal((4, 500)) * rng.uniform(0.01, 10), FS)
        n = MultichannelRecording(rng.standard_normal((4, 600)) * rng.uniform(0.01, 10), FS)
        out = mix_at_snr(c, n, snr)
        resid = out.samples - c.samples
        assert abs(10 * np.log10(power(c.samples) / power(resid)) - snr) < 0.01

    def test_decomposition_is_exact(self, rng):
        c = MultichannelRecording(rng.standard_normal((2, 800)), FS)
        n = MultichannelRecording(rng.standard_normal((2, 800)), FS)
        out, scaled = mix_components(c, n, -15.0)
        assert np.array_equal(out.samples - c.samples, (c.samples + scaled) - c.samples)
        assert abs(10 * np.log10(power(c.samples) / power(out.samples - c.samples)) + 15.0) < 0.01

    def test_errors(self, rng):
        c = MultichannelRecording(rng.standard_normal((2, 100)), FS)
        with pytest.raises(ShapeMismatch):
            mix_at_snr(c, MultichannelRecording(rng.standard_normal((3, 100)), FS), 0.0)
        with pytest.raises(ShapeMismatch):
            mix_at_snr(c, MultichannelRecording(rng.standard_normal((2, 50)), FS), 0.0)
        with pytest.raises(ZeroNoise):
            mix_at_snr(c, MultichannelRecording(np.zeros((2, 100)), FS), 0.0)
        with pytest.raises(ValueError):
            mix_at_snr(c, MultichannelRecording(np.ones((2, 100)), FS), np.inf)


class TestGenerateTask:
    def test_static_dataset(self, tmp_path):
        from dronessl.io import list_recordings, read_ground_truth

        scenes = generate_task("static", 5, (-5.0, 5.0), seed=3, out_dir=tmp_path)
        assert len(scenes) == 5 and all(-5 <= sc.spec.snr_db <= 5 for sc in scenes)
        assert len(list_recordings(tmp_path)) == 5
        gt = read_ground_truth(tmp_path / "ground_truth.csv")
        assert gt.kind == "static" and len(gt.records) == 5
        for name in ("motor_speeds.csv", "geometry.txt", "motor_templates.csv"):
            assert (tmp_path / name).exists()

    def test_flight_has_fifteen_timestamps(self, tmp_path):
        from dronessl.io import read_ground_truth

        generate_task("flight", 2, seed=1, out_dir=tmp_path)
        gt = read_ground_truth(tmp_path / "ground_truth.csv")
        assert all(len(rows) == 15 for rows in gt.records.values())
        times = [t for t, _ in gt.records["flight000"]]
        assert np.allclose(np.diff(times), np.diff(times)[0])

    def test_deterministic_files(self, tmp_path):
        generate_task("static", 2, seed=5, out_dir=tmp_path / "a")
        generate_task("static", 2, seed=5, out_dir=tmp_path / "b")
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_flight_rate_capped(self):
        sc = make_scene("flight", 0, 12, 0.0)
        path = sc.spec.source_direction
        t = np.linspace(0, 4, 401)
        v = path.vector_at(t)
        step = np.rad2deg(np.arccos(np.clip(np.sum(v[1:] * v[:-1], axis=1), -1, 1)))
        assert np.max(step) / 0.01 <= 30.0 + 1e-6

    def test_truth_matches_clean_delays(self, cube):
        sc = make_scene("static", 4, 21, 0.0, "white", cube)
        for k in range(1, 8):
            assert abs(measured_delay(sc.clean.samples[0], sc.clean.samples[k]) - tdoa(sc.truth, cube, 0, k) * FS) <= 1

    def test_high_snr_scene_localizes(self, cube):
        for i in range(3):
            sc = make_scene("static", i, 99, 20.0, "speech", cube)
            est = localize_recording(sc.mixture, PipelineConfig(), cube, "static")
            assert great_circle_distance(est, sc.truth) < 10.0

    def test_count_validation(self):
        with pytest.raises(ValueError):
            generate_task("static", 0)
        with pytest.raises(ValueError):
            generate_task("static", 1, (5.0, -5.0))


def test_random_directions_uniform():
    v = random_directions(np.random.default_rng(0), 10_000)
    assert np.linalg.norm(v.mean(axis=0)) < 0.05
