import numpy as np
import pytest

from quditpulse.errors import SchemaError, WaveformFormatError
from quditpulse.propagate import ControlPulse
from quditpulse.waveform import (
    LabWaveform,
    demodulate,
    export_waveform,
    import_waveform,
    morlet_cwt,
    synthesize_lab,
    upsample_envelope,
)

OMEGA_D = 2 * np.pi * 4.09948


def constant_pulse(value, n=100, dt=0.5):
    return ControlPulse(dt, np.full(n, value, dtype=complex), n * dt)


class TestSynthesis:
    def test_sample_count(self, swap_pulse, frame):
        wave = synthesize_lab(swap_pulse, frame.omega_d)
        assert wave.samples.size == 150 * 32 == 4800
        assert wave.sample_rate == 32

    def test_zero_envelope_gives_zero_waveform(self):
        wave = synthesize_lab(constant_pulse(0.0), OMEGA_D)
        assert np.abs(wave.samples).max() == 0.0

    def test_constant_real_envelope_is_cosine(self):
        xi = 0.01
        pulse = constant_pulse(xi, n=200, dt=0.5)
        wave = synthesize_lab(pulse, OMEGA_D)
        t = wave.times_ns
        # Away from the edges the interpolated envelope is flat, so the
        # signal is 2 xi cos(omega_d t).
        inner = slice(15 * 32, -15 * 32)
        expected = 2 * xi * np.cos(OMEGA_D * t)
        np.testing.assert_allclose(wave.samples[inner], expected[inner],
                                   atol=1e-6)
        # Peak amplitude 2 xi away from the hard envelope edges (the
        # band-limited interpolant overshoots at a step edge).
        assert wave.samples[inner].max() <= 2 * xi * (1 + 1e-9)

    def test_interpolation_hits_sample_values(self, swap_pulse, frame):
        # Fine grid points that coincide with coarse step centers must
        # reproduce the coarse samples exactly (interpolating kernel).
        t_fine, env = upsample_envelope(swap_pulse, 32)
        centers = (np.arange(swap_pulse.n_samples) + 0.5) * swap_pulse.dt_ns
        idx = np.round(centers * 32).astype(int)
        np.testing.assert_allclose(env[idx], swap_pulse.samples, atol=1e-12)

    def test_energy_matches_envelope(self, swap_pulse, frame):
        wave = synthesize_lab(swap_pulse, frame.omega_d)
        _, env = upsample_envelope(swap_pulse, 32)
        ratio = (wave.samples ** 2).sum() / (2 * np.abs(env) ** 2).sum()
        assert abs(ratio - 1.0) < 0.01

    def test_demodulation_recovers_envelope(self, swap_pulse, frame):
        wave = synthesize_lab(swap_pulse, frame.omega_d)
        _, env = upsample_envelope(swap_pulse, 32)
        rec = demodulate(wave, frame.omega_d, f_cut_ghz=2.0)
        # Compare away from the switch-on/off edges where ideal low-pass
        # filtering necessarily rings.
        margin = 2 * 32
        inner = slice(margin, -margin)
        err = (np.linalg.norm(rec[inner] - env[inner])
               / np.linalg.norm(env[inner]))
        assert err < 1e-3

    def test_rejects_lab_frame_input(self):
        pulse = ControlPulse(1 / 32, np.zeros(320, complex), 10.0,
                             frame="lab")
        with pytest.raises(SchemaError):
            synthesize_lab(pulse, OMEGA_D)


class TestMorlet:
    def test_pure_tone_localized(self):
        t = np.arange(0, 150 * 32) / 32
        tone = LabWaveform(32, np.cos(2 * np.pi * 4.0 * t), 150.0)
        freqs = np.linspace(3.6, 4.4, 81)
        scal = morlet_cwt(tone, freqs, cycles=150)
        sigma = 150 / (2 * np.pi * 3.6)
        margin = int(np.ceil(4 * sigma * 32))
        interior = scal.magnitude[:, margin:-margin]
        peaks = freqs[np.argmax(interior, axis=0)]
        assert np.all(peaks == 4.0)

    def test_zero_waveform_zero_scalogram(self):
        wave = LabWaveform(32, np.zeros(3200), 100.0)
        scal = morlet_cwt(wave, np.linspace(3.5, 4.5, 11))
        assert scal.magnitude.max() == 0.0

    def test_above_nyquist_rejected(self):
        wave = LabWaveform(32, np.zeros(3200), 100.0)
        with pytest.raises(SchemaError):
            morlet_cwt(wave, np.array([17.0]))

    def test_linecut_picks_nearest_row(self):
        t = np.arange(0, 100 * 32) / 32
        tone = LabWaveform(32, np.cos(2 * np.pi * 4.0 * t), 100.0)
        freqs = np.linspace(3.9, 4.1, 21)
        scal = morlet_cwt(tone, freqs, cycles=50)
        f, cut = scal.linecut(4.003)
        assert f == pytest.approx(4.0)
        assert cut.shape == (3200,)

    def test_dominant_frequencies_of_two_tones(self):
        t = np.arange(0, 200 * 32) / 32
        sig = (np.cos(2 * np.pi * 4.0 * t)
               + 0.6 * np.cos(2 * np.pi * 3.8 * t))
        wave = LabWaveform(32, sig, 200.0)
        freqs = np.linspace(3.6, 4.2, 61)
        scal = morlet_cwt(wave, freqs, cycles=100)
        peaks = scal.dominant_frequencies(2)
        assert peaks[0] == pytest.approx(4.0)
        assert peaks[1] == pytest.approx(3.8)


class TestWaveformFiles:
    def test_round_trip_bit_exact(self, swap_pulse, frame, tmp_path):
        wave = synthesize_lab(swap_pulse, frame.omega_d)
        path = tmp_path / "wave.txt"
        export_waveform(wave, path)
        again = import_waveform(path)
        np.testing.assert_array_equal(again.samples, wave.samples)
        assert again.sample_rate == wave.sample_rate
        assert again.duration_ns == wave.duration_ns
        assert again.carrier_ghz == wave.carrier_ghz

    def test_truncated_body_rejected(self, tmp_path):
        wave = LabWaveform(32, np.linspace(0, 1, 320), 10.0)
        path = tmp_path / "wave.txt"
        export_waveform(wave, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-5]) + "\n")
        with pytest.raises(WaveformFormatError):
            import_waveform(path)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "wave.txt"
        path.write_text("# quditpulse waveform v1\n0.0\n0.0\n")
        with pytest.raises(WaveformFormatError):
            import_waveform(path)

    def test_consistent_header_accepted(self, tmp_path):
        samples = np.zeros(4800)
        path = tmp_path / "wave.txt"
        export_waveform(LabWaveform(32, samples, 150.0), path)
        wave = import_waveform(path)
        assert wave.samples.size == 4800

    def test_inconsistent_length_rejected(self):
        with pytest.raises(WaveformFormatError):
            LabWaveform(32, np.zeros(4799), 150.0)
