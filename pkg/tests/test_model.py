import numpy as np
import pytest

from quditpulse.errors import (
    InvalidSpecError,
    SchemaError,
)
from quditpulse.model import (
    DeviceSpec,
    control_hamiltonians,
    device_spec_from_dict,
    device_spec_to_dict,
    fit_charge_model,
    load_device_spec,
    load_model,
    model_from_spectrum,
    rotating_frame,
    save_device_spec,
    save_model,
)

from conftest import make_device_spec

TWO_PI = 2 * np.pi


class TestDeviceSpec:
    def test_dim_from_transitions(self, device_spec):
        assert device_spec.dim == 4
        assert device_spec.guard_index == 3

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(InvalidSpecError):
            make_device_spec(t1_us=(55.0, 26.0))

    def test_rejects_nonpositive_frequency(self):
        with pytest.raises(InvalidSpecError):
            make_device_spec(transition_freqs_ghz=(4.1, -3.9, 3.6))

    def test_rejects_unknown_tag(self):
        with pytest.raises(InvalidSpecError):
            make_device_spec(t2_tags=("ramsey", "echo", "hahn"))

    def test_t2_sim_defaults_to_table(self):
        spec = make_device_spec(t2_sim_us=None)
        assert spec.t2_sim_us == spec.t2_us

    def test_file_round_trip(self, device_spec, tmp_path):
        path = tmp_path / "device.json"
        save_device_spec(device_spec, path)
        again = load_device_spec(path)
        assert again == device_spec

    def test_missing_field_names_it(self):
        data = device_spec_to_dict(make_device_spec())
        del data["t1_us"]
        with pytest.raises(SchemaError, match="t1_us"):
            device_spec_from_dict(data)


class TestSpectrumModel:
    def test_cumulative_frequencies(self, ladder_model):
        # 4.09948 + 3.87409 = 7.97357 checked by hand
        np.testing.assert_allclose(
            ladder_model.omega / TWO_PI,
            [0.0, 4.09948, 7.97357, 11.59295], atol=1e-12)

    def test_ground_state_zero(self, ladder_model):
        assert ladder_model.omega[0] == 0.0

    def test_ladder_elements(self, ladder_model):
        lower = ladder_model.lower
        assert lower[1, 0] == 1.0
        assert lower[2, 1] == pytest.approx(np.sqrt(2), abs=1e-15)
        assert lower[3, 2] == pytest.approx(np.sqrt(3), abs=1e-15)

    def test_lower_strictly_triangular(self, ladder_model):
        assert np.abs(np.triu(ladder_model.lower)).max() == 0.0


class TestRotatingFrame:
    def test_resonant_levels_have_zero_detuning(self, ladder_model):
        fr = rotating_frame(ladder_model, ladder_model.omega[1])
        assert fr.delta[0] == 0.0
        assert abs(fr.delta[1]) < 1e-12

    def test_detuning_values(self, frame):
        # delta_2 = omega(1,2) - omega(0,1), delta_3 adds omega(2,3) - omega(0,1)
        np.testing.assert_allclose(frame.delta[2] / TWO_PI, -0.22539,
                                   atol=1e-10)
        np.testing.assert_allclose(frame.delta[3] / TWO_PI, -0.70549,
                                   atol=1e-10)

    def test_detuning_identity_is_exact(self, ladder_model):
        omega_d = 0.7 * ladder_model.omega[1]
        fr = rotating_frame(ladder_model, omega_d)
        k = np.arange(ladder_model.dim)
        assert np.all(fr.delta == ladder_model.omega - k * omega_d)

    def test_rejects_nonpositive_drive(self, ladder_model):
        with pytest.raises(InvalidSpecError):
            rotating_frame(ladder_model, 0.0)


class TestControlHamiltonians:
    def test_hermitian(self, hams):
        h1, h2 = hams
        assert np.abs(h1 - h1.conj().T).max() == 0.0
        assert np.abs(h2 - h2.conj().T).max() == 0.0

    def test_matrix_elements(self, hams):
        h1, h2 = hams
        assert h1[0, 1] == 1.0 and h1[1, 0] == 1.0
        assert h2[1, 0] == 1j
        assert h2[0, 1] == -1j

    def test_controls_do_not_commute(self, hams):
        h1, h2 = hams
        assert np.abs(h1 @ h2 - h2 @ h1).max() > 0.1


@pytest.fixture(scope="module")
def charge_model(device_spec):
    return fit_charge_model(device_spec, n_cut=20)


class TestChargeFit:

    def test_reproduces_transitions_within_1khz(self, charge_model):
        freqs = charge_model.transition_freqs_ghz
        assert abs(freqs[0] - 4.09948) < 1e-6
        assert abs(freqs[1] - 3.87409) < 1e-6

    def test_anharmonicity(self, charge_model):
        freqs = charge_model.transition_freqs_ghz
        # 4.09948 - 3.87409 = 0.22539 GHz
        assert abs((freqs[0] - freqs[1]) - 0.22539) < 2e-6

    def test_truncation_convergence(self, device_spec):
        small = fit_charge_model(device_spec, n_cut=15)
        large = fit_charge_model(device_spec, n_cut=25)
        # < 1 Hz shift on every eigenfrequency
        assert np.abs(small.omega - large.omega).max() < TWO_PI * 1e-9

    def test_normalization_and_shape(self, charge_model):
        assert charge_model.lower[1, 0] == 1.0
        assert np.abs(np.triu(charge_model.lower)).max() == 0.0

    def test_nonadjacent_elements(self, charge_model):
        lower = charge_model.lower
        # 0-3 coupling is parity-allowed and small; 0-2 vanishes by parity
        assert 0 < abs(lower[3, 0]) < 0.2
        assert abs(lower[2, 0]) < 1e-10

    def test_transmon_regime(self, charge_model):
        assert charge_model.ej_ghz / charge_model.ec_ghz > 20

    def test_ng_irrelevant_for_fitted_transitions(self, device_spec):
        a = fit_charge_model(device_spec, n_cut=20, n_g=0.0)
        b = fit_charge_model(device_spec, n_cut=20, n_g=0.25)
        # Qubit levels are charge-insensitive; only the highest level
        # shows appreciable dispersion.
        assert np.abs(a.omega[:3] - b.omega[:3]).max() < TWO_PI * 1e-9
        assert abs(a.omega[3] - b.omega[3]) < TWO_PI * 2e-3

    def test_rejects_small_ncut(self, device_spec):
        with pytest.raises(InvalidSpecError):
            fit_charge_model(device_spec, n_cut=5)


class TestModelFiles:
    def test_round_trip_spectrum(self, ladder_model, tmp_path):
        path = tmp_path / "model.json"
        save_model(ladder_model, path)
        again = load_model(path)
        np.testing.assert_array_equal(again.omega, ladder_model.omega)
        np.testing.assert_array_equal(again.lower, ladder_model.lower)
        assert again.source == "spectrum"
        assert again.device == ladder_model.device

    def test_round_trip_charge(self, device_spec, tmp_path):
        model = fit_charge_model(device_spec, n_cut=12)
        path = tmp_path / "model.json"
        save_model(model, path)
        again = load_model(path)
        assert again.source == "charge_fit"
        assert again.ej_ghz == model.ej_ghz
        assert again.ec_ghz == model.ec_ghz

    def test_missing_field(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"dim": 4, "source": "spectrum"}')
        with pytest.raises(SchemaError, match="omega_rad_per_ns"):
            load_model(path)
