import numpy as np
import pytest

from quditpulse.errors import (
    InvalidCoherenceError,
    RefineGridError,
    SchemaError,
)
from quditpulse.model import (
    control_hamiltonians,
    model_from_spectrum,
    rotating_frame,
)
from quditpulse.propagate import (
    CollapseSet,
    ControlPulse,
    collapse_operators,
    export_repeated,
    export_trajectory,
    import_repeated,
    import_trajectory,
    lindblad_evolve,
    lindblad_gate_superoperator,
    load_pulse,
    propagate_lab,
    propagate_unitary,
    repeated_gate_trajectory,
    save_pulse,
    unitary_gate,
)

from conftest import basis_density, make_device_spec


def zero_pulse(n=300, dt=0.5):
    return ControlPulse(dt_ns=dt, samples=np.zeros(n, complex),
                        gate_time_ns=n * dt)


def two_level_setup():
    spec = make_device_spec(transition_freqs_ghz=(4.09948,), t1_us=(55.0,),
                            t2_us=(35.0,), t2_tags=("ramsey",),
                            t2_sim_us=(35.0,), guard_index=1)
    model = model_from_spectrum(spec)
    fr = rotating_frame(model, model.omega[1])
    h1, h2 = control_hamiltonians(model)
    return fr, h1, h2


class TestUnitaryPropagation:
    def test_zero_pulse_gives_free_evolution(self, frame, hams):
        h1, h2 = hams
        pulse = zero_pulse()
        traj = propagate_unitary(frame, h1, h2, pulse)
        expected = np.diag(np.exp(-1j * frame.delta * pulse.gate_time_ns))
        assert np.abs(traj.final_propagator - expected).max() < 1e-12

    def test_unitarity_every_step(self, frame, hams, swap_pulse):
        h1, h2 = hams
        traj = propagate_unitary(frame, h1, h2, swap_pulse)
        us = traj.propagators
        dev = np.abs(np.einsum("nba,nbc->nac", us.conj(), us)
                     - np.eye(4)).max()
        assert dev < 1e-10

    def test_rabi_oscillation(self):
        fr, h1, h2 = two_level_setup()
        xi = 2 * np.pi * 0.003
        pulse = ControlPulse(0.25, np.full(400, xi, complex), 100.0)
        traj = propagate_unitary(fr, h1, h2, pulse)
        expected = np.sin(xi * traj.times_ns) ** 2
        np.testing.assert_allclose(traj.populations[:, 1], expected,
                                   atol=1e-12)

    def test_populations_sum_to_one(self, frame, hams, swap_pulse):
        h1, h2 = hams
        traj = propagate_unitary(frame, h1, h2, swap_pulse)
        np.testing.assert_allclose(traj.populations.sum(axis=1), 1.0,
                                   atol=1e-12)

    def test_step_halving_is_exact(self, frame, hams, swap_pulse):
        h1, h2 = hams
        coarse = propagate_unitary(frame, h1, h2, swap_pulse)
        fine = propagate_unitary(frame, h1, h2, ControlPulse(
            swap_pulse.dt_ns / 2, np.repeat(swap_pulse.samples, 2),
            swap_pulse.gate_time_ns))
        assert np.abs(fine.final_populations
                      - coarse.final_populations).max() < 1e-8

    def test_coarse_grid_rejected(self, frame, hams):
        h1, h2 = hams
        pulse = zero_pulse(n=100, dt=1.5)  # |delta_3| * 1.5 ns > pi
        with pytest.raises(RefineGridError):
            propagate_unitary(frame, h1, h2, pulse)

    def test_wrong_frame_rejected(self, frame, hams):
        h1, h2 = hams
        pulse = ControlPulse(0.5, np.zeros(10, complex), 5.0, frame="lab")
        with pytest.raises(SchemaError):
            propagate_unitary(frame, h1, h2, pulse)


class TestLabPropagation:
    def test_zero_waveform_constant_populations(self, ladder_model):
        pulse = ControlPulse(1 / 32, np.zeros(3200, complex), 100.0,
                             frame="lab")
        psi0 = np.zeros(4, complex)
        psi0[2] = 1.0
        traj = propagate_lab(ladder_model, pulse, psi0=psi0)
        np.testing.assert_allclose(traj.populations[:, 2], 1.0, atol=1e-12)

    def test_single_tone_rabi(self, ladder_model):
        # Weak resonant drive: two-level Rabi oscillation of the envelope
        # convention sin^2(|xi| t) up to counter-rotating corrections.
        omega_d = ladder_model.omega[1]
        xi = 2 * np.pi * 5e-4
        t = np.arange(0, 100 * 32) / 32
        samples = 2 * xi * np.cos(omega_d * t)
        pulse = ControlPulse(1 / 32, samples.astype(complex), 100.0,
                             frame="lab")
        traj = propagate_lab(ladder_model, pulse)
        expected = np.sin(xi * traj.times_ns) ** 2
        assert np.abs(traj.populations[:, 1] - expected).max() < 2e-3


class TestCollapseOperators:
    def test_dephasing_rate_from_standard_relation(self, device_spec):
        col = collapse_operators(device_spec, t2_source="sim")
        # 1/35 - 1/(2*55) = 0.0194805... per us for the 0-1 transition
        gamma_01_per_us = col.dephasing_rates_per_ns[0] * 1e3
        assert gamma_01_per_us == pytest.approx(0.0194805, abs=1e-6)

    def test_relaxation_rates(self, device_spec):
        col = collapse_operators(device_spec)
        np.testing.assert_allclose(
            col.relaxation_rates_per_ns,
            [1 / 55e3, 1 / 26e3, 1 / 18e3], rtol=1e-12)

    def test_infinite_times_give_empty_set(self):
        spec = make_device_spec(t1_us=(np.inf,) * 3, t2_us=(np.inf,) * 3,
                                t2_sim_us=(np.inf,) * 3)
        assert collapse_operators(spec).empty

    def test_t2_at_boundary_gives_zero_dephasing(self):
        spec = make_device_spec(t1_us=(50.0, 26.0, 18.0),
                                t2_us=(100.0, 13.0, 7.5),
                                t2_sim_us=(100.0, 13.0, 7.5))
        col = collapse_operators(spec)
        # level-1 dephasing vanishes when T2(0,1) = 2 T1(0,1)
        assert all(abs(op[1, 1]) < 1e-12 for op in col.dephasing_ops)

    def test_unphysical_t2_rejected(self):
        spec = make_device_spec(t2_sim_us=(150.0, 3.838, 0.224))
        with pytest.raises(InvalidCoherenceError):
            collapse_operators(spec)

    def test_table_source_uses_tabulated_column(self, device_spec):
        sim = collapse_operators(device_spec, t2_source="sim")
        table = collapse_operators(device_spec, t2_source="table")
        assert (sim.dephasing_rates_per_ns[-1]
                > table.dephasing_rates_per_ns[-1])


class TestLindblad:
    def test_undriven_decay_matches_exponential(self, frame, hams,
                                                device_spec):
        h1, h2 = hams
        col = collapse_operators(device_spec)
        pulse = zero_pulse(n=150, dt=1.0)
        traj = lindblad_evolve(frame, h1, h2, pulse, basis_density(1), col)
        t1_ns = 55e3
        expected = np.exp(-traj.times_ns / t1_ns)
        rel = np.abs(traj.populations[:, 1] - expected) / expected
        assert rel.max() < 1e-6

    def test_no_drive_no_collapse_constant(self, frame, hams):
        h1, h2 = hams
        rho0 = basis_density(2)
        traj = lindblad_evolve(frame, h1, h2, zero_pulse(150, 1.0), rho0,
                               None)
        np.testing.assert_allclose(traj.populations[:, 2], 1.0, atol=1e-12)

    def test_trace_preserved(self, frame, hams, swap_pulse, collapse_sim):
        h1, h2 = hams
        traj = lindblad_evolve(frame, h1, h2, swap_pulse, basis_density(0),
                               collapse_sim)
        assert np.abs(traj.populations.sum(axis=1) - 1.0).max() < 1e-8

    def test_zero_collapse_matches_unitary(self, frame, hams, swap_pulse):
        h1, h2 = hams
        closed = propagate_unitary(frame, h1, h2, swap_pulse)
        open_run = lindblad_evolve(frame, h1, h2, swap_pulse,
                                   basis_density(0), CollapseSet())
        assert np.abs(open_run.populations
                      - closed.populations).max() < 1e-8

    def test_density_matrices_stay_physical(self, frame, hams, swap_pulse,
                                            collapse_sim):
        h1, h2 = hams
        traj = lindblad_evolve(frame, h1, h2, swap_pulse, basis_density(0),
                               collapse_sim, store_density=True)
        rhos = traj.density_matrices
        herm = np.abs(rhos - rhos.conj().transpose(0, 2, 1)).max()
        assert herm < 1e-8
        eigs = np.linalg.eigvalsh(rhos)
        assert eigs.min() > -1e-8

    def test_step_halving_control(self, frame, hams, collapse_sim):
        h1, h2 = hams
        pulse = zero_pulse(n=50, dt=1.0)
        lindblad_evolve(frame, h1, h2, pulse, basis_density(1), collapse_sim,
                        check_step_halving=True)

    def test_invalid_initial_state_rejected(self, frame, hams):
        h1, h2 = hams
        rho0 = np.eye(4, dtype=complex)  # trace 4
        with pytest.raises(Exception):
            lindblad_evolve(frame, h1, h2, zero_pulse(10, 0.5), rho0, None)


class TestRepeatedGate:
    def test_closed_equals_matrix_power(self, frame, hams, swap_pulse):
        h1, h2 = hams
        reps = 6
        pops = repeated_gate_trajectory(frame, h1, h2, swap_pulse, reps,
                                        basis_density(0))
        gate = unitary_gate(frame, h1, h2, swap_pulse)
        for k in (1, 3, 6):
            gk = np.linalg.matrix_power(gate, k)
            rho = gk @ basis_density(0) @ gk.conj().T
            np.testing.assert_allclose(pops[k], np.diag(rho).real,
                                       atol=1e-10)

    def test_guard_start_stays_for_optimized_gate(self, frame, hams,
                                                  swap_pulse):
        h1, h2 = hams
        pops = repeated_gate_trajectory(frame, h1, h2, swap_pulse, 4,
                                        basis_density(3))
        assert pops[:, 3].min() > 0.99

    def test_open_envelope_shrinks(self, frame, hams, swap_pulse,
                                   collapse_sim):
        h1, h2 = hams
        pops = repeated_gate_trajectory(frame, h1, h2, swap_pulse, 21,
                                        basis_density(0), collapse_sim)
        envelope = np.abs(pops[:, 0] - pops[:, 2])
        assert np.all(np.diff(envelope) < 0)

    def test_rejects_zero_reps(self, frame, hams, swap_pulse):
        h1, h2 = hams
        with pytest.raises(SchemaError):
            repeated_gate_trajectory(frame, h1, h2, swap_pulse, 0,
                                     basis_density(0))

    def test_open_matches_superoperator_power(self, frame, hams, swap_pulse,
                                              collapse_sim):
        h1, h2 = hams
        gate = lindblad_gate_superoperator(frame, h1, h2, swap_pulse,
                                           collapse_sim)
        pops = repeated_gate_trajectory(frame, h1, h2, swap_pulse, 3,
                                        basis_density(0), collapse_sim)
        vec = basis_density(0).reshape(16)
        vec = np.linalg.matrix_power(gate, 3) @ vec
        np.testing.assert_allclose(pops[3], vec[[0, 5, 10, 15]].real,
                                   atol=1e-10)


class TestFiles:
    def test_pulse_round_trip(self, swap_pulse, tmp_path):
        path = tmp_path / "pulse.txt"
        save_pulse(swap_pulse, path)
        again = load_pulse(path)
        np.testing.assert_array_equal(again.samples, swap_pulse.samples)
        assert again.dt_ns == swap_pulse.dt_ns
        assert again.gate_time_ns == swap_pulse.gate_time_ns

    def test_trajectory_round_trip(self, frame, hams, tmp_path):
        h1, h2 = hams
        traj = propagate_unitary(frame, h1, h2, zero_pulse(20, 0.5))
        path = tmp_path / "traj.csv"
        export_trajectory(traj, path=path)
        times, pops = import_trajectory(path)
        np.testing.assert_array_equal(times, traj.times_ns)
        np.testing.assert_array_equal(pops, traj.populations)

    def test_repeated_round_trip(self, tmp_path):
        pops = np.random.default_rng(0).random((5, 4))
        path = tmp_path / "reps.csv"
        export_repeated(pops, path)
        np.testing.assert_array_equal(import_repeated(path), pops)

    def test_truncated_pulse_file(self, swap_pulse, tmp_path):
        path = tmp_path / "pulse.txt"
        save_pulse(swap_pulse, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-3]) + "\n")
        with pytest.raises(SchemaError):
            load_pulse(path)
