import numpy as np
import pytest

from quditpulse.model import (
    DeviceSpec,
    control_hamiltonians,
    model_from_spectrum,
    rotating_frame,
)
from quditpulse.optimize import ObjectiveConfig, optimize_pulse, swap_gate
from quditpulse.propagate import collapse_operators

MEASURED_TRANSITIONS_GHZ = (4.09948, 3.87409, 3.61938)
MEASURED_T1_US = (55.0, 26.0, 18.0)
MEASURED_T2_US = (35.0, 13.0, 7.5)
T2_TAGS = ("ramsey", "echo", "echo")
T2_SIM_US = (35.0, 3.838, 0.224)

REFERENCE_SEED = 7


def make_device_spec(**overrides) -> DeviceSpec:
    kwargs = dict(
        transition_freqs_ghz=MEASURED_TRANSITIONS_GHZ,
        t1_us=MEASURED_T1_US,
        t2_us=MEASURED_T2_US,
        t2_tags=T2_TAGS,
        t2_sim_us=T2_SIM_US,
        readout_freq_ghz=7.0768,
        chi_qc_mhz=1.017,
    )
    kwargs.update(overrides)
    return DeviceSpec(**kwargs)


@pytest.fixture(scope="session")
def device_spec():
    return make_device_spec()


@pytest.fixture(scope="session")
def ladder_model(device_spec):
    return model_from_spectrum(device_spec)


@pytest.fixture(scope="session")
def frame(ladder_model):
    return rotating_frame(ladder_model, ladder_model.omega[1])


@pytest.fixture(scope="session")
def hams(ladder_model):
    return control_hamiltonians(ladder_model)


@pytest.fixture(scope="session")
def reference_cfg():
    return ObjectiveConfig(gate_time_ns=150.0, dt_ns=0.5)


@pytest.fixture(scope="session")
def collapse_sim(device_spec):
    return collapse_operators(device_spec, t2_source="sim")


@pytest.fixture(scope="session")
def swap_optimization(ladder_model, frame, reference_cfg):
    """The reference exchange-gate optimization, run once per session."""
    target = swap_gate(0, 2, dim=4, computational_dim=3)
    pulse, report = optimize_pulse(
        ladder_model, frame, target, reference_cfg,
        seed=REFERENCE_SEED, n_starts=10, max_iterations=1200)
    return pulse, report, target


@pytest.fixture(scope="session")
def swap_pulse(swap_optimization):
    return swap_optimization[0]


def basis_density(level, dim=4):
    rho = np.zeros((dim, dim), dtype=complex)
    rho[level, level] = 1.0
    return rho
