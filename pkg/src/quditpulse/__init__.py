"""Toolkit for designing, simulating and evaluating qudit control pulses."""

__version__ = "0.1.0"

from .model import (
    DeviceSpec,
    RotatingFrame,
    TransmonModel,
    control_hamiltonians,
    fit_charge_model,
    model_from_spectrum,
    rotating_frame,
)
from .optimize import (
    ObjectiveConfig,
    OptimizationReport,
    TargetGate,
    constrain,
    free_evolution_gate,
    gradient,
    objective,
    optimize_pulse,
    rotate_target,
    swap_gate,
)
from .propagate import (
    CollapseSet,
    ControlPulse,
    TrajectoryResult,
    collapse_operators,
    lindblad_evolve,
    propagate_lab,
    propagate_unitary,
    repeated_gate_trajectory,
)
from .tomography import (
    FidelityReport,
    ProcessBasis,
    ProcessMatrix,
    apply_process,
    average_fidelities,
    chi_from_unitary,
    entanglement_fidelity,
    fit_chi,
    gate_fidelity,
    process_basis,
    process_fidelity,
    simulate_process_data,
)
from .waveform import (
    LabWaveform,
    Scalogram,
    demodulate,
    export_waveform,
    import_waveform,
    morlet_cwt,
    synthesize_lab,
)
