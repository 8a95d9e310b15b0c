"""Time-ordered propagation: closed-system, lab-frame, and Lindblad.

The rotating-frame Hamiltonian is piecewise constant over the control
grid, so each step propagator is an exact matrix exponential computed
from the eigendecomposition of the step Hamiltonian. Open-system
evolution exponentiates the full Lindblad superoperator per step, which
is likewise exact for piecewise-constant controls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.signal import resample as _fft_resample

from .errors import (
    IntegratorAccuracyError,
    InvalidCoherenceError,
    NumericIntegrityError,
    RefineGridError,
    SchemaError,
)
from .model import DeviceSpec, RotatingFrame, TransmonModel

PULSE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ControlPulse:
    """Piecewise-constant complex drive envelope on a uniform grid.

    ``samples[n]`` holds the envelope (rad/ns) over the step
    ``[n*dt_ns, (n+1)*dt_ns)``. The real part is the in-phase control,
    the imaginary part the quadrature control. ``frame`` is either
    ``rotating`` (complex envelope) or ``lab`` (real sampled signal).
    """

    dt_ns: float
    samples: np.ndarray
    gate_time_ns: float
    frame: str = "rotating"

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=complex)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size == 0:
            raise SchemaError("pulse samples must be a non-empty 1-d array")
        if self.dt_ns <= 0:
            raise SchemaError("dt_ns must be positive")
        if abs(samples.size * self.dt_ns - self.gate_time_ns) > self.dt_ns:
            raise SchemaError(
                "samples * dt must equal the gate time within one grid step")
        if self.frame not in ("rotating", "lab"):
            raise SchemaError(f"unknown pulse frame {self.frame!r}")

    @property
    def n_samples(self) -> int:
        return self.samples.size

    @property
    def times_ns(self) -> np.ndarray:
        """Start time of each step."""
        return np.arange(self.n_samples) * self.dt_ns

    @property
    def u1(self) -> np.ndarray:
        return self.samples.real

    @property
    def u2(self) -> np.ndarray:
        return self.samples.imag

    def max_amplitude(self) -> float:
        return float(np.abs(self.samples).max())


@dataclass(frozen=True)
class TrajectoryResult:
    """Time-stamped populations plus optional density matrices / propagators."""

    times_ns: np.ndarray
    populations: np.ndarray
    frame: str = "rotating"
    density_matrices: np.ndarray | None = None
    propagators: np.ndarray | None = None

    @property
    def final_populations(self) -> np.ndarray:
        return self.populations[-1]

    @property
    def final_propagator(self) -> np.ndarray:
        if self.propagators is None:
            raise ValueError("trajectory was run without storing propagators")
        return self.propagators[-1]


@dataclass(frozen=True)
class CollapseSet:
    """Scaled collapse operators (already multiplied by sqrt(rate), 1/ns units)."""

    relaxation_ops: tuple[np.ndarray, ...] = ()
    dephasing_ops: tuple[np.ndarray, ...] = ()
    relaxation_rates_per_ns: tuple[float, ...] = ()
    dephasing_rates_per_ns: tuple[float, ...] = ()

    @property
    def ops(self) -> tuple[np.ndarray, ...]:
        return self.relaxation_ops + self.dephasing_ops

    @property
    def empty(self) -> bool:
        return not self.ops


# --- step construction ------------------------------------------------------

def step_hamiltonians(frame: RotatingFrame, h1: np.ndarray, h2: np.ndarray,
                      samples: np.ndarray) -> np.ndarray:
    """Stack of rotating-frame Hamiltonians, one per control sample."""
    diag = np.diag(frame.delta).astype(complex)
    u1 = samples.real[:, None, None]
    u2 = samples.imag[:, None, None]
    return diag[None, :, :] + u1 * h1 + u2 * h2


def step_eigensystems(h_stack: np.ndarray):
    """Batched eigendecomposition of Hermitian step Hamiltonians."""
    return np.linalg.eigh(h_stack)


def steps_from_eigensystems(evals: np.ndarray, evecs: np.ndarray,
                            dt: float) -> np.ndarray:
    """Exact step propagators exp(-i H dt) from eigensystems."""
    phases = np.exp(-1j * evals * dt)
    return np.einsum("...ab,...b,...cb->...ac", evecs, phases, evecs.conj())


def _check_step_phase(evals: np.ndarray, dt: float, max_step_phase: float):
    worst = float(np.abs(evals).max() * dt)
    if worst >= max_step_phase:
        raise RefineGridError(
            f"per-step phase {worst:.3f} rad reaches the aliasing limit "
            f"{max_step_phase:.3f}; refine the time grid")


def _check_populations(populations: np.ndarray, tol: float):
    drift = float(np.abs(populations.sum(axis=-1) - 1.0).max())
    if drift > tol:
        raise NumericIntegrityError(
            f"population sum drifted by {drift:.3e} (tolerance {tol:.1e})")


def propagate_unitary(frame: RotatingFrame, h1: np.ndarray, h2: np.ndarray,
                      pulse: ControlPulse, psi0: np.ndarray | None = None, *,
                      store_propagators: bool = True,
                      max_step_phase: float = np.pi) -> TrajectoryResult:
    """Closed-system propagation of a rotating-frame pulse.

    Returns the propagator trajectory U(t_n) on the pulse grid (time 0
    included) together with the populations of ``psi0`` (default: ground
    state). Each step is an exact exponential, so the only requirement
    on the grid is that it faithfully represents the control signal;
    a per-step phase beyond the aliasing limit raises RefineGridError.
    """
    if pulse.frame != "rotating":
        raise SchemaError("propagate_unitary expects a rotating-frame pulse")
    d = frame.delta.size
    hs = step_hamiltonians(frame, h1, h2, pulse.samples)
    evals, evecs = step_eigensystems(hs)
    _check_step_phase(evals, pulse.dt_ns, max_step_phase)
    steps = steps_from_eigensystems(evals, evecs, pulse.dt_ns)

    n = pulse.n_samples
    us = np.empty((n + 1, d, d), dtype=complex)
    us[0] = np.eye(d)
    for k in range(n):
        us[k + 1] = steps[k] @ us[k]

    deviation = np.abs(
        np.einsum("nba,nbc->nac", us.conj(), us) - np.eye(d)).max()
    if deviation > 1e-10:
        raise NumericIntegrityError(
            f"propagator unitarity violated by {deviation:.3e}")

    if psi0 is None:
        psi0 = np.zeros(d, dtype=complex)
        psi0[0] = 1.0
    psi_t = np.einsum("nab,b->na", us, np.asarray(psi0, dtype=complex))
    populations = np.abs(psi_t) ** 2
    _check_populations(populations, 1e-12)

    times = np.arange(n + 1) * pulse.dt_ns
    return TrajectoryResult(
        times_ns=times, populations=populations, frame="rotating",
        propagators=us if store_propagators else None)


def unitary_gate(frame: RotatingFrame, h1: np.ndarray, h2: np.ndarray,
                 pulse: ControlPulse) -> np.ndarray:
    """Single-gate propagator U(T_g) without storing the trajectory."""
    traj = propagate_unitary(frame, h1, h2, pulse, store_propagators=True)
    return traj.final_propagator


def propagate_lab(model: TransmonModel, lab_pulse: ControlPulse,
                  psi0: np.ndarray | None = None, *, oversample: int = 4,
                  store_propagators: bool = False,
                  max_step_phase: float = np.pi) -> TrajectoryResult:
    """Lab-frame propagation of a real sampled drive, without the RWA.

    The sampled signal is band-limited resampled onto midpoints of an
    ``oversample``-times finer grid before piecewise-constant stepping,
    which removes the zero-order-hold droop at the carrier frequency.
    Populations are recorded on the original sample grid; they are
    frame-invariant, so they compare directly against rotating-frame
    results.
    """
    if lab_pulse.frame != "lab":
        raise SchemaError("propagate_lab expects a lab-frame pulse")
    if np.abs(lab_pulse.samples.imag).max() > 1e-12:
        raise SchemaError("lab-frame samples must be real")
    if oversample < 1:
        raise SchemaError("oversample must be >= 1")

    s = lab_pulse.samples.real
    n = s.size
    q = int(oversample)
    # Midpoint values of the band-limited signal on the fine grid.
    s_mid = _fft_resample(s, 2 * q * n)[1::2]
    h_sub = lab_pulse.dt_ns / q

    d = model.dim
    c = model.lower.conj().T
    drive = (c + c.conj().T).astype(complex)
    diag = np.diag(model.omega).astype(complex)
    hs = diag[None, :, :] + s_mid[:, None, None] * drive
    evals, evecs = step_eigensystems(hs)
    _check_step_phase(evals, h_sub, max_step_phase)
    steps = steps_from_eigensystems(evals, evecs, h_sub)

    if psi0 is None:
        psi0 = np.zeros(d, dtype=complex)
        psi0[0] = 1.0
    psi = np.asarray(psi0, dtype=complex).copy()

    populations = np.empty((n + 1, d))
    populations[0] = np.abs(psi) ** 2
    us = None
    if store_propagators:
        us = np.empty((n + 1, d, d), dtype=complex)
        us[0] = np.eye(d)
    u = np.eye(d, dtype=complex)
    for m in range(n):
        for j in range(q):
            k = m * q + j
            psi = steps[k] @ psi
            if store_propagators:
                u = steps[k] @ u
        populations[m + 1] = np.abs(psi) ** 2
        if store_propagators:
            us[m + 1] = u
    # Fine-grid products run to ~20k sequential steps; roundoff alone
    # accumulates past 1e-12, so the sum check is relaxed one decade.
    _check_populations(populations, 1e-11)

    times = np.arange(n + 1) * lab_pulse.dt_ns
    return TrajectoryResult(times_ns=times, populations=populations,
                            frame="lab", propagators=us)


# --- dissipation ------------------------------------------------------------

def collapse_operators(spec: DeviceSpec, t2_source: str = "sim") -> CollapseSet:
    """Relaxation and dephasing operators from measured coherence times.

    Relaxation uses one lowering operator per transition at rate
    1/T1(k,k+1). Pure dephasing per transition follows
    1/T2 = 1/(2 T1) + gamma_phi; diagonal dephasing operators
    sqrt(2 gamma_k)|k><k| carry cumulative level rates such that each
    adjacent transition dephases at its gamma_phi.

    ``t2_source`` selects ``sim`` (simulation defaults, short-time
    Ramsey estimates) or ``table`` (the tabulated T2 column).
    """
    if t2_source == "sim":
        t2_us = spec.t2_sim_us
    elif t2_source == "table":
        t2_us = spec.t2_us
    else:
        raise SchemaError(f"unknown t2 source {t2_source!r}")

    d = spec.dim
    t1_ns = np.asarray(spec.t1_us, dtype=float) * 1e3
    t2_ns = np.asarray(t2_us, dtype=float) * 1e3

    for k in range(d - 1):
        if t2_ns[k] > 2.0 * t1_ns[k]:
            raise InvalidCoherenceError(
                f"transition {k}-{k + 1}: T2 = {t2_us[k]} us exceeds "
                f"2*T1 = {2 * spec.t1_us[k]} us")

    relax_rates = 1.0 / t1_ns
    gamma_phi = 1.0 / t2_ns - 0.5 / t1_ns  # per transition, >= 0 by the check

    # Cumulative level rates: coherence (k, k+1) dephases at
    # gamma_level[k] + gamma_level[k+1] = gamma_phi[k].
    gamma_level = np.zeros(d)
    for k in range(d - 1):
        gamma_level[k + 1] = gamma_phi[k] - gamma_level[k]
        if gamma_level[k + 1] < -1e-15:
            raise InvalidCoherenceError(
                f"cumulative dephasing rate for level {k + 1} is negative "
                f"({gamma_level[k + 1]:.3e} /ns); coherence times inconsistent")
    gamma_level = np.clip(gamma_level, 0.0, None)

    relax_ops = []
    relax_out = []
    for k in range(d - 1):
        if relax_rates[k] > 0:
            op = np.zeros((d, d), dtype=complex)
            op[k, k + 1] = np.sqrt(relax_rates[k])
            relax_ops.append(op)
            relax_out.append(float(relax_rates[k]))

    deph_ops = []
    deph_out = []
    for k in range(1, d):
        if gamma_level[k] > 0:
            op = np.zeros((d, d), dtype=complex)
            op[k, k] = np.sqrt(2.0 * gamma_level[k])
            deph_ops.append(op)
            deph_out.append(float(gamma_level[k]))

    return CollapseSet(
        relaxation_ops=tuple(relax_ops), dephasing_ops=tuple(deph_ops),
        relaxation_rates_per_ns=tuple(relax_out),
        dephasing_rates_per_ns=tuple(deph_out))


def lindblad_superoperator(h: np.ndarray,
                           collapse: CollapseSet | None) -> np.ndarray:
    """Lindblad generator as a d^2 x d^2 matrix (row-major vectorization)."""
    d = h.shape[0]
    eye = np.eye(d)
    gen = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    if collapse is not None:
        for op in collapse.ops:
            opc = op.conj()
            anti = op.conj().T @ op
            gen += (np.kron(op, opc)
                    - 0.5 * np.kron(anti, eye)
                    - 0.5 * np.kron(eye, anti.T))
    return gen


def _validate_density(rho: np.ndarray, tol: float = 1e-10):
    if np.abs(rho - rho.conj().T).max() > tol:
        raise NumericIntegrityError("initial density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol or abs(np.trace(rho).imag) > tol:
        raise NumericIntegrityError("initial density matrix must have trace 1")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise NumericIntegrityError("initial density matrix is not PSD")


def _step_superoperators(frame, h1, h2, pulse, collapse):
    hs = step_hamiltonians(frame, h1, h2, pulse.samples)
    dt = pulse.dt_ns
    return [expm(lindblad_superoperator(hs[k], collapse) * dt)
            for k in range(pulse.n_samples)]


def lindblad_evolve(frame: RotatingFrame, h1: np.ndarray, h2: np.ndarray,
                    pulse: ControlPulse, rho0: np.ndarray,
                    collapse: CollapseSet | None, *,
                    store_density: bool = False,
                    check_step_halving: bool = False,
                    halving_tol: float = 1e-8) -> TrajectoryResult:
    """Master-equation evolution over one pulse.

    The Hamiltonian is constant within each control step, so the step
    map is the exact exponential of the Lindblad generator. Populations
    are recorded on the pulse grid. With ``check_step_halving`` the run
    is repeated on a doubled grid and the final populations compared.
    """
    if pulse.frame != "rotating":
        raise SchemaError("lindblad_evolve expects a rotating-frame pulse")
    rho0 = np.asarray(rho0, dtype=complex)
    _validate_density(rho0)
    d = frame.delta.size
    n = pulse.n_samples

    steps = _step_superoperators(frame, h1, h2, pulse, collapse)
    vec = rho0.reshape(d * d).copy()
    populations = np.empty((n + 1, d))
    rhos = np.empty((n + 1, d, d), dtype=complex) if store_density else None
    diag_idx = np.arange(d) * d + np.arange(d)

    populations[0] = vec[diag_idx].real
    if store_density:
        rhos[0] = rho0
    for k in range(n):
        vec = steps[k] @ vec
        populations[k + 1] = vec[diag_idx].real
        if store_density:
            rhos[k + 1] = vec.reshape(d, d)

    _check_populations(populations, 1e-8)
    if populations.min() < -1e-8:
        raise NumericIntegrityError(
            f"negative population {populations.min():.3e} in Lindblad run")
    populations = np.clip(populations, 0.0, None)

    rho_final = vec.reshape(d, d)
    herm = np.abs(rho_final - rho_final.conj().T).max()
    if herm > 1e-8:
        raise NumericIntegrityError(
            f"density matrix hermiticity violated by {herm:.3e}")
    if np.linalg.eigvalsh(0.5 * (rho_final + rho_final.conj().T)).min() < -1e-8:
        raise NumericIntegrityError("density matrix lost positivity")

    if check_step_halving:
        fine = ControlPulse(dt_ns=pulse.dt_ns / 2,
                            samples=np.repeat(pulse.samples, 2),
                            gate_time_ns=pulse.gate_time_ns, frame="rotating")
        ref = lindblad_evolve(frame, h1, h2, fine, rho0, collapse)
        err = float(np.abs(ref.final_populations - populations[-1]).max())
        if err > halving_tol:
            raise IntegratorAccuracyError(
                f"step-halving error {err:.3e} exceeds {halving_tol:.1e}",
                error_estimate=err)

    times = np.arange(n + 1) * pulse.dt_ns
    return TrajectoryResult(times_ns=times, populations=populations,
                            frame="rotating", density_matrices=rhos)


def lindblad_gate_superoperator(frame, h1, h2, pulse: ControlPulse,
                                collapse: CollapseSet | None) -> np.ndarray:
    """Single-gate quantum map as a d^2 x d^2 superoperator matrix."""
    steps = _step_superoperators(frame, h1, h2, pulse, collapse)
    gate = steps[0]
    for step in steps[1:]:
        gate = step @ gate
    return gate


def repeated_gate_trajectory(frame: RotatingFrame, h1: np.ndarray,
                             h2: np.ndarray, pulse: ControlPulse,
                             n_reps: int, rho0: np.ndarray,
                             collapse: CollapseSet | None = None) -> np.ndarray:
    """Populations after 0..n_reps applications of the single-gate map.

    The gate map (unitary, or Lindblad superoperator when collapse
    operators are given) is computed once and applied repeatedly,
    phase-coherently, exactly as a generator replaying one waveform
    back to back. Row k of the result holds the populations after k
    applications.
    """
    if n_reps < 1:
        raise SchemaError("n_reps must be at least 1")
    rho0 = np.asarray(rho0, dtype=complex)
    _validate_density(rho0)
    d = frame.delta.size
    out = np.empty((n_reps + 1, d))
    out[0] = np.diag(rho0).real

    if collapse is None or collapse.empty:
        gate = unitary_gate(frame, h1, h2, pulse)
        rho = rho0.copy()
        for k in range(n_reps):
            rho = gate @ rho @ gate.conj().T
            out[k + 1] = np.diag(rho).real
        _check_populations(out, 1e-10)
    else:
        gate = lindblad_gate_superoperator(frame, h1, h2, pulse, collapse)
        vec = rho0.reshape(d * d).copy()
        diag_idx = np.arange(d) * d + np.arange(d)
        for k in range(n_reps):
            vec = gate @ vec
            out[k + 1] = vec[diag_idx].real
        _check_populations(out, 1e-8)
        out = np.clip(out, 0.0, None)
    return out


# --- pulse and trajectory files ----------------------------------------------

def save_pulse(pulse: ControlPulse, path) -> None:
    lines = [
        f"# quditpulse pulse v{PULSE_FORMAT_VERSION}",
        f"# frame={pulse.frame}",
        f"# dt_ns={pulse.dt_ns!r}",
        f"# gate_time_ns={pulse.gate_time_ns!r}",
        f"# samples={pulse.n_samples}",
    ]
    lines += [f"{float(x.real)!r} {float(x.imag)!r}" for x in pulse.samples]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_pulse(path) -> ControlPulse:
    with open(path) as fh:
        raw = fh.read().splitlines()
    header = {}
    body = []
    for line in raw:
        if line.startswith("#"):
            text = line[1:].strip()
            if "=" in text:
                key, _, value = text.partition("=")
                header[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    for key in ("frame", "dt_ns", "gate_time_ns", "samples"):
        if key not in header:
            raise SchemaError(f"pulse file missing header field {key!r}")
    count = int(header["samples"])
    if len(body) != count:
        raise SchemaError(
            f"pulse file declares {count} samples but contains {len(body)}")
    samples = np.empty(count, dtype=complex)
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != 2:
            raise SchemaError(f"bad pulse sample line: {line!r}")
        samples[i] = float(parts[0]) + 1j * float(parts[1])
    return ControlPulse(dt_ns=float(header["dt_ns"]), samples=samples,
                        gate_time_ns=float(header["gate_time_ns"]),
                        frame=header["frame"])


def export_trajectory(traj_or_times, populations=None, path=None) -> None:
    """Write a time-resolved trajectory as CSV (header time_ns,p0,...)."""
    if isinstance(traj_or_times, TrajectoryResult):
        times, pops = traj_or_times.times_ns, traj_or_times.populations
    else:
        times, pops = traj_or_times, populations
    d = pops.shape[1]
    lines = ["time_ns," + ",".join(f"p{k}" for k in range(d))]
    for t, row in zip(times, pops):
        lines.append(",".join([repr(float(t))] + [repr(float(p))
                                                  for p in row]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def import_trajectory(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a trajectory CSV back as (times, populations), bit-exact."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("time_ns,"):
        raise SchemaError("trajectory CSV must start with a time_ns header")
    rows = [[float(tok) for tok in line.split(",")] for line in lines[1:]]
    data = np.asarray(rows)
    return data[:, 0], data[:, 1:]


def export_repeated(populations: np.ndarray, path) -> None:
    """Write per-repetition populations as CSV keyed by repetition index."""
    d = populations.shape[1]
    lines = ["rep," + ",".join(f"p{k}" for k in range(d))]
    for rep, row in enumerate(populations):
        lines.append(",".join([str(rep)] + [repr(float(p)) for p in row]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def import_repeated(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("rep,"):
        raise SchemaError("repeated-gate CSV must start with a rep header")
    rows = []
    for line in lines[1:]:
        toks = line.split(",")
        rows.append([float(tok) for tok in toks[1:]])
    return np.asarray(rows)
