"""Gradient-based search for rotating-frame control envelopes.

The objective is a leakage-penalized infidelity: one minus the squared
modulus of the computational-block trace overlap with the rotated
target, plus the time-averaged guard occupation accumulated by
computational initial states. Gradients are exact: each step propagator
is an eigenbasis matrix exponential and its derivative follows from the
divided-difference (Daletskii-Krein) formula, chained through a single
backward adjoint sweep.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import GradientIntegrityError, SchemaError
from .model import RotatingFrame, TransmonModel
from .propagate import (
    ControlPulse,
    TrajectoryResult,
    step_eigensystems,
    step_hamiltonians,
    steps_from_eigensystems,
)

TWO_PI = 2.0 * np.pi

#: 6 MHz rotating-frame drive limit, in rad/ns.
DEFAULT_AMPLITUDE_CAP = TWO_PI * 6e-3


@dataclass(frozen=True)
class TargetGate:
    """Target unitary together with the computational-space dimension."""

    matrix: np.ndarray
    computational_dim: int
    label: str = "custom"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        d = m.shape[0]
        if m.shape != (d, d):
            raise SchemaError("target matrix must be square")
        if np.abs(m.conj().T @ m - np.eye(d)).max() > 1e-12:
            raise SchemaError("target matrix is not unitary")
        if not 1 <= self.computational_dim <= d:
            raise SchemaError("computational_dim out of range")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def swap_gate(level_a: int, level_b: int, dim: int = 4,
              computational_dim: int = 3) -> TargetGate:
    """Permutation gate exchanging two levels, identity elsewhere."""
    m = np.eye(dim, dtype=complex)
    m[[level_a, level_b]] = m[[level_b, level_a]]
    return TargetGate(matrix=m, computational_dim=computational_dim,
                      label=f"swap{level_a}{level_b}")


def free_evolution_gate(model: TransmonModel, gate_time_ns: float,
                        computational_dim: int = 3) -> TargetGate:
    """The gate realized by doing nothing for the gate time.

    Its rotating-frame image is diag(exp(-i delta_k T)), for which the
    zero pulse is an exact solution.
    """
    m = np.diag(np.exp(-1j * model.omega * gate_time_ns))
    return TargetGate(matrix=m, computational_dim=computational_dim,
                      label="free")


@dataclass(frozen=True)
class ObjectiveConfig:
    """Objective weights, drive constraints, and the control grid."""

    gate_time_ns: float
    dt_ns: float = 0.5
    amplitude_cap: float = DEFAULT_AMPLITUDE_CAP
    guard_weights: tuple[float, ...] | None = None
    leakage_weight: float = 1.0
    boundary_zero: bool = True
    edge_window_ns: float | None = None
    f_max_ghz: float | None = None

    def weights_for_dim(self, dim: int) -> np.ndarray:
        if self.guard_weights is None:
            w = np.zeros(dim)
            w[dim - 1] = 1.0
            return w
        w = np.asarray(self.guard_weights, dtype=float)
        if w.shape != (dim,):
            raise SchemaError(f"guard_weights must have length {dim}")
        if np.any(w < 0):
            raise SchemaError("guard weights must be non-negative")
        return w

    @property
    def n_samples(self) -> int:
        n = int(round(self.gate_time_ns / self.dt_ns))
        if n < 3:
            raise SchemaError("control grid must have at least 3 samples")
        return n


@dataclass
class OptimizationReport:
    """Outcome of a (multi-start) pulse optimization."""

    objective: float
    fidelity: float
    leakage: float
    converged: bool
    fg_target: float
    best_start: int
    n_starts_run: int
    iterations: list = field(default_factory=list)
    per_start: list = field(default_factory=list)
    gradient_check: float | None = None
    wall_time_s: float | None = None

    def as_dict(self, include_volatile: bool = False) -> dict:
        out = {
            "objective": self.objective,
            "fidelity": self.fidelity,
            "leakage": self.leakage,
            "converged": self.converged,
            "fg_target": self.fg_target,
            "best_start": self.best_start,
            "n_starts_run": self.n_starts_run,
            "gradient_check": self.gradient_check,
            "iterations": self.iterations,
            "per_start": self.per_start,
        }
        if include_volatile:
            out["wall_time_s"] = self.wall_time_s
        return out


def rotate_target(targ: TargetGate, frame: RotatingFrame,
                  gate_time_ns: float) -> np.ndarray:
    """Target unitary expressed in the rotating frame at the gate time."""
    k = np.arange(targ.dim)
    r_end = np.exp(1j * frame.omega_d * gate_time_ns * k)
    return r_end[:, None] * targ.matrix


# --- objective core ---------------------------------------------------------

def _trapezoid_weights(n_steps: int, dt: float, gate_time: float) -> np.ndarray:
    w = np.full(n_steps + 1, dt / gate_time)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _leakage_density(us: np.ndarray, wdiag: np.ndarray, dc: int) -> np.ndarray:
    """Guard-weighted occupation of computational columns, per time."""
    cols = us[:, :, :dc]
    return np.einsum("naj,a,naj->n", cols.conj(), wdiag, cols).real


def _overlap(target_rot: np.ndarray, u_final: np.ndarray, dc: int) -> complex:
    return complex(np.sum(target_rot[:, :dc].conj() * u_final[:, :dc]))


def _evaluate(frame, h1, h2, samples, dt, gate_time, target_rot, wdiag, dc,
              leakage_weight, need_grad):
    """Objective, fidelity, leakage and (optionally) the exact gradient.

    Returns (g, fg, leak, grad) with grad laid out as
    [dG/du1_0..dG/du1_{N-1}, dG/du2_0..dG/du2_{N-1}] or None.
    """
    n = samples.size
    d = frame.delta.size
    hs = step_hamiltonians(frame, h1, h2, samples)
    evals, evecs = step_eigensystems(hs)
    steps = steps_from_eigensystems(evals, evecs, dt)

    us = np.empty((n + 1, d, d), dtype=complex)
    us[0] = np.eye(d)
    for k in range(n):
        us[k + 1] = steps[k] @ us[k]

    weights = _trapezoid_weights(n, dt, gate_time)
    leak_t = _leakage_density(us, wdiag, dc)
    leakage = float(weights @ leak_t)
    m = _overlap(target_rot, us[-1], dc)
    fg = abs(m) / dc
    g = (1.0 - fg * fg) + leakage_weight * leakage
    if not need_grad:
        return g, fg, leakage, None

    # Divided differences of exp(-i dt x) over eigenvalue pairs:
    # dd_ab = -i dt exp(-i (la+lb) dt / 2) sinc((la-lb) dt / 2).
    lsum = evals[:, :, None] + evals[:, None, :]
    ldif = evals[:, :, None] - evals[:, None, :]
    dd = (-1j * dt * np.exp(-0.5j * dt * lsum)
          * np.sinc(0.5 * dt * ldif / np.pi))
    # Step-derivative kernels in each step eigenbasis.
    k1 = np.einsum("nba,bc,ncd->nad", evecs.conj(), h1, evecs) * dd
    k2 = np.einsum("nba,bc,ncd->nad", evecs.conj(), h2, evecs) * dd

    target_cols = np.zeros((d, d), dtype=complex)
    target_cols[:, :dc] = target_rot[:, :dc]
    proj = np.zeros((d, d))
    proj[:dc, :dc] = np.eye(dc)
    wu = wdiag[:, None] * us[-1] @ proj

    lam = target_cols  # adjoint of the overlap term
    phi = weights[-1] * wu  # adjoint of the leakage term
    grad = np.empty(2 * n)
    mc = np.conj(m)
    for idx in range(n - 1, -1, -1):
        v = evecs[idx]
        ut = v.conj().T @ us[idx]
        lt = v.conj().T @ lam
        pt = v.conj().T @ phi
        qm = (ut @ lt.conj().T).T
        ql = (ut @ pt.conj().T).T
        for j, kern in ((0, k1[idx]), (1, k2[idx])):
            dm = np.sum(kern * qm)
            dl = np.sum(kern * ql)
            grad[j * n + idx] = (-(2.0 / dc ** 2) * (mc * dm).real
                                 + leakage_weight * 2.0 * dl.real)
        step_dag = steps[idx].conj().T
        lam = step_dag @ lam
        phi = weights[idx] * (wdiag[:, None] * us[idx] @ proj) + step_dag @ phi
    return g, fg, leakage, grad


def objective(traj: TrajectoryResult, target_rot: np.ndarray,
              cfg: ObjectiveConfig, computational_dim: int = 3
              ) -> tuple[float, float, float]:
    """Objective value, fidelity and leakage for a propagator trajectory.

    The leakage integral uses the trapezoidal rule on the trajectory
    grid and counts guard-weighted occupation reached from computational
    initial states only.
    """
    if traj.propagators is None:
        raise SchemaError("objective needs a trajectory with propagators")
    us = traj.propagators
    d = us.shape[1]
    dc = computational_dim
    wdiag = cfg.weights_for_dim(d)
    leak_t = _leakage_density(us, wdiag, dc)
    gate_time = float(traj.times_ns[-1] - traj.times_ns[0])
    leakage = float(np.trapezoid(leak_t, traj.times_ns) / gate_time)
    m = _overlap(target_rot, us[-1], dc)
    fg = abs(m) / dc
    g = (1.0 - fg * fg) + cfg.leakage_weight * leakage
    return g, fg, leakage


def gradient(frame: RotatingFrame, h1: np.ndarray, h2: np.ndarray,
             pulse: ControlPulse, target_rot: np.ndarray,
             cfg: ObjectiveConfig, computational_dim: int = 3,
             self_check: bool = False) -> np.ndarray:
    """Exact objective gradient with respect to every control sample.

    Layout: first all in-phase samples, then all quadrature samples.
    With ``self_check`` a finite-difference probe is run and a relative
    disagreement above 1e-4 raises GradientIntegrityError.
    """
    d = frame.delta.size
    wdiag = cfg.weights_for_dim(d)
    _, _, _, grad = _evaluate(
        frame, h1, h2, pulse.samples, pulse.dt_ns, pulse.gate_time_ns,
        target_rot, wdiag, computational_dim, cfg.leakage_weight, True)
    if self_check:
        err = check_gradient(frame, h1, h2, pulse, target_rot, cfg,
                             computational_dim, n_probes=4)
        if err > 1e-4:
            raise GradientIntegrityError(
                f"finite-difference self-check failed: relative error {err:.3e}")
    return grad


def check_gradient(frame, h1, h2, pulse: ControlPulse, target_rot,
                   cfg: ObjectiveConfig, computational_dim: int = 3,
                   step: float = 1e-6, n_probes: int | None = None,
                   seed: int = 0) -> float:
    """Relative error between analytic and central finite-difference gradient.

    Probes every control sample by default; with ``n_probes`` set, a
    seeded random subset of coordinates is used. Returns the norm-wise
    relative error over the probed coordinates.
    """
    d = frame.delta.size
    wdiag = cfg.weights_for_dim(d)
    dc = computational_dim

    def value(samples):
        g, _, _, _ = _evaluate(frame, h1, h2, samples, pulse.dt_ns,
                               pulse.gate_time_ns, target_rot, wdiag, dc,
                               cfg.leakage_weight, False)
        return g

    n = pulse.n_samples
    analytic = gradient(frame, h1, h2, pulse, target_rot, cfg, dc)
    if n_probes is None:
        coords = np.arange(2 * n)
    else:
        rng = np.random.default_rng(seed)
        coords = rng.choice(2 * n, size=min(n_probes, 2 * n), replace=False)
    fd = np.empty(coords.size)
    for i, coord in enumerate(coords):
        delta = np.zeros(n, dtype=complex)
        if coord < n:
            delta[coord] = step
        else:
            delta[coord - n] = 1j * step
        fd[i] = (value(pulse.samples + delta)
                 - value(pulse.samples - delta)) / (2 * step)
    diff = np.linalg.norm(analytic[coords] - fd)
    scale = max(np.linalg.norm(fd), 1e-300)
    return float(diff / scale)


# --- amplitude constraint ---------------------------------------------------

def _cap_profile(cfg: ObjectiveConfig, n: int) -> np.ndarray:
    """Per-sample amplitude bound: cap times an edge ramp, zero endpoints."""
    caps = np.full(n, cfg.amplitude_cap)
    window = cfg.edge_window_ns if cfg.edge_window_ns is not None else cfg.dt_ns
    if window > 0:
        centers = (np.arange(n) + 0.5) * cfg.dt_ns
        from_edge = np.minimum(centers, n * cfg.dt_ns - centers)
        ramp = np.where(from_edge < window,
                        np.sin(0.5 * np.pi * np.clip(from_edge, 0, window)
                               / window) ** 2, 1.0)
        caps = caps * ramp
    if cfg.boundary_zero:
        caps[0] = 0.0
        caps[-1] = 0.0
    return caps


def constrain(pulse: ControlPulse, cfg: ObjectiveConfig) -> ControlPulse:
    """Project a pulse onto the amplitude constraint set (idempotent).

    Clamps |samples| to the per-sample cap profile (flat cap with a
    cosine edge ramp, zero endpoints under the boundary condition),
    preserving the phase of each sample.
    """
    caps = _cap_profile(cfg, pulse.n_samples)
    mags = np.abs(pulse.samples)
    scale = np.ones(pulse.n_samples)
    # The 1-ulp guard keeps a second application from re-scaling samples
    # that already sit on the cap, so projection is bitwise idempotent.
    over = mags > caps * (1.0 + 1e-12)
    scale[over] = caps[over] / mags[over]
    samples = pulse.samples * scale
    if not np.any(over):
        return pulse
    return ControlPulse(dt_ns=pulse.dt_ns, samples=samples,
                        gate_time_ns=pulse.gate_time_ns, frame=pulse.frame)


# --- parameterization -------------------------------------------------------
#
# Free parameters p map to the envelope through a radial squash
# xi = p / sqrt(1 + |p|^2 / cap^2), keeping |xi| strictly below the
# per-sample cap without any post-hoc projection. With a band limit the
# parameters live on low-frequency sine modes instead of raw samples.

def _sine_basis(n: int, dt: float, f_max_ghz: float) -> np.ndarray:
    n_modes = max(1, min(n - 1, int(np.floor(2.0 * n * dt * f_max_ghz))))
    centers = (np.arange(n) + 0.5) / n
    k = np.arange(1, n_modes + 1)
    return np.sin(np.pi * centers[:, None] * k[None, :])


class _Parameterization:
    def __init__(self, cfg: ObjectiveConfig, n: int):
        self.caps = _cap_profile(cfg, n)
        self.free = np.flatnonzero(self.caps > 0)
        self.n = n
        self.basis = None
        if cfg.f_max_ghz is not None:
            self.basis = _sine_basis(len(self.free), cfg.dt_ns, cfg.f_max_ghz)

    @property
    def n_params(self) -> int:
        cols = self.basis.shape[1] if self.basis is not None else self.free.size
        return 2 * cols

    def samples_and_chain(self, x: np.ndarray):
        half = x.size // 2
        a, b = x[:half], x[half:]
        if self.basis is not None:
            a = self.basis @ a
            b = self.basis @ b
        caps = self.caps[self.free]
        r2 = a * a + b * b
        t = 1.0 / np.sqrt(1.0 + r2 / caps ** 2)
        t3c = t ** 3 / caps ** 2
        samples = np.zeros(self.n, dtype=complex)
        samples[self.free] = (a + 1j * b) * t
        chain = (t - a * a * t3c, -a * b * t3c, t - b * b * t3c)
        return samples, chain

    def chain_gradient(self, grad_u: np.ndarray, chain) -> np.ndarray:
        n = self.n
        du1 = grad_u[:n][self.free]
        du2 = grad_u[n:][self.free]
        daa, dab, dbb = chain
        ga = du1 * daa + du2 * dab
        gb = du1 * dab + du2 * dbb
        if self.basis is not None:
            ga = self.basis.T @ ga
            gb = self.basis.T @ gb
        return np.concatenate([ga, gb])

    def params_from_samples(self, samples: np.ndarray) -> np.ndarray:
        caps = self.caps[self.free]
        xi = samples[self.free]
        mags = np.abs(xi)
        safe = np.minimum(mags, 0.999999 * caps)
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(mags > 0,
                              safe / (mags * np.sqrt(1.0 - (safe / caps) ** 2)),
                              0.0)
        p = xi * factor
        a, b = p.real, p.imag
        if self.basis is not None:
            pinv = np.linalg.pinv(self.basis)
            a = pinv @ a
            b = pinv @ b
        return np.concatenate([a, b])


def _random_start(rng: np.random.Generator, cfg: ObjectiveConfig,
                  n: int) -> np.ndarray:
    """Small smooth random envelope at about 5% of the amplitude cap."""
    centers = (np.arange(n) + 0.5) / n
    envelope = np.zeros(n, dtype=complex)
    for k in range(1, 5):
        coeff = rng.standard_normal() + 1j * rng.standard_normal()
        envelope += coeff * np.sin(np.pi * k * centers)
    peak = np.abs(envelope).max()
    if peak > 0:
        envelope *= 0.05 * cfg.amplitude_cap / peak
    return envelope


def optimize_pulse(model: TransmonModel, frame: RotatingFrame,
                   targ: TargetGate, cfg: ObjectiveConfig,
                   init: np.ndarray | ControlPulse | None = None, *,
                   seed: int = 0, n_starts: int = 10,
                   max_iterations: int = 1200, gtol: float = 1e-13,
                   fg_target: float = 0.999, stop_on_target: bool = True
                   ) -> tuple[ControlPulse, OptimizationReport]:
    """Multi-start quasi-Newton search for a control pulse.

    Starts are small random smooth envelopes (or an explicit initial
    envelope for start 0). Each start runs L-BFGS-B on the squashed
    parameterization, so the returned pulse respects the amplitude cap
    and boundary conditions exactly. Deterministic for a fixed seed.
    Returns the best pulse and a report; ``report.converged`` records
    whether any start reached the fidelity target.
    """
    t0 = time.perf_counter()
    from .model import control_hamiltonians

    h1, h2 = control_hamiltonians(model)
    d = model.dim
    dc = targ.computational_dim
    wdiag = cfg.weights_for_dim(d)
    target_rot = rotate_target(targ, frame, cfg.gate_time_ns)
    n = cfg.n_samples
    dt = cfg.dt_ns
    gate_time = n * dt
    param = _Parameterization(cfg, n)
    rng = np.random.default_rng(seed)

    def fun(x):
        samples, chain = param.samples_and_chain(x)
        g, fg, leak, grad_u = _evaluate(frame, h1, h2, samples, dt, gate_time,
                                        target_rot, wdiag, dc,
                                        cfg.leakage_weight, True)
        state["last"] = (x.copy(), g, fg, leak)
        return g, param.chain_gradient(grad_u, chain)

    def fun_only(x):
        samples, _ = param.samples_and_chain(x)
        return _evaluate(frame, h1, h2, samples, dt, gate_time, target_rot,
                         wdiag, dc, cfg.leakage_weight, False)[:3]

    state = {"last": None}
    results = []
    best = None
    for s in range(n_starts):
        if init is not None and s == 0:
            envelope = (init.samples if isinstance(init, ControlPulse)
                        else np.asarray(init, dtype=complex))
            if envelope.size != n:
                raise SchemaError(
                    f"initial envelope must have {n} samples")
        else:
            envelope = _random_start(rng, cfg, n)
        x0 = param.params_from_samples(envelope)

        trace = []

        def record(xk):
            cached = state["last"]
            if cached is not None and np.array_equal(cached[0], xk):
                _, g, fg, leak = cached
            else:
                g, fg, leak = fun_only(xk)
            trace.append({"iteration": len(trace), "objective": g,
                          "fidelity": fg, "leakage": leak})

        res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                       callback=record,
                       options={"maxiter": max_iterations, "ftol": 1e-16,
                                "gtol": gtol, "maxcor": 30,
                                "maxfun": 10 * max_iterations})
        g, fg, leak = fun_only(res.x)
        results.append({"start": s, "objective": g, "fidelity": fg,
                        "leakage": leak, "n_iterations": int(res.nit),
                        "stop_reason": str(res.message)})
        if best is None or g < best[0]:
            best = (g, fg, leak, res.x.copy(), s, trace, envelope.copy())
        if stop_on_target and fg >= fg_target:
            break

    g, fg, leak, x_best, best_start, trace, start_env = best
    samples, _ = param.samples_and_chain(x_best)
    pulse = ControlPulse(dt_ns=dt, samples=samples, gate_time_ns=gate_time,
                         frame="rotating")
    pulse = constrain(pulse, cfg)  # no-op by construction; keeps the contract

    # Re-evaluate on the final pulse so the report matches an independent
    # re-propagation exactly. The finite-difference spot check runs at the
    # start envelope, where the gradient is far from zero and the relative
    # error is well conditioned.
    g, fg, leak, _ = _evaluate(frame, h1, h2, pulse.samples, dt, gate_time,
                               target_rot, wdiag, dc, cfg.leakage_weight,
                               False)
    start_pulse = ControlPulse(dt_ns=dt, samples=start_env,
                               gate_time_ns=gate_time, frame="rotating")
    grad_err = check_gradient(frame, h1, h2, start_pulse, target_rot, cfg, dc,
                              n_probes=6, seed=seed)

    report = OptimizationReport(
        objective=g, fidelity=fg, leakage=leak,
        converged=bool(fg >= fg_target), fg_target=fg_target,
        best_start=best_start, n_starts_run=len(results),
        iterations=trace, per_start=results, gradient_check=grad_err,
        wall_time_s=time.perf_counter() - t0)
    return pulse, report
