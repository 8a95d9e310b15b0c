"""Process-matrix tomography for the three-level computational space.

A channel is expanded over a fixed nine-operator basis (subspace Paulis
and the two three-cycle products); the expansion coefficients form the
process matrix chi, a positive superoperator. The fitter estimates chi
from state populations recorded under repeated gate application, with
positivity built into the parameterization and trace preservation as a
weighted penalty.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import least_squares

from .errors import NumericIntegrityError, SchemaError

BASIS_NAMES = ("I", "Z01", "Z12", "X01", "X12", "Y01", "Y12",
               "X01X12", "X12X01")


def _subspace_pauli(kind: str, a: int, b: int, dim: int = 3) -> np.ndarray:
    m = np.eye(dim, dtype=complex)
    if kind == "X":
        m[a, a] = m[b, b] = 0
        m[a, b] = m[b, a] = 1
    elif kind == "Y":
        m[a, a] = m[b, b] = 0
        m[a, b] = -1j
        m[b, a] = 1j
    elif kind == "Z":
        m[b, b] = -1
    return m


@dataclass(frozen=True)
class ProcessBasis:
    """The ordered nine-operator basis and its Gram matrix."""

    matrices: np.ndarray
    names: tuple[str, ...]
    gram: np.ndarray

    @property
    def size(self) -> int:
        return self.matrices.shape[0]

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]


@lru_cache(maxsize=1)
def process_basis() -> ProcessBasis:
    """Basis {I, Z01, Z12, X01, X12, Y01, Y12, X01*X12, X12*X01} for d=3."""
    x01 = _subspace_pauli("X", 0, 1)
    x12 = _subspace_pauli("X", 1, 2)
    mats = np.stack([
        np.eye(3, dtype=complex),
        _subspace_pauli("Z", 0, 1),
        _subspace_pauli("Z", 1, 2),
        x01,
        x12,
        _subspace_pauli("Y", 0, 1),
        _subspace_pauli("Y", 1, 2),
        x01 @ x12,
        x12 @ x01,
    ])
    gram = np.einsum("mba,nba->mn", mats.conj(), mats)
    return ProcessBasis(matrices=mats, names=BASIS_NAMES, gram=gram)


@lru_cache(maxsize=1)
def _kron_table() -> np.ndarray:
    """K[m, n] = kron(B_m, conj(B_n)), the row-major transfer blocks."""
    mats = process_basis().matrices
    table = np.empty((9, 9, 9, 9), dtype=complex)
    for m in range(9):
        for n in range(9):
            table[m, n] = np.kron(mats[m], mats[n].conj())
    return table


@lru_cache(maxsize=1)
def _kron_table_flat() -> np.ndarray:
    return np.ascontiguousarray(_kron_table().reshape(81, 81))


@dataclass(frozen=True)
class ProcessMatrix:
    """Hermitian positive process matrix over the fixed basis order."""

    chi: np.ndarray

    def __post_init__(self):
        chi = np.asarray(self.chi, dtype=complex)
        object.__setattr__(self, "chi", chi)
        if chi.shape != (9, 9):
            raise SchemaError("chi must be 9x9")
        herm = np.abs(chi - chi.conj().T).max()
        if herm > 1e-10:
            raise NumericIntegrityError(
                f"chi hermiticity violated by {herm:.3e}")
        if np.linalg.eigvalsh(0.5 * (chi + chi.conj().T)).min() < -1e-8:
            raise NumericIntegrityError("chi is not positive semidefinite")

    def tp_matrix(self) -> np.ndarray:
        """sum_mn chi_mn B_n^dag B_m; equals the identity for a TP map."""
        mats = process_basis().matrices
        return np.einsum("mn,nba,mbc->ac", self.chi, mats.conj(), mats)

    def tp_violation(self) -> float:
        return float(np.abs(self.tp_matrix() - np.eye(3)).max())

    def rank(self, tol: float = 1e-9) -> int:
        return int(np.sum(np.linalg.eigvalsh(self.chi) > tol))

    def hinton_data(self) -> dict:
        """Magnitude and phase grids for Hinton-style plotting."""
        return {"magnitude": np.abs(self.chi).tolist(),
                "phase_rad": np.angle(self.chi).tolist()}


def apply_process(chi: ProcessMatrix | np.ndarray,
                  rho: np.ndarray) -> np.ndarray:
    """E(rho) = sum_mn chi_mn B_m rho B_n^dag."""
    c = chi.chi if isinstance(chi, ProcessMatrix) else np.asarray(chi)
    mats = process_basis().matrices
    return np.einsum("mn,mab,bc,ndc->ad", c, mats, np.asarray(rho, complex),
                     mats.conj())


def transfer_from_chi(chi: ProcessMatrix | np.ndarray) -> np.ndarray:
    """Row-major-vectorized channel matrix: vec(E(rho)) = T vec(rho)."""
    c = chi.chi if isinstance(chi, ProcessMatrix) else np.asarray(chi)
    return (c.reshape(81) @ _kron_table_flat()).reshape(9, 9)


def chi_from_transfer(transfer: np.ndarray) -> np.ndarray:
    """Invert the (full-rank) linear map chi -> transfer matrix.

    Returns the raw 9x9 coefficient matrix; it is Hermitian PSD exactly
    when the channel is completely positive.
    """
    table = _kron_table().reshape(81, 81)
    coeffs = np.linalg.solve(table.T, np.asarray(transfer, complex).reshape(81))
    return coeffs.reshape(9, 9)


def chi_from_unitary(u: np.ndarray) -> ProcessMatrix:
    """Rank-one process matrix of the conjugation channel rho -> U rho U^dag.

    Expands U over the basis through the Gram matrix and forms the
    outer product of the coefficient vector.
    """
    u = np.asarray(u, dtype=complex)
    basis = process_basis()
    b = np.einsum("mba,ba->m", basis.matrices.conj(), u)
    v = np.linalg.solve(basis.gram, b)
    recon = np.einsum("m,mab->ab", v, basis.matrices)
    if np.abs(recon - u).max() > 1e-10:
        raise NumericIntegrityError("basis expansion of the unitary failed")
    return ProcessMatrix(chi=np.outer(v, v.conj()))


def basis_state_density(level: int, dim: int = 3) -> np.ndarray:
    rho = np.zeros((dim, dim), dtype=complex)
    rho[level, level] = 1.0
    return rho


def simulate_process_data(chi: ProcessMatrix | np.ndarray, n_reps: int,
                          initial_levels: tuple[int, ...] = (0, 1, 2)
                          ) -> np.ndarray:
    """Populations under sequential application of the channel.

    Returns an array of shape (n_states, n_reps + 1, 3); row zero holds
    the initial populations.
    """
    if n_reps < 1:
        raise SchemaError("n_reps must be at least 1")
    transfer = transfer_from_chi(chi)
    diag_idx = np.array([0, 4, 8])
    out = np.empty((len(initial_levels), n_reps + 1, 3))
    for i, level in enumerate(initial_levels):
        vec = basis_state_density(level).reshape(9)
        out[i, 0] = vec[diag_idx].real
        for k in range(n_reps):
            vec = transfer @ vec
            out[i, k + 1] = vec[diag_idx].real
    return out


# --- fitting ------------------------------------------------------------------

_TRIL_ROWS, _TRIL_COLS = np.tril_indices(9, k=-1)


def _factor_from_params(x: np.ndarray) -> np.ndarray:
    a = np.zeros((9, 9), dtype=complex)
    a[np.arange(9), np.arange(9)] = x[:9]
    a[_TRIL_ROWS, _TRIL_COLS] = x[9:45] + 1j * x[45:81]
    return a


def _params_from_factor(a: np.ndarray) -> np.ndarray:
    x = np.empty(81)
    x[:9] = np.real(np.diag(a))
    x[9:45] = a[_TRIL_ROWS, _TRIL_COLS].real
    x[45:81] = a[_TRIL_ROWS, _TRIL_COLS].imag
    return x


def _chi_from_params(x: np.ndarray) -> np.ndarray:
    a = _factor_from_params(x)
    raw = a @ a.conj().T
    scale = np.einsum("mn,nm->", process_basis().gram, raw).real / 3.0
    if scale < 1e-12:
        scale = 1.0
    return raw / scale


def _tp_residual_entries(chi: np.ndarray) -> np.ndarray:
    mats = process_basis().matrices
    tp = np.einsum("mn,nba,mbc->ac", chi, mats.conj(), mats) - np.eye(3)
    iu = np.triu_indices(3)
    return np.concatenate([tp[iu].real, tp[np.triu_indices(3, k=1)].imag])


def _population_residuals(chi: np.ndarray, data: np.ndarray,
                          n_reps: int, initial_levels) -> np.ndarray:
    transfer = transfer_from_chi(chi)
    vecs = np.stack([basis_state_density(k).reshape(9)
                     for k in initial_levels])
    diag_idx = np.array([0, 4, 8])
    model = np.empty((len(initial_levels), n_reps, 3))
    for k in range(n_reps):
        vecs = vecs @ transfer.T
        model[:, k, :] = vecs[:, diag_idx].real
    return (model - data[:, 1:n_reps + 1, :3]).ravel()


def fit_chi(trajectories: np.ndarray, n_reps: int,
            target: np.ndarray | None = None, *,
            initial_levels: tuple[int, ...] = (0, 1, 2),
            tp_weight: float = 1000.0, seed: int = 0,
            init_noise: float = 1e-3, anchor_weight: float = 1e-3,
            max_nfev: int = 60000) -> tuple[ProcessMatrix, dict]:
    """Least-squares estimate of chi from repeated-gate populations.

    ``trajectories`` has shape (n_states, >= n_reps + 1, >= 3): row k of
    state i holds the populations after k gate applications starting
    from ``initial_levels[i]`` (a guard column, if present, is ignored
    by the three-level model). chi is parameterized as a scaled
    Cholesky-like factor product, so it is positive by construction;
    trace preservation enters as a weighted penalty on top of an exact
    trace normalization.

    The fit starts from the process matrix of ``target`` (identity if
    omitted) plus a small seeded perturbation. Population data from a
    few basis states cannot constrain every direction of chi; a weak
    ridge toward the starting point (``anchor_weight``) pins those
    directions at the near-ideal initialization without measurably
    biasing the identified ones.

    Returns the fitted matrix and diagnostics, including the condition
    number of the residual Jacobian with respect to Hermitian chi
    parameters; a huge value flags directions the repeated-application
    data cannot constrain.
    """
    data = np.asarray(trajectories, dtype=float)
    if data.ndim != 3 or data.shape[0] != len(initial_levels):
        raise SchemaError(
            "trajectories must be (n_states, n_reps+1, n_levels)")
    if data.shape[1] < n_reps + 1:
        raise SchemaError("trajectories cover fewer repetitions than n_reps")
    if n_reps < 2:
        raise SchemaError("need at least two repetitions to constrain a fit")

    if target is None:
        target = np.eye(3, dtype=complex)
    chi0 = chi_from_unitary(target).chi
    evals, evecs = np.linalg.eigh(chi0)
    a0 = evecs @ np.diag(np.sqrt(np.clip(evals, 0, None)))
    # Rotate so the factor is effectively triangular-ish; the gauge of A
    # does not matter, only AA^dag does.
    x_anchor = _params_from_factor(a0 @ np.linalg.qr(a0.conj().T)[0])
    rng = np.random.default_rng(seed)
    x0 = x_anchor + init_noise * rng.standard_normal(81)

    def residuals(x):
        chi = _chi_from_params(x)
        return np.concatenate([
            _population_residuals(chi, data, n_reps, initial_levels),
            tp_weight * _tp_residual_entries(chi),
            anchor_weight * (x - x_anchor),
        ])

    result = least_squares(residuals, x0, method="lm", xtol=1e-14,
                           ftol=1e-14, gtol=1e-14, max_nfev=max_nfev)
    chi_fit = _chi_from_params(result.x)
    chi_fit = 0.5 * (chi_fit + chi_fit.conj().T)
    process = ProcessMatrix(chi=chi_fit)

    pop_resid = _population_residuals(chi_fit, data, n_reps, initial_levels)
    diagnostics = {
        "residual_norm": float(np.linalg.norm(pop_resid)),
        "rms_residual": float(np.sqrt(np.mean(pop_resid ** 2))),
        "tp_violation": process.tp_violation(),
        "converged": bool(result.status > 0),
        "n_evaluations": int(result.nfev),
        "message": str(result.message),
    }
    cond = _jacobian_condition(chi_fit, data, n_reps, initial_levels,
                               tp_weight)
    diagnostics["jacobian_condition"] = cond
    diagnostics["identifiability_warning"] = bool(not np.isfinite(cond)
                                                  or cond > 1e8)
    return process, diagnostics


def _hermitian_from_params(h: np.ndarray) -> np.ndarray:
    m = np.zeros((9, 9), dtype=complex)
    m[np.arange(9), np.arange(9)] = h[:9]
    re = h[9:45]
    im = h[45:81]
    m[_TRIL_ROWS, _TRIL_COLS] = re + 1j * im
    m[_TRIL_COLS, _TRIL_ROWS] = re - 1j * im
    return m


def _jacobian_condition(chi: np.ndarray, data, n_reps, initial_levels,
                        tp_weight, step: float = 1e-6) -> float:
    """Condition number of the residual Jacobian in Hermitian chi space."""

    def res(h):
        c = chi + _hermitian_from_params(h)
        return np.concatenate([
            _population_residuals(c, data, n_reps, initial_levels),
            tp_weight * _tp_residual_entries(c),
        ])

    base = res(np.zeros(81))
    jac = np.empty((base.size, 81))
    for i in range(81):
        h = np.zeros(81)
        h[i] = step
        jac[:, i] = (res(h) - res(-h)) / (2 * step)
    sing = np.linalg.svd(jac, compute_uv=False)
    if sing[-1] < 1e-300:
        return float("inf")
    return float(sing[0] / sing[-1])


# --- fidelities ---------------------------------------------------------------

def _real_with_check(value: complex, what: str, tol: float = 1e-9) -> float:
    if abs(value.imag) > tol:
        raise NumericIntegrityError(
            f"{what} has imaginary residual {value.imag:.3e}")
    return float(value.real)


def entanglement_fidelity(chi: ProcessMatrix | np.ndarray, u: np.ndarray,
                          rho: np.ndarray) -> float:
    """sum_mn chi_mn Tr(U^dag B_m rho) Tr(rho B_n^dag U) for input rho."""
    c = chi.chi if isinstance(chi, ProcessMatrix) else np.asarray(chi)
    mats = process_basis().matrices
    u = np.asarray(u, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    amps = np.einsum("ba,mbc,ca->m", u.conj(), mats, rho)
    value = complex(amps @ c @ amps.conj())
    return _real_with_check(value, "entanglement fidelity")


def gate_fidelity(chi: ProcessMatrix | np.ndarray, u: np.ndarray,
                  psi: np.ndarray) -> float:
    """<psi| U^dag E(|psi><psi|) U |psi> for a pure input state."""
    psi = np.asarray(psi, dtype=complex)
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > 1e-9:
        raise SchemaError("input state must be normalized")
    rho = np.outer(psi, psi.conj())
    phi = np.asarray(u, complex) @ psi
    value = complex(phi.conj() @ apply_process(chi, rho) @ phi)
    return _real_with_check(value, "gate fidelity")


def haar_random_states(dim: int, n: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed pure states, one per row."""
    z = rng.standard_normal((n, dim)) + 1j * rng.standard_normal((n, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


@dataclass(frozen=True)
class FidelityReport:
    """Average gate and entanglement fidelities for a channel vs a target."""

    gate_fidelity_mean: float
    gate_fidelity_stderr: float
    entanglement_fidelity_avg: float
    entanglement_per_state: tuple[float, ...]
    n_samples: int
    seed: int
    method: str = "haar-monte-carlo"

    def as_dict(self) -> dict:
        return {
            "avg_gate_fidelity": self.gate_fidelity_mean,
            "gate_fidelity_stderr": self.gate_fidelity_stderr,
            "avg_entanglement_fidelity": self.entanglement_fidelity_avg,
            "entanglement_per_state": {
                str(i): v for i, v in enumerate(self.entanglement_per_state)},
            "n_samples": self.n_samples,
            "seed": self.seed,
            "method": self.method,
        }


def average_fidelities(chi: ProcessMatrix | np.ndarray, u: np.ndarray,
                       n_samples: int = 10000, seed: int = 0
                       ) -> FidelityReport:
    """Seeded Haar-average gate fidelity plus entanglement fidelities.

    The average entanglement fidelity is evaluated at the maximally
    mixed input; per-basis-state values are reported alongside. For any
    channel the Haar-averaged gate fidelity and the maximally-mixed
    entanglement fidelity obey F_avg = (d F_e + 1) / (d + 1).
    """
    c = chi.chi if isinstance(chi, ProcessMatrix) else np.asarray(chi)
    mats = process_basis().matrices
    u = np.asarray(u, dtype=complex)
    rng = np.random.default_rng(seed)
    states = haar_random_states(3, n_samples, rng)

    rhos = np.einsum("ka,kb->kab", states, states.conj())
    outs = np.einsum("mn,mab,kbc,ndc->kad", c, mats, rhos, mats.conj())
    phis = states @ u.T
    values = np.einsum("ka,kab,kb->k", phis.conj(), outs, phis)
    if np.abs(values.imag).max() > 1e-9:
        raise NumericIntegrityError("gate fidelity samples are not real")
    samples = values.real
    mean = float(samples.mean())
    stderr = float(samples.std(ddof=1) / np.sqrt(n_samples))

    per_state = tuple(
        entanglement_fidelity(c, u, basis_state_density(k)) for k in range(3))
    f_e = entanglement_fidelity(c, u, np.eye(3, dtype=complex) / 3.0)
    return FidelityReport(
        gate_fidelity_mean=mean, gate_fidelity_stderr=stderr,
        entanglement_fidelity_avg=f_e, entanglement_per_state=per_state,
        n_samples=n_samples, seed=seed)


def process_fidelity(chi_a: ProcessMatrix | np.ndarray,
                     chi_b: ProcessMatrix | np.ndarray) -> float:
    """Normalized overlap Tr(a b) / sqrt(Tr(a^2) Tr(b^2)); one iff
    the two process matrices are proportional."""
    a = chi_a.chi if isinstance(chi_a, ProcessMatrix) else np.asarray(chi_a)
    b = chi_b.chi if isinstance(chi_b, ProcessMatrix) else np.asarray(chi_b)
    num = np.trace(a @ b).real
    den = np.sqrt(np.trace(a @ a).real * np.trace(b @ b).real)
    return float(num / den)


# --- chi files ----------------------------------------------------------------

CHI_SCHEMA_VERSION = 1


def chi_to_dict(process: ProcessMatrix) -> dict:
    return {
        "schema_version": CHI_SCHEMA_VERSION,
        "basis": list(BASIS_NAMES),
        "chi_re": process.chi.real.tolist(),
        "chi_im": process.chi.imag.tolist(),
        "hinton": process.hinton_data(),
    }


def chi_from_dict(data: dict) -> ProcessMatrix:
    for key in ("basis", "chi_re", "chi_im"):
        if key not in data:
            raise SchemaError(f"chi file missing required field {key!r}")
    if tuple(data["basis"]) != BASIS_NAMES:
        raise SchemaError("chi file uses an unknown basis ordering")
    chi = np.asarray(data["chi_re"]) + 1j * np.asarray(data["chi_im"])
    return ProcessMatrix(chi=chi)
