"""Qudit device model: measured spectrum, charge-basis fit, rotating frame.

All internal angular frequencies are in rad/ns and times in ns; unit
conversion from GHz and microseconds happens only at the configuration
boundary (file loaders and dataclass constructors taking *_ghz / *_us
fields). This keeps matrix-exponent arguments of order one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import (
    ChargeFitError,
    InvalidSpecError,
    SchemaError,
    TruncationError,
)

TWO_PI = 2.0 * np.pi

DEVICE_SCHEMA_VERSION = 1
MODEL_SCHEMA_VERSION = 1

_T2_TAGS = ("ramsey", "echo")


@dataclass(frozen=True)
class DeviceSpec:
    """Measured device parameters for a d-level transmon.

    Parameters
    ----------
    transition_freqs_ghz : sequence of float
        Adjacent-level transition frequencies f(k,k+1), length d-1.
    t1_us : sequence of float
        Relaxation times per transition, length d-1.
    t2_us : sequence of float
        Coherence times per transition, length d-1 (as tabulated).
    t2_tags : sequence of str
        One of ``ramsey``/``echo`` per t2 entry.
    t2_sim_us : sequence of float, optional
        Dephasing times to use in open-system simulation. Defaults to
        ``t2_us``. For higher transitions a short-time Ramsey estimate is
        usually more faithful than the echo value.
    guard_index : int
        Index of the leakage-monitor level (default: highest level).
    readout_freq_ghz, chi_qc_mhz : float, optional
        Readout cavity parameters; stored for bookkeeping only and never
        enter the dynamics.
    """

    transition_freqs_ghz: tuple[float, ...]
    t1_us: tuple[float, ...]
    t2_us: tuple[float, ...]
    t2_tags: tuple[str, ...]
    t2_sim_us: tuple[float, ...] | None = None
    guard_index: int | None = None
    readout_freq_ghz: float | None = None
    chi_qc_mhz: float | None = None

    def __post_init__(self):
        freqs = tuple(float(f) for f in self.transition_freqs_ghz)
        t1 = tuple(float(t) for t in self.t1_us)
        t2 = tuple(float(t) for t in self.t2_us)
        tags = tuple(str(t) for t in self.t2_tags)
        t2s = self.t2_sim_us
        t2s = t2 if t2s is None else tuple(float(t) for t in t2s)
        object.__setattr__(self, "transition_freqs_ghz", freqs)
        object.__setattr__(self, "t1_us", t1)
        object.__setattr__(self, "t2_us", t2)
        object.__setattr__(self, "t2_tags", tags)
        object.__setattr__(self, "t2_sim_us", t2s)
        if self.guard_index is None:
            object.__setattr__(self, "guard_index", self.dim - 1)
        self.validate()

    @property
    def dim(self) -> int:
        return len(self.transition_freqs_ghz) + 1

    def validate(self):
        d = self.dim
        if d < 2:
            raise InvalidSpecError("need at least one transition (dim >= 2)")
        for name in ("t1_us", "t2_us", "t2_tags", "t2_sim_us"):
            if len(getattr(self, name)) != d - 1:
                raise InvalidSpecError(
                    f"{name} must have {d - 1} entries, got "
                    f"{len(getattr(self, name))}"
                )
        if any(f <= 0 for f in self.transition_freqs_ghz):
            raise InvalidSpecError("transition frequencies must be positive")
        if any(t <= 0 for t in self.t1_us) or any(t <= 0 for t in self.t2_us):
            raise InvalidSpecError("coherence times must be positive")
        if any(t <= 0 for t in self.t2_sim_us):
            raise InvalidSpecError("t2_sim_us entries must be positive")
        for tag in self.t2_tags:
            if tag not in _T2_TAGS:
                raise InvalidSpecError(f"unknown t2 tag {tag!r}")
        if not 0 <= self.guard_index < d:
            raise InvalidSpecError("guard_index out of range")


@dataclass(frozen=True)
class TransmonModel:
    """Eigenfrequencies and ladder operator data in the eigenbasis.

    ``omega`` holds the d eigenfrequencies in rad/ns with ``omega[0] = 0``.
    ``lower`` is a strictly lower-triangular complex matrix normalized so
    that ``lower[1, 0] == 1``; its conjugate transpose is the lowering
    operator (the entry at row k+1, column k couples levels k and k+1).
    """

    dim: int
    omega: np.ndarray
    lower: np.ndarray
    source: str = "spectrum"
    ej_ghz: float | None = None
    ec_ghz: float | None = None
    n_g: float | None = None
    n_cut: int | None = None
    device: DeviceSpec | None = None

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        lower = np.asarray(self.lower, dtype=complex)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "lower", lower)
        if omega.shape != (self.dim,):
            raise InvalidSpecError("omega must have length dim")
        if lower.shape != (self.dim, self.dim):
            raise InvalidSpecError("lower must be dim x dim")
        if abs(omega[0]) > 1e-12:
            raise InvalidSpecError("ground-state frequency must be zero")
        if np.any(np.diff(omega) <= 0):
            raise InvalidSpecError("eigenfrequencies must increase strictly")
        if np.any(np.abs(np.triu(lower)) > 1e-12):
            raise InvalidSpecError("lower must be strictly lower-triangular")
        if abs(lower[1, 0] - 1.0) > 1e-12:
            raise InvalidSpecError("normalization requires lower[1,0] == 1")

    @property
    def transition_freqs_ghz(self) -> np.ndarray:
        return np.diff(self.omega) / TWO_PI


@dataclass(frozen=True)
class RotatingFrame:
    """Drive frequency and the per-level detunings it induces."""

    omega_d: float
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float))


def model_from_spectrum(spec: DeviceSpec) -> TransmonModel:
    """Build a ladder-approximation model from measured transitions.

    Eigenfrequencies are cumulative sums of the transition frequencies
    (rad/ns); the coupling matrix uses harmonic-ladder elements
    sqrt(k+1) on the adjacent subdiagonal.
    """
    d = spec.dim
    omega = np.zeros(d)
    omega[1:] = TWO_PI * np.cumsum(spec.transition_freqs_ghz)
    if np.any(np.diff(omega) <= 0):
        raise InvalidSpecError("cumulative level frequencies must increase")
    lower = np.zeros((d, d), dtype=complex)
    for k in range(d - 1):
        lower[k + 1, k] = np.sqrt(k + 1)
    return TransmonModel(dim=d, omega=omega, lower=lower, source="spectrum",
                         device=spec)


def _charge_hamiltonian(ej_ghz: float, ec_ghz: float, n_g: float,
                        n_cut: int) -> np.ndarray:
    """Cooper-pair-box Hamiltonian on charge states -n_cut..n_cut (GHz)."""
    n = np.arange(-n_cut, n_cut + 1, dtype=float)
    h = np.diag(4.0 * ec_ghz * (n - n_g) ** 2)
    off = -0.5 * ej_ghz * np.ones(2 * n_cut)
    h += np.diag(off, 1) + np.diag(off, -1)
    return h


def _charge_levels(ej_ghz, ec_ghz, n_g, n_cut, n_levels):
    """Lowest eigenvalues (GHz, shifted to E0=0) and eigenvectors."""
    evals, evecs = np.linalg.eigh(
        _charge_hamiltonian(ej_ghz, ec_ghz, n_g, n_cut))
    return evals[:n_levels] - evals[0], evecs[:, :n_levels]


def fit_charge_model(spec: DeviceSpec, n_cut: int = 20,
                     n_g: float = 0.0) -> TransmonModel:
    """Fit (EJ, EC) to the two lowest transitions and build the model.

    The drive operator keeps every charge matrix element <j|n|k> with
    j < k (non-adjacent ones are small but nonzero), rescaled so the
    0-1 element is exactly one.

    Raises
    ------
    ChargeFitError
        If the fitted transitions miss the measured values by more than
        1 kHz.
    TruncationError
        If enlarging the charge basis by two states still shifts the
        model eigenvalues by more than 1 Hz.
    """
    if n_cut < 10:
        raise InvalidSpecError("n_cut must be at least 10")
    if spec.dim < 3:
        raise InvalidSpecError("charge fit needs at least two transitions")
    f01, f12 = spec.transition_freqs_ghz[:2]
    d = spec.dim

    def residuals(params):
        ej, ec = params
        levels, _ = _charge_levels(ej, ec, n_g, n_cut, 3)
        return [levels[1] - f01, (levels[2] - levels[1]) - f12]

    # Transmon-limit seed: f01 ~ sqrt(8 EJ EC) - EC, anharmonicity ~ -EC.
    ec0 = max(f01 - f12, 1e-3)
    ej0 = (f01 + ec0) ** 2 / (8.0 * ec0)
    result = least_squares(residuals, [ej0, ec0], xtol=1e-14, ftol=1e-14,
                           gtol=1e-14, max_nfev=200)
    resid = np.asarray(residuals(result.x))
    if np.any(np.abs(resid) > 1e-6):  # 1 kHz in GHz units
        raise ChargeFitError(
            f"charge fit residual {np.abs(resid).max():.3e} GHz exceeds 1 kHz",
            residual_ghz=resid.tolist(),
        )
    ej, ec = result.x

    levels, vecs = _charge_levels(ej, ec, n_g, n_cut, d)
    levels_big, _ = _charge_levels(ej, ec, n_g, n_cut + 2, d)
    if np.any(np.abs(levels - levels_big) > 1e-9):  # 1 Hz in GHz units
        raise TruncationError(
            f"eigenvalues shift {np.abs(levels - levels_big).max():.3e} GHz "
            f"when n_cut -> n_cut + 2; increase n_cut"
        )

    # Gauge-fix eigenvector signs so adjacent charge elements are positive.
    n_op = np.arange(-n_cut, n_cut + 1, dtype=float)
    for k in range(d - 1):
        elem = np.sum(vecs[:, k].conj() * n_op * vecs[:, k + 1])
        if elem.real < 0:
            vecs[:, k + 1] = -vecs[:, k + 1]

    charge_elems = vecs.conj().T @ (n_op[:, None] * vecs)
    lower = np.zeros((d, d), dtype=complex)
    for j in range(d):
        for k in range(j + 1, d):
            lower[k, j] = np.conj(charge_elems[j, k])
    lower = lower / abs(lower[1, 0])

    omega = TWO_PI * levels
    return TransmonModel(dim=d, omega=omega, lower=lower, source="charge_fit",
                         ej_ghz=float(ej), ec_ghz=float(ec), n_g=float(n_g),
                         n_cut=int(n_cut), device=spec)


def rotating_frame(model: TransmonModel, omega_d: float) -> RotatingFrame:
    """Detunings delta[k] = omega[k] - k*omega_d for drive frequency omega_d."""
    if omega_d <= 0:
        raise InvalidSpecError("drive frequency must be positive")
    k = np.arange(model.dim)
    return RotatingFrame(omega_d=float(omega_d),
                         delta=model.omega - k * omega_d)


def control_hamiltonians(model: TransmonModel) -> tuple[np.ndarray, np.ndarray]:
    """In-phase and quadrature drive Hamiltonians (both Hermitian).

    With c the lowering operator (= model.lower conjugate-transposed),
    H1 = c + c^dag and H2 = -i (c - c^dag).
    """
    c = model.lower.conj().T
    h1 = c + c.conj().T
    h2 = -1j * (c - c.conj().T)
    return h1, h2


# --- device / model files ---------------------------------------------------

_DEVICE_REQUIRED = ("transition_freqs_ghz", "t1_us", "t2_us", "t2_tags")


def device_spec_to_dict(spec: DeviceSpec) -> dict:
    out = {
        "schema_version": DEVICE_SCHEMA_VERSION,
        "dim": spec.dim,
        "guard_index": spec.guard_index,
        "transition_freqs_ghz": list(spec.transition_freqs_ghz),
        "t1_us": list(spec.t1_us),
        "t2_us": list(spec.t2_us),
        "t2_tags": list(spec.t2_tags),
        "t2_sim_us": list(spec.t2_sim_us),
    }
    if spec.readout_freq_ghz is not None:
        out["readout_freq_ghz"] = spec.readout_freq_ghz
    if spec.chi_qc_mhz is not None:
        out["chi_qc_mhz"] = spec.chi_qc_mhz
    return out


def device_spec_from_dict(data: dict) -> DeviceSpec:
    if not isinstance(data, dict):
        raise SchemaError("device spec must be a mapping")
    for key in _DEVICE_REQUIRED:
        if key not in data:
            raise SchemaError(f"device spec missing required field {key!r}")
    try:
        return DeviceSpec(
            transition_freqs_ghz=tuple(data["transition_freqs_ghz"]),
            t1_us=tuple(data["t1_us"]),
            t2_us=tuple(data["t2_us"]),
            t2_tags=tuple(data["t2_tags"]),
            t2_sim_us=(tuple(data["t2_sim_us"])
                       if data.get("t2_sim_us") is not None else None),
            guard_index=data.get("guard_index"),
            readout_freq_ghz=data.get("readout_freq_ghz"),
            chi_qc_mhz=data.get("chi_qc_mhz"),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"malformed device spec: {exc}") from exc


def save_device_spec(spec: DeviceSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(device_spec_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_device_spec(path) -> DeviceSpec:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"device spec is not valid JSON: {exc}") from exc
    return device_spec_from_dict(data)


def model_to_dict(model: TransmonModel) -> dict:
    out = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "dim": model.dim,
        "source": model.source,
        "omega_rad_per_ns": model.omega.tolist(),
        "lower_re": model.lower.real.tolist(),
        "lower_im": model.lower.imag.tolist(),
    }
    if model.source == "charge_fit":
        out["charge_fit"] = {
            "ej_ghz": model.ej_ghz,
            "ec_ghz": model.ec_ghz,
            "n_g": model.n_g,
            "n_cut": model.n_cut,
        }
    if model.device is not None:
        out["device"] = device_spec_to_dict(model.device)
    return out


def model_from_dict(data: dict) -> TransmonModel:
    for key in ("dim", "source", "omega_rad_per_ns", "lower_re", "lower_im"):
        if key not in data:
            raise SchemaError(f"model file missing required field {key!r}")
    lower = np.asarray(data["lower_re"]) + 1j * np.asarray(data["lower_im"])
    fit = data.get("charge_fit") or {}
    device = (device_spec_from_dict(data["device"])
              if "device" in data else None)
    return TransmonModel(
        dim=int(data["dim"]),
        omega=np.asarray(data["omega_rad_per_ns"], dtype=float),
        lower=lower,
        source=str(data["source"]),
        ej_ghz=fit.get("ej_ghz"),
        ec_ghz=fit.get("ec_ghz"),
        n_g=fit.get("n_g"),
        n_cut=fit.get("n_cut"),
        device=device,
    )


def save_model(model: TransmonModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> TransmonModel:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(data)
