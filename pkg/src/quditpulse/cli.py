"""Batch command-line front end for the pulse-design pipeline.

Subcommands cover model fitting, pulse optimization, closed- and
open-system simulation, waveform synthesis, wavelet analysis, process
tomography, and report consolidation. Every command is deterministic
under a fixed seed and writes a manifest recording input and output
digests.

Exit codes: 0 success, 2 schema/usage error, 3 non-convergence,
4 numeric-integrity failure (including digest mismatches).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import (
    NonConvergenceError,
    NumericIntegrityError,
    QuditPulseError,
    SchemaError,
    TruncationError,
)
from .model import (
    control_hamiltonians,
    fit_charge_model,
    load_device_spec,
    load_model,
    model_from_spectrum,
    rotating_frame,
    save_model,
)
from .optimize import (
    ObjectiveConfig,
    TargetGate,
    free_evolution_gate,
    optimize_pulse,
    swap_gate,
)
from .propagate import (
    collapse_operators,
    export_repeated,
    export_trajectory,
    import_repeated,
    lindblad_evolve,
    load_pulse,
    propagate_unitary,
    repeated_gate_trajectory,
    save_pulse,
)
from .tomography import (
    average_fidelities,
    chi_to_dict,
    fit_chi,
)
from .waveform import export_waveform, import_waveform, morlet_cwt, synthesize_lab

_SCHEMA_ERRORS = (SchemaError, QuditPulseError)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(command, inputs, outputs, seed=None, manifest_path=None):
    if manifest_path is None:
        manifest_path = outputs[0] + ".manifest.json"
    payload = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs},
        "outputs": {os.path.basename(p): _sha256(p) for p in outputs},
    }
    _write_json(manifest_path, payload)
    return manifest_path


def _require(data: dict, key: str, context: str):
    if key not in data:
        raise SchemaError(f"{context} missing required field {key!r}")
    return data[key]


def _load_json(path, context):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{context} is not valid JSON: {exc}") from exc


# --- subcommand implementations ----------------------------------------------

def cmd_fit_model(args) -> int:
    spec = load_device_spec(args.device_config)
    if args.charge_fit:
        model = fit_charge_model(spec, n_cut=args.n_cut, n_g=args.n_g)
    else:
        model = model_from_spectrum(spec)
    save_model(model, args.output)
    _write_manifest("fit-model", [args.device_config], [args.output])
    print(f"wrote model ({model.source}) to {args.output}")
    return 0


def _target_from_config(entry, model, gate_time_ns, computational_dim):
    if isinstance(entry, str):
        name = entry.lower()
        if name == "swap02":
            return swap_gate(0, 2, dim=model.dim,
                             computational_dim=computational_dim)
        if name in ("identity", "free"):
            # Identity in the rotating frame: the gate free evolution
            # implements, for which the zero pulse is optimal.
            return free_evolution_gate(model, gate_time_ns,
                                       computational_dim=computational_dim)
        raise SchemaError(f"unknown target gate name {entry!r}")
    if isinstance(entry, dict):
        re = np.asarray(_require(entry, "matrix_re", "target matrix"))
        im = np.asarray(_require(entry, "matrix_im", "target matrix"))
        return TargetGate(matrix=re + 1j * im,
                          computational_dim=computational_dim, label="custom")
    raise SchemaError("target must be a gate name or an explicit matrix")


def cmd_optimize(args) -> int:
    model = load_model(args.model)
    config = _load_json(args.opt_config, "optimization config")
    gate_time = float(_require(config, "gate_time_ns", "optimization config"))
    dc = int(config.get("computational_dim", model.dim - 1))
    cap_mhz = float(config.get("amplitude_cap_mhz", 6.0))
    cfg = ObjectiveConfig(
        gate_time_ns=gate_time,
        dt_ns=float(config.get("dt_ns", 0.5)),
        amplitude_cap=2.0 * np.pi * 1e-3 * cap_mhz,
        guard_weights=(tuple(config["guard_weights"])
                       if config.get("guard_weights") is not None else None),
        leakage_weight=float(config.get("leakage_weight", 1.0)),
        boundary_zero=bool(config.get("boundary_zero", True)),
        edge_window_ns=config.get("edge_window_ns"),
        f_max_ghz=config.get("f_max_ghz"),
    )
    target = _target_from_config(_require(config, "target",
                                          "optimization config"),
                                 model, gate_time, dc)
    frame = rotating_frame(model, model.omega[1])
    seed = int(config.get("seed", 0))
    pulse, report = optimize_pulse(
        model, frame, target, cfg, seed=seed,
        n_starts=int(config.get("n_starts", 10)),
        max_iterations=int(config.get("max_iterations", 1200)),
        fg_target=float(config.get("fg_target", 0.999)),
        stop_on_target=bool(config.get("stop_on_target", True)))
    save_pulse(pulse, args.output)
    report_path = args.report or args.output + ".report.json"
    payload = report.as_dict()
    payload["target"] = target.label
    payload["schema_version"] = 1
    _write_json(report_path, payload)
    _write_manifest("optimize", [args.model, args.opt_config],
                    [args.output, report_path], seed=seed)
    print(f"fidelity {report.fidelity:.6f} (target {report.fg_target}), "
          f"objective {report.objective:.3e}, leakage {report.leakage:.3e}")
    if not report.converged:
        print("optimization did not reach the fidelity target",
              file=sys.stderr)
        return 3
    return 0


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    pulse = load_pulse(args.pulse)
    frame = rotating_frame(model, model.omega[1])
    h1, h2 = control_hamiltonians(model)
    d = model.dim
    if not 0 <= args.initial < d:
        raise SchemaError(f"initial level must be in 0..{d - 1}")

    collapse = None
    if args.open_system:
        if model.device is None:
            raise SchemaError(
                "open-system simulation needs a model file with a device block")
        collapse = collapse_operators(model.device, t2_source=args.t2_source)

    rho0 = np.zeros((d, d), dtype=complex)
    rho0[args.initial, args.initial] = 1.0

    if args.reps == 1:
        stride = max(1, int(round(args.sample_ns / pulse.dt_ns)))
        if collapse is None:
            psi0 = np.zeros(d, dtype=complex)
            psi0[args.initial] = 1.0
            traj = propagate_unitary(frame, h1, h2, pulse, psi0=psi0,
                                     store_propagators=False)
        else:
            traj = lindblad_evolve(frame, h1, h2, pulse, rho0, collapse)
        export_trajectory(traj.times_ns[::stride],
                          traj.populations[::stride], args.output)
    else:
        pops = repeated_gate_trajectory(frame, h1, h2, pulse, args.reps,
                                        rho0, collapse)
        export_repeated(pops, args.output)
    _write_manifest("simulate", [args.model, args.pulse], [args.output])
    print(f"wrote trajectory to {args.output}")
    return 0


def cmd_synth(args) -> int:
    model = load_model(args.model)
    pulse = load_pulse(args.pulse)
    frame = rotating_frame(model, model.omega[1])
    wave = synthesize_lab(pulse, frame.omega_d, sample_rate=args.rate)
    export_waveform(wave, args.output)
    _write_manifest("synth", [args.model, args.pulse], [args.output])
    print(f"wrote {wave.samples.size} samples to {args.output}")
    return 0


def _parse_freq_range(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise SchemaError("frequency range must be lo:hi:step (GHz)")
    lo, hi, step = (float(p) for p in parts)
    if step <= 0 or hi <= lo:
        raise SchemaError("frequency range must have hi > lo and step > 0")
    count = int(round((hi - lo) / step)) + 1
    return np.linspace(lo, hi, count)


def cmd_wavelet(args) -> int:
    wave = import_waveform(args.waveform)
    freqs = _parse_freq_range(args.freqs)
    scal = morlet_cwt(wave, freqs, cycles=args.cycles)

    lines = ["freq_ghz," + ",".join(repr(float(t)) for t in scal.times_ns)]
    for i, f in enumerate(scal.freqs_ghz):
        row = ",".join(repr(float(v)) for v in scal.magnitude[i])
        lines.append(f"{float(f)!r},{row}")
    with open(args.output, "w") as fh:
        fh.write("\n".join(lines) + "\n")

    if args.linecuts_at:
        cut_freqs = [float(tok) for tok in args.linecuts_at.split(",")]
    else:
        cut_freqs = [float(f) for f in scal.dominant_frequencies(2)]
    cuts = [scal.linecut(f) for f in cut_freqs]
    cut_path = args.linecuts or args.output + ".linecuts.csv"
    header = "time_ns," + ",".join(f"mag_at_{g!r}ghz" for g, _ in cuts)
    lines = [header]
    for j, t in enumerate(scal.times_ns):
        vals = ",".join(repr(float(c[1][j])) for c in cuts)
        lines.append(f"{float(t)!r},{vals}")
    with open(cut_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_manifest("wavelet", [args.waveform], [args.output, cut_path])
    print(f"wrote scalogram ({len(freqs)} frequencies) to {args.output}")
    return 0


def cmd_tomo(args) -> int:
    trajs = [import_repeated(path) for path in args.trajectories]
    n_rows = min(t.shape[0] for t in trajs)
    n_reps = args.reps or n_rows - 1
    if any(t.shape[0] < n_reps + 1 for t in trajs):
        raise SchemaError("trajectory files cover fewer reps than requested")
    data = np.stack([t[:n_reps + 1] for t in trajs])

    name = args.target.lower()
    if name == "swap02":
        target = np.array([[0, 0, 1], [0, 1, 0], [1, 0, 0]], dtype=complex)
    elif name == "identity":
        target = np.eye(3, dtype=complex)
    else:
        raise SchemaError(f"unknown tomography target {args.target!r}")

    process, diagnostics = fit_chi(data, n_reps, target=target,
                                   seed=args.seed, tp_weight=args.tp_weight)
    payload = chi_to_dict(process)
    payload["fit"] = diagnostics
    _write_json(args.output, payload)

    fid = average_fidelities(process, target, n_samples=args.n_samples,
                             seed=args.seed)
    report_path = args.report or args.output + ".fidelity.json"
    report = fid.as_dict()
    report["fit"] = diagnostics
    report["schema_version"] = 1
    _write_json(report_path, report)
    _write_manifest("tomo", list(args.trajectories),
                    [args.output, report_path], seed=args.seed)
    print(f"avg gate fidelity {fid.gate_fidelity_mean:.5f} "
          f"(+- {fid.gate_fidelity_stderr:.5f}), "
          f"entanglement {fid.entanglement_fidelity_avg:.5f}")
    if not diagnostics["converged"]:
        print("chi fit did not converge", file=sys.stderr)
        return 3
    return 0


def cmd_report(args) -> int:
    summary = {"schema_version": 1, "tool_version": __version__,
               "commands": [], "values": {}}
    for manifest_path in args.manifests:
        manifest = _load_json(manifest_path, "manifest")
        base = os.path.dirname(os.path.abspath(manifest_path))
        for name, digest in manifest.get("outputs", {}).items():
            path = os.path.join(base, name)
            if not os.path.exists(path):
                raise NumericIntegrityError(
                    f"manifest {manifest_path} references missing file {name}")
            actual = _sha256(path)
            if actual != digest:
                raise NumericIntegrityError(
                    f"digest mismatch for {name}: manifest {digest[:12]}..., "
                    f"file {actual[:12]}...")
            if name.endswith(".json"):
                data = _load_json(path, name)
                if "objective" in data and "fidelity" in data:
                    summary["values"]["optimization"] = {
                        "fidelity": data["fidelity"],
                        "objective": data["objective"],
                        "leakage": data["leakage"],
                        "converged": data["converged"],
                    }
                if "avg_gate_fidelity" in data:
                    summary["values"]["tomography"] = {
                        "avg_gate_fidelity": data["avg_gate_fidelity"],
                        "avg_entanglement_fidelity":
                            data["avg_entanglement_fidelity"],
                    }
        summary["commands"].append({
            "command": manifest.get("command"),
            "manifest": os.path.basename(manifest_path),
            "outputs": manifest.get("outputs", {}),
        })
    _write_json(args.output, summary)
    print(f"verified {len(args.manifests)} manifests; wrote {args.output}")
    return 0


# --- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quditpulse",
        description="Design, simulate and evaluate qudit control pulses.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-model", help="build a device model from a config")
    p.add_argument("device_config")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--charge-fit", action="store_true",
                   help="fit a charge-basis model instead of the ladder model")
    p.add_argument("--n-cut", type=int, default=20)
    p.add_argument("--n-g", type=float, default=0.0)
    p.set_defaults(func=cmd_fit_model)

    p = sub.add_parser("optimize", help="optimize a control pulse")
    p.add_argument("model")
    p.add_argument("opt_config")
    p.add_argument("-o", "--output", required=True, help="pulse file")
    p.add_argument("--report", help="report JSON path")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="simulate a pulse")
    p.add_argument("model")
    p.add_argument("pulse")
    p.add_argument("-o", "--output", required=True, help="trajectory CSV")
    p.add_argument("--initial", type=int, default=0, help="initial level")
    p.add_argument("--reps", type=int, default=1)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--open", dest="open_system", action="store_true",
                       help="include relaxation and dephasing")
    group.add_argument("--closed", dest="open_system", action="store_false")
    p.set_defaults(open_system=False)
    p.add_argument("--t2-source", choices=("sim", "table"), default="sim")
    p.add_argument("--sample-ns", type=float, default=1.0,
                   help="output sampling for single-gate trajectories")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="synthesize the lab-frame waveform")
    p.add_argument("model")
    p.add_argument("pulse")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--rate", type=float, default=32.0,
                   help="samples per ns")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("wavelet", help="Morlet scalogram of a waveform")
    p.add_argument("waveform")
    p.add_argument("-o", "--output", required=True, help="scalogram CSV")
    p.add_argument("--freqs", default="3.4:4.4:0.005",
                   help="analysis range lo:hi:step in GHz")
    p.add_argument("--cycles", type=float, default=150.0)
    p.add_argument("--linecuts", help="linecut CSV path")
    p.add_argument("--linecuts-at",
                   help="comma-separated linecut frequencies (GHz); "
                        "defaults to the two dominant peaks")
    p.set_defaults(func=cmd_wavelet)

    p = sub.add_parser("tomo", help="fit a process matrix to trajectories")
    p.add_argument("trajectories", nargs=3,
                   help="repeated-gate CSVs for initial states 0, 1, 2")
    p.add_argument("--target", default="swap02",
                   choices=("swap02", "identity"))
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tp-weight", type=float, default=1000.0)
    p.add_argument("--n-samples", type=int, default=10000)
    p.add_argument("-o", "--output", required=True, help="chi JSON path")
    p.add_argument("--report", help="fidelity report JSON path")
    p.set_defaults(func=cmd_tomo)

    p = sub.add_parser("report", help="verify manifests and merge results")
    p.add_argument("manifests", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NonConvergenceError, TruncationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericIntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except QuditPulseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
