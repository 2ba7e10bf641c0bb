"""Command-line entry point: simulate, analyze, tomo, report."""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import CascadeParams, read_config, read_streams, simulate, write_streams
from .coincidence import (
    DEFAULT_BIN_PS,
    DEFAULT_SIDE_PEAKS,
    CorrelationSettingResult,
    chsh_angle_grid,
    chsh_from_density,
    chsh_from_rates,
    cross_correlate,
    default_window_ps,
    fidelity_from_visibilities,
    integrate_and_normalize,
    integrate_window,
    valley_center,
)
from .fitting import fit_fringe
from .polarization import (
    BASIS_OF,
    MeasurementSetting,
    bell_diagonal_from_visibilities,
    bell_psi,
    concurrence,
    density_to_dict,
    eof,
    fidelity_to_bell,
    linear_entropy,
    named_state,
    peres_min_eigenvalue,
    tangle,
    werner,
)
from .tomography import (
    SETTINGS as TOMO_SETTINGS,
    ConvergenceError,
    TomoCounts,
    bootstrap,
    expected_counts,
    imaginary_report,
    mle_fit,
    sample_counts,
)

FIG2_SETTINGS = ["LR", "LL", "RR", "RL", "HH", "HV", "VH", "VV", "DD", "DA", "AD", "AA"]
SETTING_PRESETS = {
    "fig2": FIG2_SETTINGS,
    "chsh": [f"{a:g}/{b:g}" for a, b in chsh_angle_grid()],
    "tomo": [a + b for a, b in TOMO_SETTINGS],
    "bases": ["LR", "HH", "DD"],
}

# keys that are command options rather than CascadeParams fields
OPTION_KEYS = {
    "seed", "out", "duration_s", "settings", "bin_ps", "window_ns", "side_peaks",
    "tol", "max_iter", "workers", "counts", "state", "shots", "exact", "bootstrap",
    "manifest", "analysis", "tomo", "align",
}
ALIGN_MODES = ("valley", "zero")


class CliError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


# ---------------------------------------------------------------------------
# helpers

def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def safe_name(label: str) -> str:
    return label.replace("/", "_").replace("@", "_at_")


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def print_summary(values: dict, stream=None) -> None:
    stream = stream or sys.stdout
    for key, value in values.items():
        if isinstance(value, (dict, list)):
            continue
        print(f"{key}={_fmt(value)}", file=stream)


def merge_options(args, defaults: dict) -> tuple:
    """Config file < explicit flags.  Returns (options, cascade parameter overrides)."""
    config = read_config(args.config) if getattr(args, "config", None) else {}
    options = dict(defaults)
    cascade = {}
    for key, value in config.items():
        if key in OPTION_KEYS:
            options[key] = value
        else:
            cascade[key] = value
    for key, value in vars(args).items():
        if value is None or key in ("config", "func", "command", "param"):
            continue
        options[key] = value
    for item in getattr(args, "param", None) or []:
        if "=" not in item:
            raise CliError("config", f"--param expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cascade[key.strip()] = value.strip()
    return options, cascade


def parse_settings(text) -> list:
    if isinstance(text, (list, tuple)):
        items = list(text)
    else:
        items = []
        for part in str(text).split(","):
            part = part.strip()
            if not part:
                continue
            items.extend(SETTING_PRESETS.get(part.lower(), [part]))
    out = []
    for item in items:
        try:
            out.append(MeasurementSetting.parse(item))
        except ValueError as exc:
            raise CliError("config", f"bad setting {item!r}: {exc}") from None
    if not out:
        raise CliError("config", "no measurement settings given")
    return out


# ---------------------------------------------------------------------------
# simulate

def _simulate_one(job):
    params, label, duration, seed, path = job
    streams = simulate(params, MeasurementSetting.parse(label), duration, seed)
    tmp = Path(path).with_suffix(".tmp")
    write_streams(tmp, streams)
    os.replace(tmp, path)
    return label, [len(s) for s in streams]


def cmd_simulate(args) -> dict:
    options, cascade = merge_options(args, {"duration_s": 1.0, "settings": "fig2", "workers": 1})
    if options.get("seed") is None:
        raise CliError("config", "simulate requires --seed (or seed= in the config)")
    if not options.get("out"):
        raise CliError("config", "simulate requires --out")
    try:
        params = CascadeParams.from_mapping(cascade)
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from None
    seed = int(options["seed"])
    duration = float(options["duration_s"])
    if not duration > 0 or duration * params.rep_rate * 1e6 < 1:
        raise CliError("config", f"duration {duration} s contains no excitation pulse")
    settings = parse_settings(options["settings"])
    out = Path(options["out"])
    stream_dir = out / "streams"
    stream_dir.mkdir(parents=True, exist_ok=True)

    jobs = []
    for k, setting in enumerate(settings):
        path = stream_dir / f"{safe_name(setting.label)}.tsv"
        # distinct, reproducible seed per setting
        sub_seed = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
        jobs.append((params, setting.label, duration, sub_seed, str(path)))
    workers = int(options["workers"])
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(job) for job in jobs]

    manifest = {
        "command": "simulate",
        "version": __version__,
        "seed": seed,
        "duration_s": duration,
        "params": params.to_mapping(),
        "settings": [
            {
                "label": label,
                "seed": job[3],
                "file": os.path.relpath(job[4], out),
                "sha256": sha256_of(job[4]),
                "events": counts,
            }
            for job, (label, counts) in zip(jobs, results)
        ],
    }
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=2))
    return {"settings": len(settings), "manifest": str(out / "manifest.json")}


# ---------------------------------------------------------------------------
# analyze

def _load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise CliError("input", f"manifest not found: {path}") from None
    return path, manifest


def analyze_streams(entries, period_ps, bin_ps, window_ps, side_peaks, align="valley") -> list:
    """Histograms and normalized coincidences for every (label, {channel: stream}) entry.

    ``align="valley"`` places the integration windows between the peaks of
    the summed co + cross histogram; ``"zero"`` centres them on zero delay.
    """
    if align not in ALIGN_MODES:
        raise ValueError(f"align must be one of {ALIGN_MODES}, got {align!r}")
    runs = []
    for label, streams in entries:
        h_co = cross_correlate(streams[0], streams[1], bin_ps, window_ps)
        h_cross = cross_correlate(streams[0], streams[2], bin_ps, window_ps)
        center = valley_center(h_co + h_cross, period_ps) if align == "valley" else 0.0
        n_co = integrate_and_normalize(h_co, period_ps, side_peaks, center)
        n_cross = integrate_and_normalize(h_cross, period_ps, side_peaks, center)
        runs.append({
            "label": label,
            "setting": MeasurementSetting.parse(label),
            "hist_co": h_co,
            "hist_cross": h_cross,
            "n_co": n_co,
            "n_cross": n_cross,
            "center_ps": center,
            "central_co": integrate_window(h_co, center, period_ps / 2),
            "central_cross": integrate_window(h_cross, center, period_ps / 2),
        })
    return runs


def _angle_key(setting: MeasurementSetting):
    if "/" not in setting.label or "@" in setting.label:
        return None
    a, b = setting.label.split("/")
    return float(a) % 360.0, float(b) % 360.0


def summarize_runs(runs) -> dict:
    report = {"settings": []}
    per_basis = {}
    for run in runs:
        label = run["label"]
        result = None
        if "/" not in label:
            result = CorrelationSettingResult(label[0], label[1], run["n_co"], run["n_cross"])
        entry = {
            "label": label,
            "center_ps": run["center_ps"],
            "n_co": run["n_co"].n,
            "n_co_sigma": run["n_co"].poisson_sigma,
            "n_cross": run["n_cross"].n,
            "n_cross_sigma": run["n_cross"].poisson_sigma,
        }
        if run["n_co"].n + run["n_cross"].n > 0:
            cr = result or CorrelationSettingResult("xx", "x", run["n_co"], run["n_cross"])
            entry["visibility"] = cr.visibility
            entry["visibility_sigma"] = cr.visibility_sigma
        report["settings"].append(entry)
        if result is not None and BASIS_OF[label[0]] == BASIS_OF[label[1]] and "visibility" in entry:
            per_basis.setdefault(BASIS_OF[label[0]], []).append((entry["visibility"], entry["visibility_sigma"]))

    names = {"z": "C_RL", "x": "C_HV", "y": "C_DA"}
    for key, vals in per_basis.items():
        c = float(np.mean([v for v, _ in vals]))
        s = float(math.sqrt(sum(e**2 for _, e in vals)) / len(vals))
        report[names[key]] = c
        report[names[key] + "_sigma"] = s
    if all(names[k] in report for k in names):
        cs = [report[names[k]] for k in ("z", "x", "y")]
        report["fidelity"] = fidelity_from_visibilities(*cs)
        report["fidelity_sigma"] = math.sqrt(sum(report[names[k] + "_sigma"] ** 2 for k in names)) / 4

    # angle runs: the co port gives (a, b), the cross port (a, b + 180)
    rates = {}
    for run in runs:
        key = _angle_key(run["setting"])
        if key is None:
            continue
        a, b = key
        rates.setdefault((a, b), run["n_co"])
        rates.setdefault((a, (b + 180.0) % 360.0), run["n_cross"])
    if rates:
        report["fringes"] = {}
        by_xx = {}
        for (a, b), n in sorted(rates.items()):
            by_xx.setdefault(a, []).append((b, n))
        for a, points in by_xx.items():
            fringe = {"theta_x": [b for b, _ in points], "n": [x.n for _, x in points],
                      "sigma": [x.poisson_sigma for _, x in points]}
            if len(points) >= 4:
                try:
                    fit = fit_fringe(fringe["theta_x"], fringe["n"])
                    fringe.update(amplitude=fit.amplitude, phase_deg=fit.phase_deg, offset=fit.offset,
                                  contrast=fit.contrast, residual=fit.residual)
                except ValueError:
                    pass
            report["fringes"][f"{a:g}"] = fringe
        if all(k in rates for k in chsh_angle_grid()):
            s, s_sigma, Es = chsh_from_rates(rates)
            report["S"] = s
            report["S_sigma"] = s_sigma
            report["E"] = Es
    return report


def tomo_counts_from_runs(runs):
    """Raw central-peak counts for the 36 letter settings, or None if some are missing."""
    entries = {}
    for run in runs:
        label = run["label"]
        if "/" in label:
            continue
        entries[(label[0], label[1])] = run["central_co"]
        ortho = run["setting"].proj_x.orthogonal()
        for other in "RLHVDA":
            if named_state(other).is_close(ortho):
                entries.setdefault((label[0], other), run["central_cross"])
    if len(entries) < 36:
        return None
    return TomoCounts({k: int(round(v)) for k, v in entries.items()})


def cmd_analyze(args) -> dict:
    options, _ = merge_options(args, {"bin_ps": DEFAULT_BIN_PS, "side_peaks": DEFAULT_SIDE_PEAKS, "align": "valley"})
    if not options.get("manifest"):
        raise CliError("config", "analyze requires --manifest (simulate output directory or manifest.json)")
    manifest_path, manifest = _load_manifest(options["manifest"])
    base = manifest_path.parent
    out = Path(options.get("out") or base / "analysis")
    params = CascadeParams.from_mapping(manifest.get("params", {}))
    bin_ps = int(options["bin_ps"])
    side_peaks = int(options["side_peaks"])
    if options.get("window_ns") is not None:
        window_ps = int(round(float(options["window_ns"]) * 1000))
    else:
        window_ps = default_window_ps(params.period_ps, side_peaks, bin_ps)

    wanted = options.get("settings")
    wanted_labels = None if not wanted else {s.label for s in parse_settings(wanted)}
    entries, inputs = [], []
    for item in manifest["settings"]:
        if wanted_labels is not None and item["label"] not in wanted_labels:
            continue
        path = base / item["file"]
        if not path.exists():
            raise CliError("input", f"stream file missing: {path}")
        entries.append((item["label"], read_streams(path)))
        inputs.append({"file": str(path), "sha256": sha256_of(path)})
    if wanted_labels is not None:
        missing = wanted_labels - {label for label, _ in entries}
        if missing:
            raise CliError("input", f"requested settings not in manifest: {','.join(sorted(missing))}")
    if not entries:
        raise CliError("input", "no stream files to analyze")

    try:
        runs = analyze_streams(entries, params.period_ps, bin_ps, window_ps, side_peaks, options["align"])
    except ValueError as exc:
        raise CliError("analysis", str(exc)) from None
    report = summarize_runs(runs)
    report.update({
        "command": "analyze",
        "version": __version__,
        "manifest": str(manifest_path),
        "inputs": inputs,
        "bin_ps": bin_ps,
        "window_ps": window_ps,
        "side_peaks": side_peaks,
        "align": options["align"],
        "period_ps": params.period_ps,
    })

    for run in runs:
        name = safe_name(run["label"])
        atomic_write(out / "histograms" / f"{name}_co.csv", run["hist_co"].to_csv())
        atomic_write(out / "histograms" / f"{name}_cross.csv", run["hist_cross"].to_csv())
    for a, fringe in report.get("fringes", {}).items():
        lines = ["theta_deg,n,sigma"]
        lines += [f"{t:g},{n!r},{s!r}" for t, n, s in zip(fringe["theta_x"], fringe["n"], fringe["sigma"])]
        atomic_write(out / f"fringe_xx{a}.csv", "\n".join(lines) + "\n")
    counts = tomo_counts_from_runs(runs)
    if counts is not None:
        atomic_write(out / "tomo_counts.csv", counts.to_csv())
        report["tomo_counts"] = str(out / "tomo_counts.csv")
    atomic_write(out / "analysis.json", json.dumps(report, indent=2))
    report["analysis"] = str(out / "analysis.json")
    return report


# ---------------------------------------------------------------------------
# tomo

def parse_state(text: str):
    """``bell``, ``werner:V`` or ``visibilities:C1,C2,C3``."""
    name, _, arg = text.partition(":")
    name = name.strip().lower()
    try:
        if name == "bell":
            return bell_psi()
        if name == "werner":
            return werner(float(arg))
        if name in ("visibilities", "bell-diagonal"):
            return bell_diagonal_from_visibilities(*[float(x) for x in arg.split(",")])
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"bad state {text!r}: {exc}") from None
    raise CliError("config", f"unknown state {text!r}; use bell, werner:V or visibilities:A,B,C")


def state_summary(rho) -> dict:
    return {
        "fidelity": fidelity_to_bell(rho),
        "S": chsh_from_density(rho),
        "min_pt_eigenvalue": peres_min_eigenvalue(rho),
        "concurrence": concurrence(rho),
        "tangle": tangle(rho),
        "linear_entropy": linear_entropy(rho),
        "eof": eof(rho),
    }


def cmd_tomo(args) -> dict:
    options, _ = merge_options(args, {"tol": 1e-10, "max_iter": 100_000, "shots": 1e6})
    out = Path(options.get("out") or ".")
    inputs = []
    if options.get("state"):
        rho_true = parse_state(options["state"])
        shots = float(options["shots"])
        if options.get("exact"):
            # rounded so the written file is a valid integer counts table
            counts = TomoCounts.from_array(np.rint(expected_counts(rho_true, shots).as_array()))
        else:
            if options.get("seed") is None:
                raise CliError("config", "sampled synthetic counts require --seed (or use --exact)")
            counts = sample_counts(rho_true, shots, int(options["seed"]))
        counts_path = out / "counts.csv"
        atomic_write(counts_path, counts.to_csv())
        inputs.append({"file": str(counts_path), "sha256": sha256_of(counts_path), "generated_from": options["state"]})
    elif options.get("counts"):
        path = Path(options["counts"])
        try:
            counts = TomoCounts.from_csv(path.read_text())
        except FileNotFoundError:
            raise CliError("input", f"counts file not found: {path}") from None
        except ValueError as exc:
            raise CliError("input", f"{path}: {exc}") from None
        inputs.append({"file": str(path), "sha256": sha256_of(path)})
    else:
        raise CliError("config", "tomo requires --counts FILE or --state STATE")

    try:
        result = mle_fit(counts, float(options["tol"]), int(float(options["max_iter"])))
    except ConvergenceError as exc:
        raise CliError("convergence", str(exc)) from None
    except ValueError as exc:
        raise CliError("input", str(exc)) from None
    summary = state_summary(result.rho)
    doc = density_to_dict(result.rho)
    doc.update(imaginary_report(result.rho))
    doc["summary"] = summary
    doc["mle"] = {"loss": result.loss, "initial_loss": result.initial_loss, "iterations": result.n_iter,
                  "evaluations": result.n_eval, "grad_norm": result.grad_norm}
    doc["inputs"] = inputs
    doc["command"] = "tomo"
    doc["version"] = __version__
    n_boot = int(options.get("bootstrap") or 0)
    if n_boot > 0:
        if options.get("seed") is None:
            raise CliError("config", "--bootstrap requires --seed")
        states = bootstrap(counts, n_boot, int(options["seed"]) + 1, float(options["tol"]), int(float(options["max_iter"])))
        sums = [state_summary(r) for r in states]
        doc["bootstrap"] = {k: float(np.std([s[k] for s in sums], ddof=1)) for k in summary}
        doc["bootstrap"]["resamples"] = n_boot
    atomic_write(out / "density.json", json.dumps(doc, indent=2))
    return dict(summary, density=str(out / "density.json"))


# ---------------------------------------------------------------------------
# report

def cmd_report(args) -> dict:
    options, _ = merge_options(args, {})
    if not options.get("analysis") and not options.get("tomo"):
        raise CliError("config", "report needs --analysis and/or --tomo")
    report = {"command": "report", "version": __version__, "sources": []}
    for key in ("analysis", "tomo"):
        if not options.get(key):
            continue
        path = Path(options[key])
        if path.is_dir():
            path = path / ("analysis.json" if key == "analysis" else "density.json")
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise CliError("input", f"{key} file not found: {path}") from None
        report["sources"].append({"kind": key, "file": str(path), "sha256": sha256_of(path),
                                  "inputs": doc.get("inputs", [])})
        if key == "analysis":
            for field in ("C_RL", "C_HV", "C_DA", "fidelity", "fidelity_sigma", "S", "S_sigma"):
                if field in doc:
                    report[f"measured_{field}"] = doc[field]
        else:
            for field, value in doc.get("summary", {}).items():
                report[f"tomo_{field}"] = value
    out = options.get("out")
    if out:
        out = Path(out)
        target = out / "report.json" if out.suffix != ".json" else out
        atomic_write(target, json.dumps(report, indent=2))
        report["report"] = str(target)
    return report


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdpairs", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("simulate", help="generate three-channel event streams")
    common(p)
    p.add_argument("--duration-s", dest="duration_s", type=float)
    p.add_argument("--settings", help="comma list of settings (LR, 0/45, ...) or presets fig2, chsh, tomo, bases")
    p.add_argument("--workers", type=int)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="cascade parameter override")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="histograms, visibilities, fidelity and CHSH from streams")
    common(p)
    p.add_argument("--manifest", help="simulate output directory or its manifest.json")
    p.add_argument("--settings", help="restrict to these settings (error if any is missing)")
    p.add_argument("--bin-ps", dest="bin_ps", type=int)
    p.add_argument("--window-ns", dest="window_ns", type=float)
    p.add_argument("--side-peaks", dest="side_peaks", type=int)
    p.add_argument("--align", choices=ALIGN_MODES,
                   help="integration window placement: between peaks (valley, default) or centred on zero delay")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("tomo", help="maximum-likelihood density matrix from 36-setting counts")
    common(p)
    p.add_argument("--counts", help="CSV basis_xx,basis_x,counts with 36 rows")
    p.add_argument("--state", help="synthesize counts from bell, werner:V or visibilities:A,B,C")
    p.add_argument("--shots", type=float, help="expected counts per basis pair for --state")
    p.add_argument("--exact", action="store_true", default=None, help="noiseless expected counts for --state")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--bootstrap", type=int, help="number of Poisson resamples for error bars")
    p.set_defaults(func=cmd_tomo)

    p = sub.add_parser("report", help="merge analysis and tomography outputs")
    common(p)
    p.add_argument("--analysis", help="analysis.json or its directory")
    p.add_argument("--tomo", help="density.json or its directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except CliError as exc:
        print(f"error kind={exc.kind} message={json.dumps(str(exc))}", file=sys.stderr)
        return 2 if exc.kind == "config" else 1
    except (ValueError, OSError) as exc:
        print(f"error kind={type(exc).__name__} message={json.dumps(str(exc))}", file=sys.stderr)
        return 1
    print_summary(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
