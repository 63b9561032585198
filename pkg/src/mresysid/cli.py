"""Command-line front end: synthetic data, identification, validation, Bode export.

Every command reads and writes plain files (see :mod:`mresysid.io`) so runs can
be chained and compared. Exit codes: 0 success, 1 input/output or
configuration error, 2 identification failure, 3 validation grid mismatch,
4 unstable baseline.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .model import (
    HammersteinModel,
    TimeSeries,
    frequency_response,
    simulate,
    step_response_fast,
    step_response_slow,
)
from .signals import (
    add_noise,
    chirp_excitation,
    default_schedule,
    make_step_excitation,
    split_steps,
    steady_state_points,
)
from .sysid import (
    FAST_WINDOW,
    IdentificationError,
    OptimizerSettings,
    UnstableModelError,
    fit_baseline_pooled,
    fit_report,
    fit_static,
    identify,
    select_degree,
    validate,
)

EXIT_OK, EXIT_IO, EXIT_IDENT, EXIT_GRID, EXIT_UNSTABLE = 0, 1, 2, 3, 4

BODE_POINTS = 400
BODE_RANGE = (1e-3, 1e4)

# generate writes these names into its output directory; the other commands
# look for them in --data
EXCITATION, RESPONSE = "excitation.csv", "response.csv"
RECORDS, STATICS = "records.json", "statics.csv"
CHIRP_INPUT, CHIRP_RESPONSE = "chirp_input.csv", "chirp_response.csv"
TRUTH = "truth_model.json"


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    model: str | None = None
    out: str = "."
    data: list = dataclasses.field(default_factory=list)
    input: str | None = None
    measured: str | None = None
    label: str = ""
    sigma: float = 0.0
    seed: int = 0
    hold: float = 20.0
    sample_period: float = 1e-3
    fast_window: float = FAST_WINDOW
    degrees: tuple = (1, 2, 3, 4, 5)
    tolerance: float = 1e-10
    max_iterations: int = 5000
    restarts: int = 8

    def __post_init__(self):
        if isinstance(self.data, str):
            self.data = [self.data]
        if isinstance(self.degrees, str):
            self.degrees = parse_degrees(self.degrees)
        self.degrees = tuple(int(d) for d in self.degrees)
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if not self.hold > 0:
            raise ConfigError("hold period must be positive")
        if not self.sample_period > 0:
            raise ConfigError("sample period must be positive")
        if not self.fast_window > 0:
            raise ConfigError("fast window must be positive")
        if not self.degrees or min(self.degrees) < 1:
            raise ConfigError("degrees must be positive integers")

    @property
    def settings(self) -> OptimizerSettings:
        try:
            return OptimizerSettings(self.tolerance, self.max_iterations, self.restarts)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def data_dirs(self) -> list[Path]:
        return [Path(d) for d in self.data] or [Path(self.out)]


def parse_degrees(text: str) -> tuple:
    try:
        return tuple(int(p) for p in text.replace(" ", "").split(",") if p)
    except ValueError:
        raise ConfigError(f"cannot parse degree list {text!r}") from None


def reference_model(name: str) -> Path:
    """Path of a shipped reference model, ``single_magnet`` or ``double_magnet``."""
    return Path(str(resources.files("mresysid") / "data" / f"{name}.json"))


def _load_model(cfg: RunConfig) -> HammersteinModel:
    if cfg.model is None:
        raise ConfigError("--model is required")
    path = Path(cfg.model)
    if not path.exists() and reference_model(cfg.model).exists():
        path = reference_model(cfg.model)
    return io.read_model(path)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(directory: Path):
    return io.read_records(directory / RECORDS), io.read_statics(directory / STATICS)


# --- commands ---------------------------------------------------------------


def cmd_generate(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    out = _out_dir(cfg)
    schedule = default_schedule(hold_period=cfg.hold)
    try:
        u = make_step_excitation(schedule, cfg.sample_period)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    y = add_noise(simulate(model, u), cfg.sigma, cfg.seed)
    records = split_steps(u, y)
    statics = steady_state_points(records, y_offset=float(y.values[0]))

    chirp = chirp_excitation(sample_period=cfg.sample_period)
    y_chirp = add_noise(simulate(model, chirp), cfg.sigma, cfg.seed + 1)

    io.write_series(out / EXCITATION, u)
    io.write_series(out / RESPONSE, y)
    io.write_records(out / RECORDS, records)
    io.write_statics(out / STATICS, statics)
    io.write_series(out / CHIRP_INPUT, chirp)
    io.write_series(out / CHIRP_RESPONSE, y_chirp)
    io.write_model(out / TRUTH, model)
    print(f"generate: {u.duration:g} s, {len(records)} step records, "
          f"{len(statics)} static points -> {out}")
    return EXIT_OK


def cmd_identify(cfg: RunConfig) -> int:
    records, statics = _load_dataset(cfg.data_dirs[0])
    out = _out_dir(cfg)
    result = identify(records, statics, cfg.degrees, cfg.fast_window, cfg.settings)
    model = result.model
    io.write_model(out / "model.json", model)
    io.write_json(out / "diagnostics.json", [d.to_dict() for d in result.diagnostics])

    overlays = out / "overlays"
    overlays.mkdir(exist_ok=True)
    f = model.nonlinearity
    for rec, diag in zip(records, result.diagnostics):
        dv = f(rec.u_post) - f(rec.u_pre)
        t = rec.t
        fitted_fast = dv * step_response_fast(model.fast, t)
        fitted_slow = model.fast.k * dv * step_response_slow(model.slow, t)
        io.write_table(overlays / f"record_{diag.j:02d}.csv",
                       ("t", "measured", "fitted_fast", "fitted_slow"),
                       (t, rec.delta_y, fitted_fast, fitted_slow))

    kept = sum(not d.excluded for d in result.diagnostics)
    print(f"identify: degree {model.nonlinearity.order}, k={model.fast.k!r} "
          f"alpha={model.fast.alpha!r} omega={model.fast.omega!r} s0={model.slow.s0!r} "
          f"({kept}/{len(records)} records)")
    if not result.converged:
        print("identify: warning: refinement did not converge", file=sys.stderr)
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    model = io.read_model(cfg.model) if cfg.model else io.read_model(Path(cfg.out) / "model.json")
    data = cfg.data_dirs[0]
    u = io.read_series(cfg.input or data / CHIRP_INPUT)
    y = io.read_series(cfg.measured or data / CHIRP_RESPONSE)
    out = _out_dir(cfg)
    if len(u) != len(y) or u.sample_period != y.sample_period:
        print("validate: input and measured series are on different grids", file=sys.stderr)
        return EXIT_GRID
    report = validate(model, u, y)
    predicted = simulate(model, u)
    io.write_json(out / "validation_fit.json", report.to_dict())
    io.write_table(out / "validation_overlay.csv", ("t", "measured", "predicted"),
                   (u.t, y.values, predicted.values))
    print(f"validate: fit {report.fit_percent:.3f} %")
    return EXIT_OK


def cmd_bode(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    out = _out_dir(cfg)
    w = np.logspace(np.log10(BODE_RANGE[0]), np.log10(BODE_RANGE[1]), BODE_POINTS)
    fr = frequency_response(model.fast, model.slow, w)
    io.write_table(
        out / "bode.csv",
        ("omega", "mag_fast", "phase_fast", "mag_slow", "phase_slow", "mag_total", "phase_total"),
        (w, fr.magnitude("fast"), np.degrees(fr.phase("fast")),
         fr.magnitude("slow"), np.degrees(fr.phase("slow")),
         fr.magnitude("total"), np.degrees(fr.phase("total"))),
    )
    print(f"bode: {BODE_POINTS} points -> {out / 'bode.csv'}")
    return EXIT_OK


def cmd_baseline(cfg: RunConfig) -> int:
    dirs = cfg.data_dirs
    datasets = [_load_dataset(d) for d in dirs]
    out = _out_dir(cfg)
    tf, report = fit_baseline_pooled(datasets, cfg.settings, cfg.degrees, cfg.fast_window)
    io.write_json(out / "baseline.json", tf.to_dict())
    io.write_json(out / "baseline_fit.json", report.to_dict())

    staged = None
    staged_path = Path(cfg.model) if cfg.model else out / "model.json"
    if staged_path.exists() and len(dirs) == 1:
        staged = io.read_model(staged_path)

    chirp_fits = {}
    for d, (_, statics) in zip(dirs, datasets):
        if not (d / CHIRP_INPUT).exists():
            continue
        u = io.read_series(d / CHIRP_INPUT)
        y = io.read_series(d / CHIRP_RESPONSE)
        f = fit_static(statics, select_degree(statics, cfg.degrees)[0])
        y_base = tf.predict(f, u)
        header = ["t", "measured", "baseline"]
        columns = [u.t, y.values, y_base.values]
        if staged is not None:
            header.append("staged")
            columns.append(simulate(staged, u).values)
        name = "baseline_chirp.csv" if len(dirs) == 1 else f"baseline_chirp_{d.name}.csv"
        io.write_table(out / name, header, columns)
        chirp_fits[d.name or str(d)] = fit_report(y.values, y_base.values).to_dict()
    if chirp_fits:
        io.write_json(out / "baseline_chirp_fit.json", chirp_fits)

    print(f"baseline: step-record fit {report.fit_percent:.3f} % over {len(dirs)} dataset(s)")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "identify": cmd_identify,
    "baseline": cmd_baseline,
    "validate": cmd_validate,
    "bode": cmd_bode,
}


# --- argument handling ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mresysid",
        description="Hammerstein actuator model: synthetic data, identification, validation.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON file with any of the options below")
    parser.add_argument("--model", help="model JSON, or single_magnet / double_magnet")
    parser.add_argument("--out", help="output directory (default: current directory)")
    parser.add_argument("--data", nargs="+",
                        help="directory written by 'generate' (default: --out); several "
                             "directories pool the baseline fit")
    parser.add_argument("--input", help="validation input series CSV")
    parser.add_argument("--measured", help="validation measured series CSV")
    parser.add_argument("--label", help="free-form case label")
    parser.add_argument("--sigma", type=float, help="output noise standard deviation (mm)")
    parser.add_argument("--seed", type=int, help="noise seed")
    parser.add_argument("--hold", type=float, help="step hold period (s)")
    parser.add_argument("--sample-period", type=float, help="sample period (s)")
    parser.add_argument("--fast-window", type=float, help="fast-stage window (s)")
    parser.add_argument("--degrees", help="comma-separated polynomial degrees to try")
    parser.add_argument("--tolerance", type=float)
    parser.add_argument("--max-iterations", type=int)
    parser.add_argument("--restarts", type=int)
    return parser


def make_config(args: argparse.Namespace) -> RunConfig:
    """Merge the optional JSON config file with the flags; flags win."""
    values = {}
    if args.config:
        loaded = io.read_json(args.config)
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update({k.replace("-", "_"): v for k, v in loaded.items()})
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for name in known:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = make_config(args)
        return COMMANDS[args.command](cfg)
    except UnstableModelError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except IdentificationError as exc:
        print(f"{args.command}: identification failed: {exc}", file=sys.stderr)
        return EXIT_IDENT
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
