"""Command-line entry point: ``wellde run | report | gen-field | validate``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import yaml

from . import harness
from .de_core import ConfigurationError, DEConfig, Strategy
from .economics import EconomicParams
from .flow_sim import ControlSchedule, FluidProps
from .grid_field import FieldWindow, Grid, generate_synthetic_field, read_sidecar, write_spe10_dataset

PROG = "wellde"


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending path."""


# ---------------------------------------------------------------------------
# strict schema helpers

def _type_name(v) -> str:
    return "null" if v is None else type(v).__name__


def _expect(value, kind, path):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {_type_name(value)}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {_type_name(value)}")
        return value
    if not isinstance(value, kind):
        raise ConfigError(f"{path}: expected {kind.__name__}, got {_type_name(value)}")
    return value


def _mapping(value, path) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected mapping, got {_type_name(value)}")
    return value


def _check_keys(doc: dict, allowed, path: str):
    for key in doc:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(f"unknown key '{where}'")


def _section(doc, cls, path, defaults):
    """Override fields of dataclass instance ``defaults`` from mapping ``doc``."""
    if doc is None:
        return defaults
    doc = _mapping(doc, path)
    names = {f.name: f for f in fields(cls)}
    _check_keys(doc, names, path)
    kw = {}
    for key, value in doc.items():
        kind = int if names[key].type in ("int", int) else float
        kw[key] = _expect(value, kind, f"{path}.{key}")
    try:
        return replace(defaults, **kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _bhp_list(value, path, n) -> tuple[float, ...]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (float(value),) * n
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected number or list of {n} numbers, got {_type_name(value)}")
    if len(value) != n:
        raise ConfigError(f"{path}: expected {n} values (one per control interval), got {len(value)}")
    return tuple(_expect(v, float, f"{path}[{k}]") for k, v in enumerate(value))


# ---------------------------------------------------------------------------
# experiment configuration

@dataclass(frozen=True)
class RockSource:
    """Either an SPE10 dataset (sidecar path + window) or synthetic field parameters."""

    spe10: str | None = None
    window: FieldWindow = FieldWindow()
    synthetic: harness.SyntheticRock | None = None

    def to_dict(self) -> dict:
        if self.spe10 is not None:
            return {"spe10": self.spe10, "window": asdict(self.window)}
        return {"synthetic": asdict(self.synthetic)}

    def build_source(self):
        if self.spe10 is not None:
            return harness.Spe10Rock(self.spe10, self.window)
        return self.synthetic


@dataclass(frozen=True)
class ExperimentConfig:
    case: str
    config: int | dict
    out: str
    trials: int = 30
    seed: int = 42
    jobs: int | None = None
    mini: bool = False
    charge_infeasible: bool = True
    rock: RockSource | None = None
    injector_bhp: tuple[float, ...] = (450.0,) * 5
    producer_bhp: tuple[float, ...] = (100.0,) * 5
    shut_in: str = "well"
    fluid: FluidProps = FluidProps()
    economics: EconomicParams = EconomicParams()
    schedule: ControlSchedule = ControlSchedule()

    @property
    def case_name(self) -> str:
        name = self.case if self.case.startswith("case") else f"case{self.case}"
        if self.mini and not name.endswith("-mini"):
            name += "-mini"
        return name

    def de_config(self) -> DEConfig:
        if isinstance(self.config, int):
            cfg = harness.builtin_config(self.config, mini=self.case_name.endswith("-mini"))
            return replace(cfg, charge_infeasible=self.charge_infeasible)
        try:
            return DEConfig(charge_infeasible=self.charge_infeasible, **self.config)
        except (ConfigurationError, ValueError) as exc:
            raise ConfigError(f"config: {exc}") from None

    def case_spec(self) -> harness.CaseSpec:
        econ = self.economics
        overrides = dict(
            fluid=self.fluid, schedule=self.schedule, c_o=econ.c_o, c_w_disp=econ.c_w_disp,
            c_w_inj=econ.c_w_inj, water_cut_threshold=econ.water_cut_threshold,
            injector_bhp=self.injector_bhp, producer_bhp=self.producer_bhp, shut_in=self.shut_in)
        if self.rock is not None:
            overrides["rock"] = self.rock.build_source()
        try:
            return harness.case_by_name(self.case_name, **overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        doc = {
            "case": self.case, "config": self.config if isinstance(self.config, int) else dict(self.config),
            "out": self.out, "trials": self.trials, "seed": self.seed, "jobs": self.jobs, "mini": self.mini,
            "charge_infeasible": self.charge_infeasible,
            "rock": None if self.rock is None else self.rock.to_dict(),
            "injector_bhp": list(self.injector_bhp), "producer_bhp": list(self.producer_bhp),
            "shut_in": self.shut_in, "fluid": asdict(self.fluid),
            "economics": {k: v for k, v in asdict(self.economics).items() if k != "r"},
            "schedule": asdict(self.schedule),
        }
        return doc


REQUIRED = ("case", "config", "out")
DE_KEYS = {"N": int, "F": float, "CR": float, "strategy": str, "budget": int}


def _parse_case(value) -> str:
    if isinstance(value, int) and not isinstance(value, bool):
        value = str(value)
    value = _expect(value, str, "case")
    name = value if value.startswith("case") else f"case{value}"
    if name not in harness.CASES:
        raise ConfigError(f"case: unknown case '{value}'; choose 1, 2, 3 or a -mini variant")
    return value


def _parse_de(value):
    if isinstance(value, dict):
        _check_keys(value, DE_KEYS, "config")
        for key in ("N", "F", "CR", "strategy"):
            if key not in value:
                raise ConfigError(f"config.{key}: missing required field")
        out = {k: _expect(v, DE_KEYS[k], f"config.{k}") for k, v in value.items()}
        try:
            Strategy(out["strategy"])
        except ValueError:
            raise ConfigError(f"config.strategy: unknown strategy '{out['strategy']}'") from None
        return out
    k = _expect(value, int, "config")
    if k not in harness.TABLE3:
        raise ConfigError(f"config: DE configuration must be in 1..8, got {k}")
    return k


def _parse_rock(value) -> RockSource | None:
    if value is None:
        return None
    doc = _mapping(value, "rock")
    _check_keys(doc, ("spe10", "window", "synthetic"), "rock")
    if ("spe10" in doc) == ("synthetic" in doc):
        raise ConfigError("rock: give exactly one of 'spe10' or 'synthetic'")
    if "synthetic" in doc:
        if "window" in doc:
            raise ConfigError("rock.window: only valid with 'spe10'")
        syn = _mapping(doc["synthetic"], "rock.synthetic")
        names = {f.name: f for f in fields(harness.SyntheticRock)}
        _check_keys(syn, names, "rock.synthetic")
        for key in ("seed", "nx", "ny", "log_mean", "log_sigma", "smoothing_radius"):
            if key not in syn:
                raise ConfigError(f"rock.synthetic.{key}: missing required field")
        kw = {k: _expect(v, int if names[k].type in ("int", int) else float, f"rock.synthetic.{k}")
              for k, v in syn.items()}
        return RockSource(synthetic=harness.SyntheticRock(**kw))
    path = _expect(doc["spe10"], str, "rock.spe10")
    window = FieldWindow()
    if "window" in doc:
        win = _mapping(doc["window"], "rock.window")
        _check_keys(win, {f.name for f in fields(FieldWindow)}, "rock.window")
        window = FieldWindow(**{k: _expect(v, int, f"rock.window.{k}") for k, v in win.items()})
    return RockSource(spe10=path, window=window)


def parse_experiment_config(source: str) -> ExperimentConfig:
    """Parse a YAML experiment document strictly.

    ``case``, ``config`` and ``out`` are required; everything else has a
    default (30 trials, seed 42, reservoir and economic defaults of the
    selected case). Unknown keys are rejected.
    """
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {' '.join(str(exc).split())}") from None
    doc = _mapping({} if doc is None else doc, "<document>")
    allowed = {f.name for f in fields(ExperimentConfig)}
    _check_keys(doc, allowed, "")
    for key in REQUIRED:
        if doc.get(key) is None:
            raise ConfigError(f"{key}: missing required field")

    defaults = ExperimentConfig(case="1", config=1, out=".")
    kw: dict = {"case": _parse_case(doc["case"]), "config": _parse_de(doc["config"]),
                "out": _expect(doc["out"], str, "out")}
    for key in ("trials", "seed"):
        if key in doc:
            kw[key] = _expect(doc[key], int, key)
    if kw.get("trials", 1) < 1:
        raise ConfigError("trials: must be at least 1")
    if doc.get("jobs") is not None:
        kw["jobs"] = _expect(doc["jobs"], int, "jobs")
        if kw["jobs"] < 1:
            raise ConfigError("jobs: must be at least 1")
    for key in ("mini", "charge_infeasible"):
        if key in doc:
            kw[key] = _expect(doc[key], bool, key)
    if "shut_in" in doc:
        kw["shut_in"] = _expect(doc["shut_in"], str, "shut_in")
        if kw["shut_in"] not in ("well", "field"):
            raise ConfigError("shut_in: expected 'well' or 'field'")
    kw["rock"] = _parse_rock(doc.get("rock"))
    kw["fluid"] = _section(doc.get("fluid"), FluidProps, "fluid", defaults.fluid)
    kw["schedule"] = _section(doc.get("schedule"), ControlSchedule, "schedule", defaults.schedule)

    econ_doc = doc.get("economics")
    if econ_doc is not None:
        _check_keys(_mapping(econ_doc, "economics"), ("c_o", "c_w_disp", "c_w_inj", "water_cut_threshold"),
                    "economics")
    case_id = harness.CASES[kw["case"] if kw["case"].startswith("case") else f"case{kw['case']}"][0]
    r = {1: 0.10, 2: 0.0, 3: 0.10}[case_id]
    kw["economics"] = _section(econ_doc, EconomicParams, "economics", EconomicParams(r=r))

    n = kw["schedule"].n_intervals
    kw["injector_bhp"] = _bhp_list(doc.get("injector_bhp", 450.0), "injector_bhp", n)
    kw["producer_bhp"] = _bhp_list(doc.get("producer_bhp", 100.0), "producer_bhp", n)
    return ExperimentConfig(**kw)


def dump_experiment_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def validate_experiment(cfg: ExperimentConfig, base_dir: Path | None = None):
    """Check DE settings, case constraints and referenced data files without running.

    Returns the (CaseSpec, DEConfig) pair the run would use.
    """
    de = cfg.de_config()
    if cfg.rock is not None and cfg.rock.spe10 is not None:
        sidecar = Path(cfg.rock.spe10)
        if base_dir is not None and not sidecar.is_absolute():
            sidecar = base_dir / sidecar
        if not sidecar.is_file():
            raise ConfigError(f"rock.spe10: file not found: {sidecar}")
        meta = read_sidecar(sidecar)
        for key in ("perm", "porosity"):
            data = meta.get(key)
            if data is not None and not (sidecar.parent / data).is_file():
                raise ConfigError(f"rock.spe10: {key} file not found: {sidecar.parent / data}")
        try:
            cfg.rock.window.check_fits(tuple(meta["dims"]))
        except ValueError as exc:
            raise ConfigError(f"rock.window: {exc}") from None
        cfg = replace(cfg, rock=replace(cfg.rock, spe10=str(sidecar)))
    try:
        case = cfg.case_spec()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if de.budget < de.N:
        raise ConfigError("config: budget smaller than population")
    return case, de


# ---------------------------------------------------------------------------
# command line

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(message, 2)


def _fail(message: str, status: int):
    print(f"{PROG}: error: {' '.join(str(message).split())}", file=sys.stderr)
    raise SystemExit(status)


def _add_experiment_flags(p):
    p.add_argument("--config", help="YAML experiment configuration")
    p.add_argument("--case", help="1, 2, 3 or case1-mini etc.")
    p.add_argument("--de-config", type=int, help="DE configuration number 1..8")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="base seed; trial t uses seed + t")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes (default: available cores)")
    p.add_argument("--mini", action="store_true", default=None, help="use the desk-scale case variant")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Differential evolution well placement experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_experiment_flags(sub.add_parser("run", help="run a trial battery and export CSV results"))
    _add_experiment_flags(sub.add_parser("validate", help="check a configuration and its data files"))
    rep = sub.add_parser("report", help="recompute summary.csv from finals.csv")
    rep.add_argument("--out", required=True, help="directory holding finals.csv")
    gen = sub.add_parser("gen-field", help="write a synthetic field in SPE10 layout")
    gen.add_argument("--out", required=True)
    gen.add_argument("--stem", default="field")
    gen.add_argument("--seed", type=int, default=harness.MINI_ROCK.seed)
    gen.add_argument("--nx", type=int, default=60)
    gen.add_argument("--ny", type=int, default=50)
    gen.add_argument("--log-mean", type=float, default=harness.MINI_ROCK.log_mean)
    gen.add_argument("--log-sigma", type=float, default=harness.MINI_ROCK.log_sigma)
    gen.add_argument("--radius", type=int, default=harness.MINI_ROCK.smoothing_radius)
    return parser


def resolve_config(args) -> tuple[ExperimentConfig, Path | None]:
    """Experiment configuration from ``--config`` with command-line overrides."""
    doc: dict = {}
    base_dir = None
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"--config: cannot read {path}: {exc.strerror}") from None
        doc = yaml.safe_load(text) if text.strip() else {}
        parse_experiment_config(text)  # report file errors before overrides hide them
        base_dir = path.parent
    overrides = {"case": args.case, "config": args.de_config, "trials": args.trials, "seed": args.seed,
                 "out": args.out, "jobs": args.jobs, "mini": args.mini}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    cfg = parse_experiment_config(yaml.safe_dump(doc))
    return cfg, base_dir


def _cmd_validate(args) -> int:
    cfg, base = resolve_config(args)
    case, de = validate_experiment(cfg, base)
    print(f"ok: {case.name} {harness.config_label(de)} trials={cfg.trials} seed={cfg.seed}")
    return 0


def _cmd_run(args) -> int:
    cfg, base = resolve_config(args)
    case, de = validate_experiment(cfg, base)
    jobs = cfg.jobs or harness.default_jobs()
    summary = harness.run_trials(case, de, cfg.trials, cfg.seed, jobs=jobs)
    paths = harness.export_results(summary, cfg.out)
    st = summary.stats
    line = f"{case.name} {summary.config}: {cfg.trials} trials, {summary.failed_trials} failed"
    if st is not None:
        line += f", median NPV {harness.fmt(st.median)} USD"
    print(line)
    for p in paths.values():
        print(p)
    return 0


def _cmd_report(args) -> int:
    out = Path(args.out)
    finals = out / "finals.csv"
    try:
        text = finals.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {finals}: {exc.strerror}") from None
    (out / "summary.csv").write_text(harness.summary_csv_from_finals(text))
    print(out / "summary.csv")
    return 0


def _cmd_gen_field(args) -> int:
    grid = Grid(args.nx, args.ny)
    rock = generate_synthetic_field(args.seed, grid, args.log_mean, args.log_sigma, args.radius)
    sidecar = write_spe10_dataset(rock, Path(args.out), args.stem)
    print(sidecar)
    return 0


COMMANDS = {"run": _cmd_run, "validate": _cmd_validate, "report": _cmd_report, "gen-field": _cmd_gen_field}


def main(argv=None) -> int:
    """Run a command; returns the exit status (0 on success)."""
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigError, ConfigurationError) as exc:
        print(f"{PROG}: error: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure must surface as a diagnostic
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"{PROG}: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


def main_entry():  # console script
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
