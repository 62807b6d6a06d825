"""
Command-line front end.

    odeepc generate --out DIR [--small] [--config FILE] [--seed S] [--override k=v ...]
    odeepc run      --out DIR [--data DIR] [--mode odeepc|gradient-deepc] ...
    odeepc bench    --out DIR [--small] [--trials N]

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 persistence failure.
"""

import argparse
import configparser
import dataclasses
import logging
import sys
from pathlib import Path

from ._version import __version__
from .behavioral import load_dataset, save_dataset
from .errors import ConfigError, DivergenceError, GenerationError, PersistenceError
from .experiment import (
    DEFAULT_BENCH_SIZES,
    Dataset,
    ExperimentConfig,
    bench_products,
    bootstrap_dataset,
    emit_trace,
    run_controller,
    write_bench_csv,
)
from .hankel import is_persistently_exciting
from .plant import load_plant, save_plant

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_PERSISTENCE = 0, 2, 3, 4

# config-file sections; every ExperimentConfig field lives in exactly one
SECTIONS = {
    "plant": ("n_states", "m", "p", "drift_bound"),
    "data": ("t_ini", "horizon", "kappa", "excitation_amplitude", "pe_check", "pe_retries"),
    "solver": ("n_inner", "eps_g", "eps_nu", "alpha", "alpha_safety", "alpha_refresh",
               "q_weight", "r_weight", "input_bound", "output_bound", "kernel"),
    "experiment": ("total_steps", "reference_hold", "reference_low", "reference_high",
                   "feedback", "hankel_update", "halt_threshold",
                   "seed_system", "seed_drift", "seed_reference", "seed_excitation"),
}
# a config file must pin the controller tuple; everything else has a default
REQUIRED_KEYS = ("n_inner", "t_ini", "horizon", "kappa", "eps_g")
_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
VALID_KEYS = tuple(sorted(_FIELDS))
# default-None fields that accept "auto"/"none"
_OPTIONAL = {"eps_nu", "alpha", "excitation_amplitude"}

log = logging.getLogger("odeepc")


def _valid_key_list():
    return ", ".join(VALID_KEYS)


def parse_value(key, text):
    """Convert ``text`` to the type of config field ``key``."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown configuration key {key!r}; valid keys: {_valid_key_list()}")
    text = text.strip()
    default = _FIELDS[key].default
    try:
        if key in _OPTIONAL and text.lower() in ("auto", "none", ""):
            return None
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or key in _OPTIONAL:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"invalid value {text!r} for key {key!r}") from None


def read_config_file(path):
    """Parse an INI file into ``{key: value}``; checks sections, keys and required keys."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]; valid sections: {', '.join(SECTIONS)}")
        for key, text in parser.items(section):
            if key not in SECTIONS[section]:
                where = next((s for s, keys in SECTIONS.items() if key in keys), None)
                hint = f" (belongs in [{where}])" if where else ""
                raise ConfigError(f"unknown key {key!r} in [{section}]{hint}; valid keys: {_valid_key_list()}")
            values[key] = parse_value(key, text)
    missing = [k for k in REQUIRED_KEYS if k not in values]
    if missing:
        raise ConfigError(f"missing required configuration key(s): {', '.join(missing)}")
    return values


def parse_overrides(items):
    values = {}
    for item in items or ():
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key = key.strip()
        values[key] = parse_value(key, text)
    return values


def resolve_config(args, base=None):
    """Profile (or ``base``) <- config file <- ``--seed`` <- ``--override``."""
    if base is not None:
        values = dict(base)
    else:
        values = ExperimentConfig.small().to_dict() if args.small else {}
    if args.config:
        values.update(read_config_file(args.config))
    if args.seed is not None:
        for k in ("seed_system", "seed_drift", "seed_reference", "seed_excitation"):
            values[k] = args.seed
    values.update(parse_overrides(args.override))
    try:
        return ExperimentConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def write_config_file(path, cfg):
    """Effective configuration as an INI file accepted by ``--config``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    d = cfg.to_dict()
    for section, keys in SECTIONS.items():
        parser[section] = {k: ("auto" if d[k] is None else str(d[k])) for k in keys}
    with open(path, "w") as fh:
        parser.write(fh)


def _lineage(cfg):
    return {"seed_system": cfg.seed_system, "seed_excitation": cfg.seed_excitation,
            "n_states": cfg.n_states, "version": __version__}


def cmd_generate(args):
    cfg = resolve_config(args)
    out = Path(args.out)
    dataset = bootstrap_dataset(cfg)
    save_dataset(out, dataset.inputs, dataset.outputs, dataset.manifest(cfg))
    save_plant(out / "plant.json", dataset.plant, _lineage(cfg))
    write_config_file(out / "config.ini", cfg)
    r = dataset.report
    print(f"dataset: T={dataset.inputs.length} kappa={cfg.kappa} rank={r.rank}/{r.rows} "
          f"sigma_min={r.sigma_min:.3e} attempts={dataset.attempts} -> {out}")
    return EXIT_OK


def _load_dataset_dir(path, cfg):
    inputs, outputs, manifest = load_dataset(path)
    plant, _ = load_plant(Path(path) / "plant.json")
    if (plant.m, plant.p) != (cfg.m, cfg.p) or inputs.length != cfg.dataset_length:
        raise ConfigError(
            f"dataset in {path} (m={plant.m}, p={plant.p}, T={inputs.length}) does not match the "
            f"configuration (m={cfg.m}, p={cfg.p}, T={cfg.dataset_length})")
    report = is_persistently_exciting(inputs, cfg.t_tot)
    return Dataset(plant, inputs, outputs, report, manifest.get("excitation_attempts", 1))


def cmd_run(args):
    base = None
    if args.data and not args.config:
        _, _, manifest = load_dataset(args.data)
        base = manifest.get("config")
    cfg = resolve_config(args, base)
    dataset = _load_dataset_dir(args.data, cfg) if args.data else None
    hankel_update = cfg.hankel_update if args.mode == "odeepc" else False
    trace = run_controller(cfg, hankel_update=hankel_update, dataset=dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"mode": args.mode, "config": cfg.to_dict(),
                "seeds": {k: getattr(cfg, k) for k in ("seed_system", "seed_drift",
                                                      "seed_reference", "seed_excitation")},
                "data": str(args.data) if args.data else None}
    emit_trace(trace, out / "trace.csv", manifest)
    write_config_file(out / "config.ini", cfg)
    last = len(trace) - 1
    if last >= 0:
        print(f"{args.mode}: {trace.status} after {len(trace)} iterations (t={trace.t[last]}), "
              f"final cost={trace.cost[last]:.4e} violation={trace.violation[last]:.4e}")
    else:
        print(f"{args.mode}: {trace.status}")
    if trace.status == "diverged":
        print(f"divergence: {trace.message}", file=sys.stderr)
        return EXIT_DIVERGED
    if trace.status == "persistence_failure":
        print(f"persistence failure: {trace.message}", file=sys.stderr)
        return EXIT_PERSISTENCE
    return EXIT_OK


def cmd_bench(args):
    sizes = ((1, 32, 64), (2, 14, 40)) if args.small else DEFAULT_BENCH_SIZES
    rows = bench_products(sizes, trials=args.trials)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bench_csv(rows, out / "bench.csv")
    print(f"{'d':>3} {'L':>5} {'kappa':>6} {'fast_ms':>10} {'dense_ms':>10} {'speedup':>8}")
    for r in rows:
        print(f"{r.d:>3} {r.L:>5} {r.kappa:>6} {r.fast_ms:>10.4f} {r.dense_ms:>10.4f} {r.speedup:>8.2f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="odeepc", description="Online data-enabled predictive control")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI file with [plant], [data], [solver], [experiment] sections")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="sets all four seeds")
        p.add_argument("--small", action="store_true", help="small profile (n=2, m=p=1, N=10)")
        p.add_argument("--override", action="append", metavar="KEY=VALUE", default=[],
                       help="override one configuration key (repeatable)")

    common(sub.add_parser("generate", help="generate a plant and a persistently exciting dataset"))
    run = sub.add_parser("run", help="run a controller in closed loop")
    common(run)
    run.add_argument("--mode", choices=("odeepc", "gradient-deepc"), default="odeepc")
    run.add_argument("--data", help="dataset directory written by 'generate'")
    bench = sub.add_parser("bench", help="time fast versus dense Hankel products")
    common(bench)
    bench.add_argument("--trials", type=int, default=7)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"generate": cmd_generate, "run": cmd_run, "bench": cmd_bench}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PersistenceError as exc:
        print(f"persistence failure: {exc}", file=sys.stderr)
        return EXIT_PERSISTENCE
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except GenerationError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
