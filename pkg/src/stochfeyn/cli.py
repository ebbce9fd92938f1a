"""Batch command line: parse a sectioned key=value config and run one experiment suite.

Config files use INI syntax (``[section]`` headers, ``key = value`` lines).
Unknown sections and keys are rejected.  Precedence, lowest to highest:
built-in defaults, the config file, positional ``key=value`` overrides,
explicit flags (``--seed``, ``--workers``, ``--out``, ``--experiment``).

Exit status: 0 when every check passes, 1 when a check fails, 2 on a config
error, 3 when numerical blow-ups exceed the exclusion policy.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import EnsembleError, ExperimentSpec
from .experiments import SUITES, ExperimentConfigError
from .noise import refined
from .reference import SCHEMES, BlowUpError
from .symbols import BUILTIN_PARAMS, COMMON_PARAMS, SymbolError

log = logging.getLogger("stochfeyn")

CSV_COLUMNS = ("experiment", "n", "M", "seed", "metric_name", "value", "stderr")
FORMATS = ("csv", "json")
VERBOSITY = ("debug", "info", "warning", "error")


class ConfigError(ValueError):
    pass


def _int(s):
    return int(s)


def _float(s):
    x = float(s)
    if not math.isfinite(x):
        raise ValueError("must be finite")
    return x


def _int_list(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _float_list(s):
    return tuple(_float(x) for x in s.split(",") if x.strip())


def _bool(s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _choice(options):
    def parse(s):
        if s not in options:
            raise ValueError(f"allowed values: {', '.join(options)}")
        return s
    return parse


def _formats(s):
    items = tuple(x.strip() for x in s.split(",") if x.strip())
    bad = [x for x in items if x not in FORMATS]
    if bad or not items:
        raise ValueError(f"allowed values: {', '.join(FORMATS)}")
    return items


# section -> key -> (parser, default as text)
SCHEMA = {
    "run": {
        "experiment": (_choice(tuple(SUITES)), "convergence"),
        "seed": (_int, "42"),
        "workers": (_int, "1"),
        "out": (str, "results"),
        "formats": (_formats, "csv,json"),
        "verbosity": (_choice(VERBOSITY), "info"),
        "sidecar": (_bool, "false"),
    },
    "model": {
        "symbol": (_choice(tuple(BUILTIN_PARAMS)), "gaussian_well"),
    },
    "grid": {"L": (_float, "40"), "N": (_int, "512")},
    "state": {"center": (_float, "0"), "width": (_float, "1"), "momentum": (_float, "0")},
    "time": {"t": (_float, "1"), "n_list": (_int_list, "8,16,32,64"), "v_list": (_float_list, "")},
    "reference": {"substeps": (_int, "16"), "scheme": (_choice(SCHEMES), "exponential-euler")},
    "ensemble": {"M": (_int, "100")},
}


@dataclass
class Config:
    experiment: str
    spec: ExperimentSpec
    out: Path
    formats: tuple
    verbosity: str
    workers: int
    v_list: tuple = ()
    sidecar: bool = False
    sections: dict = field(default_factory=dict)


def _allowed_model_keys(symbol):
    return ("symbol",) + tuple(BUILTIN_PARAMS.get(symbol, ())) + COMMON_PARAMS


def _locate(key: str, raw: dict) -> tuple[str, str]:
    """Resolve ``section.key`` or a bare key that belongs to exactly one section."""
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SCHEMA:
            raise ConfigError(f"unknown section {section!r}; allowed: {', '.join(SCHEMA)}")
        return section, name
    owners = [s for s, keys in SCHEMA.items() if key in keys]
    symbol = raw.get("model", {}).get("symbol", SCHEMA["model"]["symbol"][1])
    if key in _allowed_model_keys(symbol) and "model" not in owners:
        owners.append("model")
    if len(owners) == 1:
        return owners[0], key
    if not owners:
        allowed = sorted({k for keys in SCHEMA.values() for k in keys} | set(_allowed_model_keys(symbol)))
        raise ConfigError(f"unknown key {key!r}; allowed: {', '.join(allowed)}")
    raise ConfigError(f"key {key!r} is ambiguous; qualify it as one of "
                      + ", ".join(f"{s}.{key}" for s in owners))


def _read_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    if path.suffix == ".json":
        # a manifest from a previous run
        try:
            data = json.loads(path.read_text())
            return {s: dict(kv) for s, kv in data["config"].items()}
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: not a run manifest ({exc})") from exc
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return {s: dict(parser[s]) for s in parser.sections()}


def parse_config(path=None, overrides=(), flags: dict | None = None) -> Config:
    """Merge defaults, an optional config file, ``key=value`` overrides and flags into a Config."""
    raw: dict = {}
    if path is not None:
        for section, kv in _read_file(path).items():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]; allowed: {', '.join(SCHEMA)}")
            raw.setdefault(section, {}).update(kv)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = (x.strip() for x in item.split("=", 1))
        section, name = _locate(key, raw)
        raw.setdefault(section, {})[name] = value
    for key, value in (flags or {}).items():
        if value is not None:
            raw.setdefault("run", {})[key] = str(value)

    symbol = raw.get("model", {}).get("symbol", SCHEMA["model"]["symbol"][1])
    if symbol not in BUILTIN_PARAMS:
        raise ConfigError(f"unknown symbol {symbol!r} for key 'symbol'; allowed: {', '.join(BUILTIN_PARAMS)}")
    values: dict = {}
    sections: dict = {}
    for section, keys in SCHEMA.items():
        given = dict(raw.get(section, {}))
        schema = dict(keys)
        if section == "model":
            schema.update({k: (_float, None) for k in _allowed_model_keys(symbol) if k != "symbol"})
        for key in given:
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{section}]; allowed: {', '.join(schema)}")
        parsed, echo = {}, {}
        for key, (parse, default) in schema.items():
            text = given.get(key, default)
            if text is None:
                continue
            echo[key] = text
            try:
                parsed[key] = parse(text)
            except ValueError as exc:
                raise ConfigError(f"bad value {text!r} for key {key!r} in [{section}]: {exc}") from exc
        values[section] = parsed
        sections[section] = echo

    run, model = values["run"], values["model"]
    params = {k: v for k, v in model.items() if k != "symbol"}
    try:
        spec = ExperimentSpec(
            symbol=model["symbol"], symbol_params=params,
            L=values["grid"]["L"], N=values["grid"]["N"],
            psi0={"kind": "gaussian", **values["state"]},
            t=values["time"]["t"], n_list=values["time"]["n_list"],
            ref_substeps=values["reference"]["substeps"], scheme=values["reference"]["scheme"],
            M=values["ensemble"]["M"], seed=run["seed"],
        )
        spec.model()
        spec.grid()
    except (ValueError, SymbolError) as exc:
        raise ConfigError(str(exc)) from exc
    if run["workers"] < 0:
        raise ConfigError("key 'workers' must be >= 0 (0 = one per CPU)")
    if run["seed"] < 0:
        raise ConfigError("key 'seed' must be a non-negative integer")
    return Config(experiment=run["experiment"], spec=spec, out=Path(run["out"]), formats=run["formats"],
                  verbosity=run["verbosity"], workers=run["workers"], v_list=values["time"]["v_list"],
                  sidecar=run["sidecar"], sections=sections)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, cfg: Config, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for n, metric, value, stderr in rows:
            w.writerow([cfg.experiment, _fmt(n), cfg.spec.M, cfg.spec.seed, metric, _fmt(value), _fmt(stderr)])


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _dump_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, default=_json_default) + "\n", encoding="utf-8")


def run_experiment(cfg: Config) -> int:
    """Run the configured suite, write artifacts into ``cfg.out`` and return the exit status."""
    t0 = time.perf_counter()
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
        if not os.access(cfg.out, os.W_OK):
            raise OSError("not writable")
    except OSError as exc:
        log.error("output directory %s is unusable: %s", cfg.out, exc)
        return 2
    status, outcome, error = 0, None, None
    try:
        outcome = SUITES[cfg.experiment](cfg)
        status = 0 if outcome.passed else 1
    except (ExperimentConfigError, SymbolError) as exc:
        status, error = 2, str(exc)
    except (BlowUpError, EnsembleError) as exc:
        status, error = 3, str(exc)
    if error:
        log.error("%s", error)
    if outcome is not None:
        for c in outcome.checks:
            print(f"[{'PASS' if c.passed else 'FAIL'}] {cfg.experiment}.{c.name}: {c.detail}")
        if "csv" in cfg.formats:
            write_csv(cfg.out / "results.csv", cfg, outcome.rows)
        if "json" in cfg.formats:
            _dump_json(cfg.out / "results.json", {
                "experiment": cfg.experiment, "passed": outcome.passed,
                "checks": [c.__dict__ for c in outcome.checks], "results": outcome.payload})
    if cfg.sidecar:
        sp = cfg.spec
        refined(sp.t, sp.n_list[0], sp.n_ref, sp.seed, 0).dump(cfg.out / "noise_traj0.bin")
    _dump_json(cfg.out / "manifest.json", {
        "config": cfg.sections, "experiment": cfg.experiment, "version": __version__,
        "python": platform.python_version(), "numpy": np.__version__,
        "wall_time": time.perf_counter() - t0, "exit_status": status, "error": error})
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochfeyn", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="INI config file, or a manifest.json from a previous run")
    ap.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    ap.add_argument("--workers", type=int, help="worker threads, 0 = one per CPU")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--experiment", help=f"suite name: {', '.join(SUITES)}")
    ap.add_argument("overrides", nargs="*", metavar="key=value",
                    help="config overrides, e.g. M=1000 or model.mu1=0.25")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    flags = {"seed": args.seed, "workers": args.workers, "out": args.out, "experiment": args.experiment}
    try:
        cfg = parse_config(args.config, args.overrides, flags)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=cfg.verbosity.upper(), format="%(levelname)s %(name)s: %(message)s")
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
