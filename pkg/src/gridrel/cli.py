"""Command-line entry point: ``gridrel <command> --config cfg.json [--set key=value] ...``.

The config is a JSON object.  Exactly one limit-state source is given, either
``network`` (a MATPOWER ``.m`` or canonical ``.json`` path, relative paths
resolved against the config file, or ``builtin:case30``) together with a loss
``threshold``, or ``toy`` with ``weights`` and ``threshold``.  Component
failure probabilities come from ``p`` (scalar or per-component list).
Sections ``anr``, ``cascade``, ``subset``, ``mcs`` and ``passive`` hold the
settings of the corresponding estimators.

Exit codes: 0 success, 2 configuration error, 3 input-data error,
4 non-convergence (population exhausted, subset levels exceeded).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .active import AnrConfig, Population, RunResult, run, write_history_csv
from .bart import BartHyperparams, make_grid
from .cascade import CascadeConfig, run_cascade, validate_base_case
from .estimators import (SubsetConfig, crude_mcs, passive_surrogate_run, relative_error,
                         subset_simulation, subset_sweep, write_passive_csv, write_sweep_csv)
from .limitstate import (CachedEvaluator, DimensionError, FailureModel, GridLimitState,
                         exact_pf_enumeration, linear_toy_limit_state, sample_population)
from .netmodel import NetworkError, builtin_case, load_network

log = logging.getLogger("gridrel")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGED = 0, 2, 3, 4
COMMANDS = ("import", "cascade", "mcs", "subset", "anr", "passive", "oracle")


class ConfigError(Exception):
    pass


class InputDataError(Exception):
    pass


# -- config handling ------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, pairs) -> dict:
    """Apply ``a.b.c=value`` overrides; values are read as JSON when possible."""
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key}: {part} is not a section")
        node[parts[-1]] = _parse_value(value)
    return cfg


def load_config(path, overrides=(), seed=None) -> dict:
    cfg: dict = {}
    if path is not None:
        try:
            cfg = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        cfg["_base_dir"] = str(Path(path).resolve().parent)
    apply_overrides(cfg, overrides)
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    return cfg


def _section(cfg, name, cls, drop=()):
    raw = dict(cfg.get(name) or {})
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known - set(drop)
    if unknown:
        raise ConfigError(f"unknown {name} settings: {', '.join(sorted(unknown))}")
    return {k: v for k, v in raw.items() if k not in drop}


def _resolve_path(cfg, value) -> Path:
    p = Path(value)
    if not p.is_absolute() and "_base_dir" in cfg:
        p = Path(cfg["_base_dir"]) / p
    return p


def read_network(cfg, value):
    try:
        if isinstance(value, str) and value.startswith("builtin:"):
            return builtin_case(value.split(":", 1)[1])
        return load_network(_resolve_path(cfg, value))
    except (FileNotFoundError, IsADirectoryError) as exc:
        raise InputDataError(f"cannot read network: {exc}")
    except NetworkError as exc:
        raise InputDataError(str(exc))


class Problem:
    """Limit state, failure model and estimator settings resolved from a config."""

    def __init__(self, cfg: dict, threads: int = 1):
        self.cfg = cfg
        self.seed = int(cfg.get("seed", 0))
        has_net, has_toy = "network" in cfg, "toy" in cfg
        if has_net == has_toy:
            raise ConfigError("specify exactly one of 'network' or 'toy'")
        try:
            self.cascade = CascadeConfig(**_section(cfg, "cascade", CascadeConfig))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cascade: {exc}")
        if has_net:
            if "threshold" not in cfg:
                raise ConfigError("a network limit state needs 'threshold'")
            self.network = read_network(cfg, cfg["network"])
            try:
                validate_base_case(self.network)
            except ValueError as exc:
                raise ConfigError(str(exc))
            self.ls = GridLimitState(self.network, float(cfg["threshold"]), self.cascade)
        else:
            toy = cfg["toy"]
            try:
                self.ls = linear_toy_limit_state(toy["weights"], toy["threshold"])
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"toy needs 'weights' and 'threshold' ({exc})")
            self.network = None
        n = self.ls.n
        p = cfg.get("p", 0.125)
        try:
            self.fm = FailureModel(tuple(p) if isinstance(p, list) else (float(p),) * n)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"p: {exc}")
        if self.fm.n != n:
            raise ConfigError(f"p has {self.fm.n} entries, the limit state has {n} components")
        self.evaluator = CachedEvaluator(self.ls, threads=threads)

    def anr_config(self) -> AnrConfig:
        raw = _section(self.cfg, "anr", AnrConfig, drop=("seed",))
        grid = raw.pop("grid", None)
        if isinstance(grid, dict):
            raw["grid"] = make_grid(**{k: tuple(v) if isinstance(v, list) else v
                                       for k, v in grid.items()})
        elif grid is not None:
            raw["grid"] = tuple(BartHyperparams(**g) for g in grid)
        try:
            return AnrConfig(seed=self.seed, **raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"anr: {exc}")

    def subset_config(self) -> dict:
        return _section(self.cfg, "subset", SubsetConfig,
                        drop=("sweep", "seeds", "p0s", "nls", "reference_pf"))


def effective_config(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def header(cfg: dict, command: str) -> dict:
    return {"toolkit": f"gridrel {__version__}", "command": command,
            "config": effective_config(cfg)}


def header_lines(cfg: dict, command: str) -> list[str]:
    return [f"gridrel {__version__} {command}",
            "config " + json.dumps(effective_config(cfg), sort_keys=True)]


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, BartHyperparams):
        return asdict(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _read_json(path: Path):
    return json.loads(path.read_text()) if path.exists() else None


# -- commands ------------------------------------------------------------------

def cmd_import(args, cfg) -> int:
    source = args.case or cfg.get("network")
    if source is None:
        raise ConfigError("import needs a case path (positional or 'network' in the config)")
    net = read_network(cfg, source)
    out = Path(args.out) if args.out else Path("network.json")
    if out.suffix.lower() != ".json":
        out = out / "network.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(net.to_json() + "\n")
    print(json.dumps({"buses": net.n_buses, "generators": len(net.generators),
                      "branches": net.n_branches, "out": str(out)}))
    return EXIT_OK


def _parse_state(text: str, n: int) -> np.ndarray:
    bits = [c for c in text if c in "01"]
    if len(bits) != n or len(bits) != len(text.replace(",", "").replace(" ", "")):
        raise ConfigError(f"state must be {n} characters of 0/1")
    return np.array([int(c) for c in bits], dtype=np.uint8)


def cmd_cascade(args, cfg) -> int:
    prob = Problem(cfg, args.threads)
    if prob.network is None:
        raise ConfigError("cascade needs a 'network' limit state")
    state = args.state if args.state is not None else cfg.get("state")
    if state is not None:
        x = _parse_state(str(state), prob.network.n_branches)
        source = {"state": "".join(map(str, x))}
    else:
        idx = int(args.sample if args.sample is not None else cfg.get("sample", 0))
        x = sample_population(1, prob.fm, prob.seed, start=idx)[0]
        source = {"sample_index": idx}
    outcome = run_cascade(prob.network, x, prob.cascade)
    doc = {"header": header(cfg, "cascade"), **source, "bits": "".join(map(str, x)),
           "outcome": outcome.to_dict(), "g": prob.ls.threshold - outcome.loss_fraction}
    if args.out:
        _write_json(Path(args.out) / "cascade_result.json", doc)
    print(json.dumps(doc["outcome"], sort_keys=True))
    return EXIT_OK


def _out_dir(args) -> Path:
    out = Path(args.out or "results")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _mcs_n(prob: Problem) -> int:
    mcs = prob.cfg.get("mcs") or {}
    if "n" in mcs:
        return int(mcs["n"])
    return prob.anr_config().population_size()


def cmd_mcs(args, cfg) -> int:
    prob = Problem(cfg, args.threads)
    out = _out_dir(args)
    n = _mcs_n(prob)
    res = crude_mcs(prob.evaluator, prob.fm, n, prob.seed)
    doc = {"header": header(cfg, "mcs"), **res.to_dict()}
    _write_json(out / "mcs_result.json", doc)
    anr = _read_json(out / "anr_result.json")
    if anr is not None and res.failures:
        anr["relative_error"] = relative_error(anr["pf"], res.pf)
        anr["reference_pf"] = res.pf
        _write_json(out / "anr_result.json", anr)
    print(json.dumps(res.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_anr(args, cfg) -> int:
    prob = Problem(cfg, args.threads)
    out = _out_dir(args)
    acfg = prob.anr_config()
    res: RunResult = run(prob.evaluator, prob.fm, acfg)
    doc = {"header": header(cfg, "anr"), **res.to_dict()}
    mcs = _read_json(out / "mcs_result.json")
    if mcs is not None and mcs.get("failures"):
        doc["relative_error"] = relative_error(res.pf, mcs["pf"])
        doc["reference_pf"] = mcs["pf"]
    _write_json(out / "anr_result.json", doc)
    write_history_csv(out / "anr_history.csv", res.history, header_lines(cfg, "anr"))
    if res.ensemble is not None and (cfg.get("anr_output") or {}).get("save_ensemble"):
        res.ensemble.save(out / "anr_ensemble.json")
    print(json.dumps(res.to_dict(), sort_keys=True, default=_json_default))
    return EXIT_NONCONVERGED if res.exhausted else EXIT_OK


def cmd_passive(args, cfg) -> int:
    prob = Problem(cfg, args.threads)
    out = _out_dir(args)
    acfg = prob.anr_config()
    pcfg = cfg.get("passive") or {}
    schedule = pcfg.get("schedule")
    if schedule is None:
        hist = out / "anr_history.csv"
        if not hist.exists():
            raise ConfigError("passive needs 'passive.schedule' or an anr_history.csv in --out")
        calls = [int(r["calls"]) for r in _read_csv_rows(hist)]
        schedule = list(np.diff(calls))
    pop = Population(prob.fm, prob.seed, acfg.population_size())
    res = passive_surrogate_run(prob.evaluator, prob.fm, pop, schedule, acfg)
    doc = {"header": header(cfg, "passive"), **res.to_dict()}
    mcs = _read_json(out / "mcs_result.json")
    if mcs is not None and mcs.get("failures"):
        doc["relative_error"] = relative_error(res.pf, mcs["pf"])
        doc["reference_pf"] = mcs["pf"]
    _write_json(out / "passive_result.json", doc)
    write_passive_csv(out / "passive_history.csv", res.history, header_lines(cfg, "passive"))
    print(json.dumps(res.to_dict(), sort_keys=True))
    return EXIT_OK


def _read_csv_rows(path: Path):
    import csv
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def cmd_subset(args, cfg) -> int:
    prob = Problem(cfg, args.threads)
    out = _out_dir(args)
    scfg = prob.cfg.get("subset") or {}
    base = prob.subset_config()
    if scfg.get("sweep"):
        seeds = scfg.get("seeds", [prob.seed])
        ref = scfg.get("reference_pf")
        mcs = _read_json(out / "mcs_result.json")
        if ref is None and mcs is not None and mcs.get("failures"):
            ref = mcs["pf"]
        kw = {}
        if "p0s" in scfg:
            kw["p0s"] = tuple(scfg["p0s"])
        if "nls" in scfg:
            kw["nls"] = tuple(scfg["nls"])
        rows = subset_sweep(prob.evaluator, prob.fm, seeds, ref,
                            max_levels=base.get("max_levels", 20), **kw)
        write_sweep_csv(out / "subset_sweep.csv", rows, header_lines(cfg, "subset"))
        print(json.dumps({"rows": len(rows)}))
        return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NONCONVERGED
    try:
        sc = SubsetConfig(seed=prob.seed, **{k: v for k, v in base.items() if k != "seed"})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"subset: {exc}")
    res = subset_simulation(prob.evaluator, prob.fm, sc)
    doc = {"header": header(cfg, "subset"), **res.to_dict()}
    _write_json(out / "subset_result.json", doc)
    print(json.dumps(res.to_dict(), sort_keys=True))
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_oracle(args, cfg) -> int:
    prob = Problem(cfg, args.threads)
    try:
        pf = exact_pf_enumeration(prob.ls, prob.fm)
    except DimensionError as exc:
        raise ConfigError(str(exc))
    doc = {"header": header(cfg, "oracle"), "pf": pf, "n_components": prob.fm.n}
    if args.out:
        _write_json(Path(args.out) / "oracle_result.json", doc)
    print(json.dumps({"pf": pf}))
    return EXIT_OK


HANDLERS = {"import": cmd_import, "cascade": cmd_cascade, "mcs": cmd_mcs,
            "subset": cmd_subset, "anr": cmd_anr, "passive": cmd_passive,
            "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridrel", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("case", nargs="?", help="case file for 'import'")
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config entry (dotted keys for sections)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", help="output directory (a .json path for 'import')")
    ap.add_argument("--state", help="0/1 component state for 'cascade'")
    ap.add_argument("--sample", type=int, help="population sample index for 'cascade'")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--version", action="version", version=f"gridrel {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.set, args.seed)
        return HANDLERS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputDataError as exc:
        print(f"input data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
