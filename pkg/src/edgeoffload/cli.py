"""Command-line driver. Every option is a flat config key; ``--config`` loads a
TOML file of those keys and explicit flags override it."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .core import InputError, NaivePolicy, PolicyTable, reduce_bucket
from .datasets import (SynthParams, dataset_digest, ingest, read_jsonl, synthesize,
                       write_csv)
from .experiments import (DEFAULT_DEPTHS, DEFAULT_RATES, ExperimentSpec, bucket_grid,
                          kfold_eval, perturbation_study)
from .mdp import DEFAULT_GAMMA, NonConvergenceError, PolicySolver, build_fg, naive_threshold
from .mdp import solve_policy
from .metric import MetricMap, apply_metric_map, fit_metric_map
from .multi import (DEFAULT_B_GRID, DEFAULT_R_GRID, STRATEGIES, MultiConfig,
                    grid_search_oversubscription, simulate_multi)
from .sim import SimConfig, odds_csv, offload_odds, simulate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

COMMANDS = ("gen", "ingest-check", "fit-metric", "solve", "simulate", "multi-sim",
            "grid-search", "eval", "perturb")


def _csv_list(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InputError(f"not a boolean: {text!r}")


# key -> (type, default, help). Rationals stay strings until parsed exactly.
KEYS = {
    "data": (str, None, "dataset path"),
    "mode": (str, "csv", "dataset format: csv or jsonl"),
    "loss": (str, "top5", "loss kind for raw data: top1, top5 or rank"),
    "calibrate": (_bool, False, "temperature-calibrate raw weak outputs"),
    "output": (str, "out", "output directory"),
    "seed": (int, 0, "root seed"),
    "gamma": (float, DEFAULT_GAMMA, "discount factor"),
    "r": (str, "1/10", "token rate (rational)"),
    "b": (str, "2", "bucket depth (rational)"),
    "rates": (_csv_list, [str(x) for x in DEFAULT_RATES], "comma-separated rates for eval"),
    "depths": (_csv_list, [str(x) for x in DEFAULT_DEPTHS], "comma-separated depths for eval"),
    "folds": (int, 3, "number of cross-validation folds"),
    "sequences": (int, 100, "simulated input sequences"),
    "length": (int, 100_000, "draws per sequence"),
    "policy": (str, "mdp", "single-device policy: mdp or naive"),
    "policy_file": (str, None, "previously solved policy JSON"),
    "metric_map": (str, None, "previously fitted metric map JSON"),
    "bins": (int, 50, "metric bins for the offload-odds CSV"),
    "n_devices": (int, 2, "devices behind the switch"),
    "r_tot": (str, "1/5", "aggregate token rate"),
    "b_tot": (str, "2", "aggregate bucket depth"),
    "strategy": (str, "individual", "one of " + ", ".join(STRATEGIES)),
    "r_prime": (str, None, "hierarchical device rate override"),
    "b_prime": (str, None, "hierarchical device depth override"),
    "r_grid": (_csv_list, [str(x) for x in DEFAULT_R_GRID], "grid-search device rates"),
    "b_grid": (_csv_list, [str(x) for x in DEFAULT_B_GRID], "grid-search device depths"),
    "perturb_fraction": (float, None, "fraction of training samples to remove"),
    "perturb_side": (str, None, "remove the highest or lowest metrics"),
    "n": (int, 6000, "synthetic sample count"),
}
for _f in fields(SynthParams):
    _conv = (lambda t: tuple(float(x) for x in _csv_list(t))) if _f.type == "tuple" else float
    _default = _f.default if not isinstance(_f.default, tuple) else list(_f.default)
    KEYS["synth_" + _f.name] = (_conv, _default, f"synthetic fixture {_f.name}")


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None
    out = {}
    for key, value in raw.items():
        if key not in KEYS:
            raise InputError(f"{path}: unknown config key {key!r}")
        if isinstance(value, dict):
            raise InputError(f"{path}: config is flat; {key!r} must not be a table")
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        out[key] = KEYS[key][0](value) if not isinstance(value, bool) else value
    return out


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors (exit 1); exit 2 is reserved for non-convergence
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edgeoffload", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command",
                                parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat-key TOML config file")
        for key, (conv, _default, help_) in KEYS.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=conv,
                           default=None, help=help_)
    return parser


def resolve(args) -> dict:
    cfg = {k: v[1] for k, v in KEYS.items()}
    if args.config:
        cfg.update(load_config(args.config))
    for key in KEYS:
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    return cfg


def _synth_params(cfg) -> SynthParams:
    return SynthParams(**{f.name: (tuple(cfg["synth_" + f.name])
                                   if isinstance(cfg["synth_" + f.name], list)
                                   else cfg["synth_" + f.name])
                          for f in fields(SynthParams)})


def _load(cfg):
    if not cfg["data"]:
        raise InputError("no dataset given (set 'data')")
    return ingest(cfg["data"], cfg["mode"], cfg["loss"], cfg["calibrate"])


def _with_metrics(cfg):
    data, T = _load(cfg)
    if cfg["metric_map"]:
        mmap = MetricMap.from_json(Path(cfg["metric_map"]).read_text(encoding="utf-8"))
    else:
        mmap = fit_metric_map(data, seed=cfg["seed"], temperature=T)
    return apply_metric_map(data, mmap), mmap


def _out(cfg) -> Path:
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8")
    print(path)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_gen(cfg):
    data = synthesize(_synth_params(cfg), cfg["n"], cfg["seed"])
    _write(_out(cfg) / "dataset.csv", write_csv(data))


def cmd_ingest_check(cfg):
    data, T = _load(cfg)
    n = len(data)
    print(_dump({
        "samples": n,
        "temperature": T,
        "sha256": dataset_digest(data),
        "mean_loss_weak": float(data.loss_weak.mean()),
        "mean_loss_strong": float(data.loss_strong.mean()),
        "mean_reward": float(data.reward.mean()),
    }), end="")


def cmd_fit_metric(cfg):
    _data, mmap = _with_metrics(cfg)
    _write(_out(cfg) / "metric_map.json", mmap.to_json())


def _policy(cfg, train):
    bucket = reduce_bucket(cfg["r"], cfg["b"])
    if cfg["policy"] == "naive":
        return NaivePolicy(naive_threshold(train, cfg["r"]), bucket)
    if cfg["policy"] != "mdp":
        raise InputError(f"policy must be 'mdp' or 'naive', got {cfg['policy']!r}")
    if cfg["policy_file"]:
        table = PolicyTable.from_json(Path(cfg["policy_file"]).read_text(encoding="utf-8"))
        if table.bucket != bucket:
            raise InputError("policy_file was solved for a different bucket")
        return table
    return solve_policy(build_fg(train), bucket, cfg["gamma"])


def cmd_solve(cfg):
    data, _ = _with_metrics(cfg)
    table = solve_policy(build_fg(data), reduce_bucket(cfg["r"], cfg["b"]), cfg["gamma"])
    _write(_out(cfg) / "policy.json", table.to_json())


def cmd_simulate(cfg):
    data, _ = _with_metrics(cfg)
    policy = _policy(cfg, data)
    sc = SimConfig(cfg["sequences"], cfg["length"], cfg["seed"], cfg["policy"])
    report = simulate(data, policy, sc)
    out = _out(cfg)
    _write(out / "simulate.json", _dump(report.to_dict()))
    _write(out / "token_histogram.csv", report.histogram_csv())
    _write(out / "offload_odds.csv", odds_csv(*offload_odds(data, policy, sc, cfg["bins"])))


def _multi_config(cfg, strategy=None) -> MultiConfig:
    override = None
    if cfg["r_prime"] is not None or cfg["b_prime"] is not None:
        if cfg["r_prime"] is None or cfg["b_prime"] is None:
            raise InputError("r_prime and b_prime must be given together")
        override = (cfg["r_prime"], cfg["b_prime"])
    return MultiConfig(cfg["n_devices"], cfg["r_tot"], cfg["b_tot"],
                       strategy or cfg["strategy"], override, cfg["seed"],
                       cfg["sequences"], cfg["length"])


def cmd_multi_sim(cfg):
    data, _ = _with_metrics(cfg)
    report = simulate_multi(data, _multi_config(cfg), PolicySolver(build_fg(data), cfg["gamma"]))
    _write(_out(cfg) / "multi.json", _dump(report.to_dict()))


def cmd_grid_search(cfg):
    data, _ = _with_metrics(cfg)
    mc = _multi_config(cfg, "hierarchical")
    result = grid_search_oversubscription(
        data, mc, PolicySolver(build_fg(data), cfg["gamma"]), cfg["r_grid"], cfg["b_grid"]
    )
    out = _out(cfg)
    _write(out / "grid.json", _dump(result.to_dict()))
    _write(out / "grid.csv", result.to_csv())


def _experiment(cfg) -> tuple[ExperimentSpec, object]:
    spec = ExperimentSpec(
        buckets=bucket_grid(cfg["rates"], cfg["depths"]), loss=cfg["loss"],
        gamma=cfg["gamma"], seed=cfg["seed"], folds=cfg["folds"],
        sequences=cfg["sequences"], length=cfg["length"], calibrate=cfg["calibrate"],
        perturb_fraction=cfg["perturb_fraction"], perturb_side=cfg["perturb_side"],
        output=cfg["output"],
    )
    if not cfg["data"]:
        raise InputError("no dataset given (set 'data')")
    if cfg["mode"] in ("jsonl", "jsonl-raw"):
        return spec, read_jsonl(cfg["data"])
    data, _ = _load(cfg)
    return spec, data


def cmd_eval(cfg):
    spec, data = _experiment(cfg)
    for path in kfold_eval(spec, data).write(cfg["output"]):
        print(path)


def cmd_perturb(cfg):
    spec, data = _experiment(cfg)
    for path in perturbation_study(spec, data).write(cfg["output"]):
        print(path)


HANDLERS = {
    "gen": cmd_gen,
    "ingest-check": cmd_ingest_check,
    "fit-metric": cmd_fit_metric,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "multi-sim": cmd_multi_sim,
    "grid-search": cmd_grid_search,
    "eval": cmd_eval,
    "perturb": cmd_perturb,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args)
        HANDLERS[args.command](cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
