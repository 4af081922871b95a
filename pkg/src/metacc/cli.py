"""Command-line entry point.

Subcommands: gen-data, train, eval, metrics (diversity|shift), report.
Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench
from . import metalearn as ml
from . import taskdist as td


class ConfigError(Exception):
    """Bad invocation or config file; maps to exit code 2."""


_CONFIG_KEYS = {"meta", "train_counts", "test_counts", "episodes_per_setup",
                "metric_codewords", "metric_samples", "baseline"}


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}; "
                          f"valid: {sorted(_CONFIG_KEYS)}")
    if "meta" in cfg and not isinstance(cfg["meta"], dict):
        raise ConfigError("config key 'meta' must be an object")
    return cfg


def _counts(cfg: dict, key: str):
    if key not in cfg or cfg[key] is None:
        return None
    val = cfg[key]
    if (not isinstance(val, (list, tuple)) or len(val) != 3
            or not all(isinstance(v, int) and v > 0 for v in val)):
        raise ConfigError(f"config key '{key}' must be three positive ints")
    return tuple(val)


def _require_scenario(args) -> td.Scenario:
    if not args.scenario:
        raise ConfigError("--scenario is required for this command")
    try:
        return td.get_scenario(args.scenario)
    except ValueError as e:
        raise ConfigError(str(e))


def _learner_list(args) -> tuple[str, ...]:
    if not args.learner:
        raise ConfigError("--learner is required for this command")
    names = tuple(s.strip() for s in args.learner.split(",") if s.strip())
    if not names:
        raise ConfigError("--learner list is empty")
    return names


def _experiment_config(args, cfg: dict, learners) -> bench.ExperimentConfig:
    try:
        return bench.ExperimentConfig(
            scenario=args.scenario,
            learners=learners,
            seeds=(args.seed,),
            out_dir=args.out,
            desk_scale=args.desk_scale,
            meta=cfg.get("meta", {}),
            train_counts=_counts(cfg, "train_counts"),
            test_counts=_counts(cfg, "test_counts"),
            episodes_per_setup=cfg.get("episodes_per_setup", 50),
            metric_codewords=cfg.get("metric_codewords", 10),
            metric_samples=cfg.get("metric_samples", 1000))
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e))


def _dataset_path(out: Path, scenario: str, role: str, seed: int) -> Path:
    return out / f"{scenario}-{role}-seed{seed}.mcc"


def _checkpoint_path(out: Path, scenario: str, learner: str, seed: int) -> Path:
    return out / f"{scenario}-{learner}-seed{seed}.ckpt"


def _build_test_dataset(sc: td.Scenario, ecfg: bench.ExperimentConfig,
                        seed: int):
    counts = ecfg.test_counts or \
        (len(sc.test_setups),) + td.DEFAULT_TEST_COUNTS[1:]
    if counts[0] != len(sc.test_setups):
        raise ConfigError(
            f"test counts ask for {counts[0]} setups, scenario defines "
            f"{len(sc.test_setups)}")
    return td.build_dataset(None, counts, "meta-test",
                            bench.TEST_SEED_BASE + seed,
                            setups=list(sc.test_setups))


def cmd_gen_data(args, cfg: dict) -> int:
    sc = _require_scenario(args)
    ecfg = _experiment_config(args, cfg, ("viterbi",))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_counts = ecfg.train_counts or sc.train_counts
    train_ds = td.build_dataset(sc.train, train_counts, "meta-train",
                                args.seed)
    p = _dataset_path(out, sc.name, "meta-train", args.seed)
    td.save_dataset(train_ds, p)
    print(p)
    test_ds = _build_test_dataset(sc, ecfg, args.seed)
    p = _dataset_path(out, sc.name, "meta-test", args.seed)
    td.save_dataset(test_ds, p)
    print(p)
    return 0


def cmd_train(args, cfg: dict) -> int:
    sc = _require_scenario(args)
    learners = _learner_list(args)
    ecfg = _experiment_config(args, cfg, learners)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_counts = ecfg.train_counts or sc.train_counts
    train_ds = td.build_dataset(sc.train, train_counts, "meta-train",
                                args.seed)
    for learner in learners:
        mc = bench.meta_config_for(ecfg, learner)
        state = ml.train_meta(mc, train_ds, args.seed)
        p = _checkpoint_path(out, sc.name, learner, args.seed)
        ml.save_state(p, state)
        print(p)
    return 0


def cmd_eval(args, cfg: dict) -> int:
    sc = _require_scenario(args)
    learners = _learner_list(args)
    ecfg = _experiment_config(args, cfg, learners)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    test_ds = _build_test_dataset(sc, ecfg, args.seed)
    digest = bench.spec_digest(sc.train)
    div, shf = bench.scenario_metrics(sc, ecfg.metric_codewords,
                                      ecfg.metric_samples)
    rows = []
    for learner in learners:
        if learner == "viterbi":
            state = ml.init_state(bench.meta_config_for(ecfg, learner),
                                  args.seed)
        else:
            state = ml.load_state(
                _checkpoint_path(out, sc.name, learner, args.seed))
        rows.extend(bench.eval_state_rows(
            sc, state, learner, args.seed, test_ds, digest, div, shf,
            ecfg.episodes_per_setup))
    results_path = out / "results.csv"
    if results_path.exists():
        rows = bench.read_results_csv(results_path) + rows
    bench.write_results_csv(rows, results_path)
    print(results_path)
    return 0


def cmd_metrics(args, cfg: dict) -> int:
    sc = _require_scenario(args)
    m = cfg.get("metric_codewords", 10)
    n = cfg.get("metric_samples", 1000)
    div, shf = bench.scenario_metrics(sc, m, n)
    est, seed = (div, bench.METRIC_SEED) if args.which == "diversity" \
        else (shf, bench.METRIC_SEED + 1)
    print(json.dumps(est.to_json_row(sc.name, seed), sort_keys=True))
    return 0


def cmd_report(args, cfg: dict) -> int:
    out = Path(args.out)
    rows = bench.read_results_csv(out / "results.csv")
    paths = bench.emit_reports(rows, out, baseline=cfg.get("baseline", "erm"))
    print(paths["summary"])
    return 0


_COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
             "metrics": cmd_metrics, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metacc",
        description="Channel-coding meta-learning benchmark")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", metavar="FILE",
                       help="JSON file with extra settings")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", metavar="DIR", default="results")
        p.add_argument("--desk-scale", action="store_true",
                       help="cap meta-training at "
                            f"{bench.DESK_SCALE_ITERATIONS} iterations")
        p.add_argument("--scenario", metavar="NAME")
        p.add_argument("--learner", metavar="NAME[,NAME...]")

    common(sub.add_parser("gen-data", help="write dataset files"))
    common(sub.add_parser("train", help="meta-train learners, save checkpoints"))
    common(sub.add_parser("eval", help="evaluate checkpoints on the test grid"))
    p = sub.add_parser("metrics", help="print a scenario metric as JSON")
    p.add_argument("which", choices=["diversity", "shift"])
    common(p)
    common(sub.add_parser("report", help="aggregate results.csv into reports"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2
    try:
        cfg = _load_config(args.config)
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"metacc: config error: {e}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        raise
    except Exception as e:
        print(f"metacc: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
