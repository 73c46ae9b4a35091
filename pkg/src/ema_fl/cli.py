"""Command-line entry point: ``ema-fl {simulate,pretest,heterogeneity,aggregate,sweep}``.

Exit codes: 0 on success, 2 for bad configuration or unreadable inputs,
3 when the computation itself fails.  Messages go to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .aggregators import AggregationRuleConfig, Rule, aggregate
from .config import config_hash, config_to_dict, load_config
from .errors import ConfigError, EMAError
from .gradients import load_round, write_gradient_dump
from .heterogeneity import ClientLossRecord, detect_non_iid, evaluate_model_on_client, read_losses_csv
from .normality import pretest_round
from .sim.attacks import AttackKind
from .sim.simulation import metrics_csv, run_simulation, run_simulation_with_state

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("ema_fl")


class InputError(Exception):
    """Unusable command-line input; maps to exit code 2."""


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EMA_THREADS", "1")))
    except ValueError:
        return 1


def _write_manifest(out_dir: Path, config, artifacts: dict, started: str) -> Path:
    manifest = {
        "config_hash": config_hash(config),
        "config": config_to_dict(config),
        "artifacts": artifacts,
        "version": __version__,
        "started_at": started,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load(args):
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def cmd_simulate(args) -> int:
    started = _now()
    config = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    history = run_simulation(config)
    csv_path = out / "metrics.csv"
    csv_path.write_text(metrics_csv(config, history))
    _write_manifest(out, config, {"metrics_csv": str(csv_path)}, started)
    if history:
        last = history[-1]
        print(f"round {last.round}: test accuracy {last.test_accuracy:.4f}, loss {last.test_loss:.4f}")
    print(f"wrote {csv_path}")
    return EXIT_OK


def _read_dump(path):
    try:
        return load_round(path)
    except FileNotFoundError:
        raise InputError(f"gradient dump not found: {path}") from None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_pretest(args) -> int:
    _, matrix = _read_dump(args.dump)
    try:
        report = pretest_round(matrix.T, alpha=args.alpha, kind=args.test)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = Path(args.out) if args.out else Path(str(args.dump) + ".pretest.json")
    out.write_text(report.to_json(indent=2) + "\n")
    print(f"Pre-Testing rate: {report.rate:.4f} ({report.passed}/{report.total} coordinates)")
    print(f"wrote {out}")
    return EXIT_OK


def _client_losses_from_config(args) -> list[ClientLossRecord]:
    config = _load(args)
    state, _ = run_simulation_with_state(config)
    predict = state.model.as_callable(state.params)
    records = []
    for cid, idx in enumerate(state.client_indices):
        shard = state.train.subset(idx)
        records.append(ClientLossRecord(cid, evaluate_model_on_client(predict, shard.features, shard.labels)))
    return records


def cmd_heterogeneity(args) -> int:
    if args.losses:
        try:
            records = read_losses_csv(args.losses)
        except FileNotFoundError:
            raise InputError(f"losses file not found: {args.losses}") from None
        except ValueError as exc:
            raise InputError(str(exc)) from None
    else:
        records = _client_losses_from_config(args)
    report = detect_non_iid(records, args.threshold)
    for record in report.losses:
        print(record.display())
    if report.cv is not None:
        print(f"CV = {report.cv:.4f} (threshold {report.threshold_d})")
    print(report.message)
    if args.out:
        Path(args.out).write_text(report.to_json(indent=2) + "\n")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    ids, matrix = _read_dump(args.dump)
    try:
        rule_config = AggregationRuleConfig(
            rule=args.rule,
            k=args.k,
            trim_fraction=args.trim_fraction,
            byzantine_count_f=args.f,
            quartile_rule=args.quartile_rule,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if rule_config.rule is Rule.ZENO:
        raise InputError("zeno needs a validation loss and cannot run from a dump")
    outcome = aggregate(matrix, rule_config)
    out = Path(args.out) if args.out else Path(args.dump).with_suffix(".global.emag")
    write_gradient_dump(out, outcome.values[None, :])
    diag = outcome.diagnostics
    print(f"rule={diag.rule} clients={diag.n_clients} dim={outcome.values.size}")
    if diag.weight is not None:
        print(f"weight={diag.weight:.6f} median_fallbacks={diag.median_fallbacks}")
    if diag.retained_counts is not None:
        print(f"retained_mean={diag.retained_mean:.4f}")
    if diag.selected_client is not None:
        print(f"selected_client={ids[diag.selected_client]}")
    print(f"wrote {out}")
    return EXIT_OK


def _split_list(text: str, cast, name: str) -> list:
    try:
        items = [cast(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--{name}: cannot parse {text!r}") from None
    if not items:
        raise ConfigError(f"--{name} is empty")
    return items


def _sweep_job(job):
    config, path = job
    path.write_text(metrics_csv(config, run_simulation(config), header=True))
    return path


def sweep_configs(base, fractions, seeds, rules) -> list:
    """Configs in (fraction, seed, rule) order; a ``none`` attack becomes sign-flip."""
    kind = base.attack.kind
    if kind is AttackKind.NONE:
        kind = AttackKind.SIGN_FLIP
    out = []
    for fraction in fractions:
        attack = replace(base.attack, fraction=fraction, kind=kind if fraction > 0 else AttackKind.NONE)
        for seed in seeds:
            for rule in rules:
                out.append(replace(base, seed=seed, attack=attack, rule=replace(base.rule, rule=rule)))
    return out


def cmd_sweep(args) -> int:
    started = _now()
    base = _load(args)
    fractions = _split_list(args.fractions, float, "fractions")
    seeds = _split_list(args.seeds, int, "seeds")
    rules = [Rule.parse(r) for r in _split_list(args.rules, str, "rules")]
    configs = sweep_configs(base, fractions, seeds, rules)
    out = Path(args.out)
    runs = out / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    jobs = [
        (c, runs / f"f{c.attack.fraction:g}_s{c.seed}_{c.rule.rule.value}.csv") for c in configs
    ]
    workers = _threads()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(_sweep_job, jobs))
    else:
        paths = [_sweep_job(job) for job in jobs]
    combined = out / "sweep.csv"
    parts = [paths[0].read_text()] + [p.read_text().split("\n", 1)[1] for p in paths[1:]]
    combined.write_text("".join(parts))
    _write_manifest(
        out, base, {"metrics_csv": str(combined), "runs": [str(p) for p in paths]}, started
    )
    print(f"{len(configs)} runs; wrote {combined}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ema-fl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one federated simulation")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
    sim.add_argument("--seed", type=int, help="shortcut for --set seed=N")
    sim.set_defaults(func=cmd_simulate)

    pre = sub.add_parser("pretest", help="normality pre-testing rate of a dumped round")
    pre.add_argument("--dump", required=True)
    pre.add_argument("--alpha", type=float, default=0.05)
    pre.add_argument("--test", choices=["sw", "ad", "both"], default="both")
    pre.add_argument("--out", help="JSON report path (default: <dump>.pretest.json)")
    pre.set_defaults(func=cmd_pretest)

    het = sub.add_parser("heterogeneity", help="coefficient-of-variation non-IID check")
    src = het.add_mutually_exclusive_group(required=True)
    src.add_argument("--losses", help="CSV with client_id,loss columns")
    src.add_argument("--config", help="simulate, then evaluate the final model per client")
    het.add_argument("--threshold", type=float, default=0.25)
    het.add_argument("--set", action="append", metavar="KEY=VALUE")
    het.add_argument("--seed", type=int)
    het.add_argument("--out", help="optional JSON report path")
    het.set_defaults(func=cmd_heterogeneity)

    agg = sub.add_parser("aggregate", help="aggregate one dumped round")
    agg.add_argument("--dump", required=True)
    agg.add_argument("--rule", required=True)
    agg.add_argument("--k", type=float, default=1.5, help="IQR fence multiplier (ema)")
    agg.add_argument("--trim-fraction", type=float, default=0.2, help="beta (trimmed_mean)")
    agg.add_argument("--f", type=int, default=0, help="assumed Byzantine count (krum)")
    agg.add_argument("--quartile-rule", choices=["index", "mirrored"], default="index")
    agg.add_argument("--out", help="output dump (default: <dump>.global.emag)")
    agg.set_defaults(func=cmd_aggregate)

    sw = sub.add_parser("sweep", help="attack-fraction x seed x rule grid")
    sw.add_argument("--config", required=True)
    sw.add_argument("--fractions", required=True, help="comma list, e.g. 0,0.1,0.2")
    sw.add_argument("--seeds", required=True, help="comma list, e.g. 0,1,2")
    sw.add_argument("--rules", required=True, help="comma list, e.g. ema,mean")
    sw.add_argument("--out", default="sweep_out", help="output directory")
    sw.add_argument("--set", action="append", metavar="KEY=VALUE")
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s"
    )
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EMAError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
