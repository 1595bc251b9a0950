"""Experiment runner CLI.

    fedcoreset run --config exp.ini [--dry-run] [--out DIR] [--seed N] [--key value ...]
    fedcoreset sweep --config exp.ini --param noise.ratio --values 0,0.2,0.4 [...]

Any config key can be overridden with ``--<key> <value>``, using dots for
the nested groups (``--noise.ratio 0.4``, ``--dataset.dim 20``).  The
``FEDCORESET_OUT`` environment variable overrides the configured output
directory; an explicit ``--out`` wins over both.  Every arm of a run sees
the same realized dataset, partition and noise, so arms are paired.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import (
    SWEEPABLE,
    ExperimentConfig,
    SweepSpec,
    apply_override,
    config_to_dict,
    parse_config,
)
from .errors import ConfigurationError
from .federation import compute_cost_ratio, prepare_experiment, run_training
from .metrics import RunManifest, write_round_log, write_summary

OUT_ENV_VAR = "FEDCORESET_OUT"


def _version() -> str:
    from . import __version__

    return __version__


def _build_manifest(cfg: ExperimentConfig, fingerprint: str) -> RunManifest:
    return RunManifest(
        config=config_to_dict(cfg),
        version=_version(),
        seed=cfg.seed,
        dataset_fingerprint=fingerprint,
    )


def run(cfg: ExperimentConfig) -> int:
    """Execute every arm on one shared data realization; write per-arm
    round logs and a single summary.json under cfg.output_dir."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    prepared = prepare_experiment(cfg)
    manifest = _build_manifest(cfg, prepared.fingerprint)

    arms_summary: dict[str, dict] = {}
    ledgers = {}
    for algo in cfg.arms:
        result = run_training(cfg, algo, prepared)
        write_round_log(str(out / f"{algo.label}.csv"), result.rounds)
        entry = {"final_accuracy": result.final_accuracy}
        if result.fine_tuned_accuracy is not None:
            entry["fine_tuned_accuracy"] = result.fine_tuned_accuracy
        arms_summary[algo.label] = entry
        ledgers[algo.label] = result.ledger

    comparisons: dict[str, float] = {}
    if "gcfl" in ledgers and "fedavg" in ledgers and cfg.rounds > 0:
        comparisons["compute_cost_ratio_gcfl_vs_fedavg"] = compute_cost_ratio(
            ledgers["gcfl"], ledgers["fedavg"]
        )
    write_summary(str(out / "summary.json"), manifest, arms_summary, comparisons)
    return 0


def sweep(cfg: ExperimentConfig, spec: SweepSpec) -> int:
    """Run once per sweep value in a value-derived subdirectory and emit a
    combined JSON of final accuracies per (arm, value)."""
    base_out = Path(cfg.output_dir)
    base_out.mkdir(parents=True, exist_ok=True)

    records = []
    for value in spec.values:
        text = format(value, "g")
        point_cfg = apply_override(cfg, spec.parameter, text)
        point_cfg = replace(point_cfg, output_dir=str(base_out / f"{spec.parameter}={text}"))
        code = run(point_cfg)
        if code != 0:
            return code
        with open(Path(point_cfg.output_dir) / "summary.json", encoding="utf-8") as fh:
            summary = json.load(fh)
        records.append(
            {
                "value": value,
                "final_accuracy": {
                    arm: entry["final_accuracy"] for arm, entry in summary["arms"].items()
                },
                "comparisons": summary["comparisons"],
            }
        )

    combined = {"parameter": spec.parameter, "results": records}
    with open(base_out / "sweep.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(combined, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _parser() -> argparse.ArgumentParser:
    # abbreviation off so config overrides like --rounds never prefix-match
    parser = argparse.ArgumentParser(
        prog="fedcoreset", description=__doc__, allow_abbrev=False
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        p = sub.add_parser(name, allow_abbrev=False)
        p.add_argument("--config", required=False, help="INI config file path")
        p.add_argument("--dry-run", action="store_true", help="print resolved config and exit")
        p.add_argument("--out", help="output directory (overrides config and env)")
        p.add_argument("--seed", type=int, help="master seed override")
        if name == "sweep":
            p.add_argument("--param", required=True, choices=SWEEPABLE)
            p.add_argument("--values", required=True, help="comma-separated values")
    return parser


def _collect_overrides(extra: list[str]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--"):
            raise ConfigurationError(f"unexpected argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, _, value = key.partition("=")
        else:
            if i + 1 >= len(extra):
                raise ConfigurationError(f"flag --{key} is missing a value")
            i += 1
            value = extra[i]
        overrides[key] = value
        i += 1
    return overrides


def _resolve_config(args: argparse.Namespace, extra: list[str]) -> ExperimentConfig:
    overrides = _collect_overrides(extra)
    source = args.config if args.config else "[experiment]\n"
    cfg = parse_config(source, overrides)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    env_out = os.environ.get(OUT_ENV_VAR)
    if env_out:
        cfg = replace(cfg, output_dir=env_out)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args, extra = _parser().parse_known_args(argv)
    try:
        cfg = _resolve_config(args, extra)
        if args.dry_run:
            print(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
            return 0
        if args.command == "run":
            return run(cfg)
        values = tuple(float(tok) for tok in args.values.split(",") if tok.strip())
        spec = SweepSpec(args.param, values)
        return sweep(cfg, spec)
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
