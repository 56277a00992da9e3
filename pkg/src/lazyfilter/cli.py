"""Command-line entry point: ``lazyfilter run|sweep|verify``.

Settings resolve as defaults < preset < JSON config file < flags. A config
file is a flat JSON object using the same keys as the flags (dashes become
underscores), e.g. ``{"epsilon": 0.75, "alpha": 0.1, "seeds": [0, 1, 2]}``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from lazyfilter.config import FEDERATION_KEYS, apply_overrides, to_flat
from lazyfilter.errors import InvalidInput, StageError
from lazyfilter.experiments import (
    DATASET_DEFAULTS,
    PRESETS,
    dataset_factory,
    motivation_run,
    verify,
)
from lazyfilter.federation import FederationConfig
from lazyfilter.metrics import SweepCell, grid, sweep

log = logging.getLogger("lazyfilter")

SPEC_KEYS = {"preset", "seeds", "out", "axes", "holdout_fraction", "votes"}
DATASET_KEYS = set(DATASET_DEFAULTS)
METRICS_COLUMNS = ["preset", "cell", "seed", "metric", "value"]

EXIT_OK, EXIT_CONFIG, EXIT_OUTPUT, EXIT_STAGE, EXIT_VERIFY = 0, 2, 3, 4, 5


@dataclass
class ExperimentSpec:
    preset: str = "custom"
    overrides: dict = field(default_factory=dict)
    out_dir: Path = Path("results")
    seeds: list = field(default_factory=lambda: list(range(8)))
    dataset: dict = field(default_factory=dict)
    axes: dict = field(default_factory=dict)
    holdout_fraction: float = 0.0
    write_votes: bool = False

    def federation_config(self) -> FederationConfig:
        return apply_overrides(FederationConfig(), self.overrides)

    def snapshot(self) -> dict:
        return {
            "preset": self.preset,
            "seeds": self.seeds,
            "axes": self.axes,
            "holdout_fraction": self.holdout_fraction,
            "dataset": {**DATASET_DEFAULTS, **self.dataset},
            "config": to_flat(self.federation_config()),
        }


def _seeds(value) -> list:
    if isinstance(value, str):
        parts = [p for p in value.split(",") if p.strip()]
        value = int(parts[0]) if len(parts) == 1 else [int(p) for p in parts]
    if isinstance(value, int):
        if value < 1:
            raise InvalidInput("seeds must be a positive count or a list")
        return list(range(value))
    seeds = [int(s) for s in value]
    if not seeds or min(seeds) < 0:
        raise InvalidInput("seed list must be non-empty and non-negative")
    return seeds


def _axis_values(raw: str) -> list:
    out = []
    for v in raw.split(","):
        v = v.strip()
        try:
            out.append(int(v))
        except ValueError:
            try:
                out.append(float(v))
            except ValueError:
                out.append(v)
    return out


def parse_config(path=None, flags: dict | None = None) -> ExperimentSpec:
    """Resolve an :class:`ExperimentSpec` from an optional JSON file and flag values."""
    layers = []
    if path is not None:
        try:
            with open(path) as f:
                loaded = json.load(f)
        except FileNotFoundError:
            raise InvalidInput(f"config file {path} does not exist") from None
        except json.JSONDecodeError as e:
            raise InvalidInput(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(loaded, dict):
            raise InvalidInput("config file must hold a JSON object")
        layers.append(loaded)
    layers.append({k: v for k, v in (flags or {}).items() if v is not None})

    merged: dict = {}
    for layer in layers:
        for key, value in layer.items():
            if key not in SPEC_KEYS and key not in DATASET_KEYS and key not in FEDERATION_KEYS:
                raise InvalidInput(f"unknown config key {key!r}")
            if key == "axes" and "axes" in merged:
                value = {**merged["axes"], **value}
            merged[key] = value

    preset_name = merged.pop("preset", "custom")
    if preset_name not in PRESETS:
        raise InvalidInput(f"unknown preset {preset_name!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[preset_name]

    spec = ExperimentSpec(preset=preset_name, holdout_fraction=preset.holdout_fraction)
    spec.axes = {k: list(v) for k, v in preset.axes.items()}
    spec.dataset = dict(preset.dataset)
    overrides = dict(preset.overrides)
    for key, value in merged.items():
        if key == "seeds":
            spec.seeds = _seeds(value)
        elif key == "out":
            spec.out_dir = Path(value)
        elif key == "axes":
            for name, values in value.items():
                if name not in FEDERATION_KEYS:
                    raise InvalidInput(f"unknown sweep axis {name!r}")
                spec.axes[name] = _axis_values(values) if isinstance(values, str) else list(values)
        elif key == "holdout_fraction":
            spec.holdout_fraction = float(value)
        elif key == "votes":
            spec.write_votes = bool(value)
        elif key in DATASET_KEYS:
            spec.dataset[key] = value
        else:
            overrides[key] = value
    spec.overrides = overrides
    if not 0 <= spec.holdout_fraction < 1:
        raise InvalidInput("holdout_fraction must lie in [0, 1)")
    cfg = spec.federation_config()  # range validation happens here
    for params in grid(spec.axes):
        apply_overrides(cfg, params)
    return spec


def _cell_label(params: dict) -> str:
    return ";".join(f"{k}={params[k]}" for k in params) or "default"


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def run_experiment(spec: ExperimentSpec) -> int:
    out = spec.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "config.json", spec.snapshot())
    except OSError as e:
        print(f"stage 'output' failed: cannot write to {out}: {e}", file=sys.stderr)
        return EXIT_OUTPUT

    cfg = spec.federation_config()
    cells = grid(spec.axes)
    single = len(cells) == 1
    index = {_cell_label(p): i for i, p in enumerate(cells)}

    def stem(params, seed):
        return f"{seed}" if single else f"c{index[_cell_label(params)]}_{seed}"

    def write_outcome(params, seed, outcome):
        record = outcome.to_dict()
        record.update({"preset": spec.preset, "cell": params, "seed": seed})
        _dump(out / f"outcome_{stem(params, seed)}.json", record)
        if spec.write_votes:
            (out / f"votes_{stem(params, seed)}.csv").write_text(outcome.votes_csv())

    if spec.preset == "fig2":
        result = _run_motivation(spec, cfg, cells, write_outcome)
    else:
        result = sweep(
            cfg, spec.axes, seeds=spec.seeds,
            dataset_fn=dataset_factory(spec.dataset, spec.holdout_fraction),
            holdout_fraction=spec.holdout_fraction,
            on_run=lambda params, seed, sim, values: write_outcome(params, seed, sim.outcome),
        )

    with open(out / "metrics.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for cell in result:
            for seed, values in cell.runs:
                for metric, value in values.items():
                    w.writerow([spec.preset, _cell_label(cell.params), seed, metric, repr(float(value))])
    summary = {"preset": spec.preset, "axes": spec.axes, "cells": [c.summary() for c in result]}
    _dump(out / "summary.json", summary)
    if spec.preset == "fig2":
        _write_fig2(out / "fig2.csv", result)

    _print_table(result)
    failed = [(c.params, s, e) for c in result for s, e in c.failures]
    for params, seed, err in failed:
        print(f"cell {_cell_label(params)} seed {seed}: {err}", file=sys.stderr)
    return EXIT_STAGE if failed else EXIT_OK


def _run_motivation(spec, cfg, cells, write_outcome) -> list:
    dataset_fn = dataset_factory(spec.dataset, spec.holdout_fraction)
    result = []
    for params in cells:
        cell = SweepCell(params)
        cell_cfg = apply_overrides(cfg, params)
        for seed in spec.seeds:
            try:
                values, outcome = motivation_run(cell_cfg, seed, dataset_fn, spec.holdout_fraction)
            except (StageError, InvalidInput, ArithmeticError) as e:
                cell.failures.append((seed, str(e)))
                continue
            cell.runs.append((seed, values))
            write_outcome(params, seed, outcome)
        result.append(cell)
    return result


def _write_fig2(path: Path, cells) -> None:
    cols = ["unfiltered_accuracy", "oracle_accuracy", "filtered_accuracy"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["mislabel_rate"] + cols + [c + "_std" for c in cols])
        for cell in cells:
            w.writerow([cell.params["corrupt_frac"]] + [repr(cell.mean(c)) for c in cols]
                       + [repr(cell.std(c)) for c in cols])


def _print_table(cells) -> None:
    for cell in cells:
        shown = ", ".join(
            f"{k} {cell.mean(k):.3f}±{cell.std(k):.3f}" for k in cell.metrics if not math.isnan(cell.mean(k))
        )
        print(f"[{_cell_label(cell.params)}] runs={len(cell.runs)} {shown}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--participants", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", help="Dirichlet concentration, or 'iid'")
    p.add_argument("--epochs", type=int, help="contributor local epochs k")
    p.add_argument("--lr", type=float, help="contributor learning rate")
    p.add_argument("--clip", type=float, help="clipping threshold for the shared head update")
    p.add_argument("--sigma", type=float, help="Gaussian noise multiplier")
    p.add_argument("--corrupt-frac", type=float, help="share of corrupted participants")
    p.add_argument("--corrupt-points", type=float, help="share of relabelled points per corrupted batch")
    p.add_argument("--seeds", help="run count (e.g. 8) or comma-separated seed list")
    p.add_argument("--out", help="output directory")
    p.add_argument("--dim", type=int, help="synthetic feature dimension")
    p.add_argument("--separation", type=float, help="synthetic class-mean separation")
    p.add_argument("--csv", help="load examples from a label,f0,f1,... CSV instead of synthesising")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="any other flat config key")


def _flags(args) -> dict:
    flags = {}
    for name in ("preset", "participants", "epsilon", "alpha", "epochs", "lr", "clip", "sigma",
                 "corrupt_frac", "corrupt_points", "seeds", "out", "dim", "separation", "csv"):
        value = getattr(args, name, None)
        if value is not None:
            flags[name] = value
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidInput(f"--set expects KEY=VALUE, got {item!r}")
        flags[key.strip()] = value.strip()
    axes = {}
    for item in getattr(args, "axis", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidInput(f"--axis expects KEY=V1,V2,..., got {item!r}")
        axes[key.strip()] = _axis_values(value)
    if axes:
        flags["axes"] = axes
    if getattr(args, "votes", False):
        flags["votes"] = True
    return flags


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lazyfilter", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run a preset or a single custom cell")
    _add_common(run)
    run.add_argument("--votes", action="store_true", help="also write votes_<seed>.csv")

    sw = sub.add_parser("sweep", help="run a parameter grid")
    _add_common(sw)
    sw.add_argument("--axis", action="append", metavar="KEY=V1,V2,...")
    sw.add_argument("--votes", action="store_true")

    ver = sub.add_parser("verify", help="lazy sign vs exact influence agreement suite")
    ver.add_argument("--instances", type=int, default=30)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out")
    ver.add_argument("--min-agreement", type=float, default=0.9)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verb == "verify":
        report = verify(args.instances, args.seed)
        print(f"sign agreement {report['agreement']:.3f} over {report['trials']} trials "
              f"(converged: {report['all_converged']})")
        if args.out:
            out = Path(args.out)
            try:
                out.mkdir(parents=True, exist_ok=True)
                _dump(out / "verify.json", report)
            except OSError as e:
                print(f"stage 'output' failed: {e}", file=sys.stderr)
                return EXIT_OUTPUT
        return EXIT_OK if report["agreement"] >= args.min_agreement else EXIT_VERIFY
    try:
        spec = parse_config(args.config, _flags(args))
    except InvalidInput as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run_experiment(spec)


if __name__ == "__main__":
    sys.exit(main())
