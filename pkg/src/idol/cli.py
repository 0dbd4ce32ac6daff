"""Command line front-end: ``idol {cohort,run,report,dvf dump}``.

Exit codes: 0 ok, 2 usage, 3 I/O failure, 4 non-finite training loss.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, asdict, fields
from pathlib import Path

from .deform import DeformParams, random_dvf
from .pgm import write_pgm, MAXVAL
from .phantoms import TASKS, build_cohort, save_cohort
from .report import comparison_table, format_table, load_summary, table_csv
from .training import TrainConfig, TrainingDiverged, run_experiment

EXIT_USAGE, EXIT_IO, EXIT_DIVERGED = 2, 3, 4


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "seg"
    seed: int = 0
    out: str = "runs/experiment"
    epochs1: int = 50
    epochs2: int = 100
    lr1: float = 1e-3
    lr2: float = 1e-4
    batch_size: int = 8
    lambda_l: float = 0.0
    lambda_p: float = 1.0
    k_prior: int = 32
    amplitude: float = 3.0
    smoothness: float = 4.0
    patients: int = 20
    holdout: int = 5
    resolution: int = 32

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs1, self.epochs2, self.lr1, self.lr2, self.batch_size,
                           self.lambda_l, self.lambda_p, self.k_prior, self.amplitude,
                           self.smoothness, self.seed)

    def to_flags(self, with_out: bool = True) -> dict:
        """Config-file form: flag names (hyphenated) as keys."""
        d = {k.replace("_", "-"): v for k, v in asdict(self).items()}
        if not with_out:
            d.pop("out")
        return d

    @classmethod
    def from_flags(cls, d: dict) -> "ExperimentConfig":
        names = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, value in d.items():
            name = key.replace("-", "_")
            if name not in names:
                raise ValueError(f"unknown config key {key!r}")
            kw[name] = value
        return cls(**kw)


class UsageError(Exception):
    pass


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    # defaults are None so explicit flags can override a config file
    p.add_argument("--task", choices=TASKS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None, help="JSON file keyed by flag names")
    p.add_argument("--epochs1", type=int, default=None)
    p.add_argument("--epochs2", type=int, default=None)
    p.add_argument("--lr1", type=float, default=None)
    p.add_argument("--lr2", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lambda-l", type=float, default=None)
    p.add_argument("--lambda-p", type=float, default=None)
    p.add_argument("--k-prior", type=int, default=None)
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--smoothness", type=float, default=None)
    p.add_argument("--patients", type=int, default=None)
    p.add_argument("--holdout", type=int, default=None)
    p.add_argument("--resolution", type=int, choices=(32, 64), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idol", description="Two-stage personalized training on phantom cohorts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cohort", help="generate and save a phantom cohort")
    _add_experiment_flags(p)

    p = sub.add_parser("run", help="train general and personalized models")
    _add_experiment_flags(p)

    p = sub.add_parser("report", help="tabulate general vs personalized metrics")
    p.add_argument("summaries", nargs="+")
    p.add_argument("--out", default=None, help="CSV output path (default: report.csv)")

    p = sub.add_parser("dvf", help="deformation field utilities")
    dsub = p.add_subparsers(dest="dvf_command", required=True)
    d = dsub.add_parser("dump", help="write a random field as two PGM images")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--amplitude", type=float, default=3.0)
    d.add_argument("--smoothness", type=float, default=4.0)
    d.add_argument("--resolution", type=int, default=32)
    d.add_argument("--out", required=True)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the config file, then explicit flags."""
    merged = ExperimentConfig().to_flags()
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
        for key, value in loaded.items():
            merged[key.replace("_", "-")] = value
    for key in merged:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            merged[key] = value
    try:
        cfg = ExperimentConfig.from_flags(merged)
        if cfg.task not in TASKS:
            raise ValueError(f"invalid task {cfg.task!r}; valid tasks: {', '.join(TASKS)}")
        cfg.train_config()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def cmd_cohort(args) -> int:
    cfg = resolve_config(args)
    try:
        cohort = build_cohort(cfg.task, cfg.patients, cfg.holdout, cfg.resolution, cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    root = save_cohort(cohort, cfg.out)
    print(f"cohort task={cfg.task} seed={cfg.seed} train={len(cohort.train)} holdout={len(cohort.holdout)} "
          f"resolution={cfg.resolution} -> {root}")
    return 0


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    summary = run_experiment(cfg.task, cfg.train_config(), cfg.out, cfg.patients, cfg.holdout,
                             cfg.resolution, echo=cfg.to_flags(with_out=False))
    print(f"{cfg.task}: mean {summary['metric']} general={summary['mean_general_metric']:.4f} "
          f"idol={summary['mean_idol_metric']:.4f} -> {cfg.out}")
    return 0


def cmd_report(args) -> int:
    summaries = []
    for path in args.summaries:
        try:
            summaries.append(load_summary(path))
        except (OSError, json.JSONDecodeError) as exc:
            raise OSError(f"cannot read summary {path}: {exc}") from exc
    rows = comparison_table(summaries)
    print(format_table(rows))
    out = Path(args.out or "report.csv")
    out.write_text(table_csv(rows))
    return 0


def cmd_dvf_dump(args) -> int:
    try:
        params = DeformParams(args.amplitude, args.smoothness, args.seed)
        field = random_dvf(args.resolution, args.resolution, params)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    amp = args.amplitude if args.amplitude > 0 else 1.0
    # gray = (v + amp) / (2 amp) * 65535, so v = offset + gray * scale
    write_pgm(out / "dx.pgm", (field.dx + amp) / (2 * amp))
    write_pgm(out / "dy.pgm", (field.dy + amp) / (2 * amp))
    meta = {"offset": -amp, "scale": 2 * amp / MAXVAL, "seed": args.seed, "amplitude": args.amplitude,
            "smoothness": args.smoothness, "resolution": args.resolution}
    (out / "dvf.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"dvf seed={args.seed} max|d|={field.magnitude.max():.6g} -> {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"cohort": cmd_cohort, "run": cmd_run, "report": cmd_report}.get(args.command, cmd_dvf_dump)
    try:
        return handler(args)
    except UsageError as exc:
        print(f"idol {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"idol {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as exc:
        print(f"idol {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
