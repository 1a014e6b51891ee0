"""Command-line interface.

Commands::

    fedmix synth     --out DIR [--config FILE] [--seed N]
    fedmix run       --scenario NAME --data DIR --out DIR [--config FILE] [--seed N]
                     [--eval-every N] [--fine-tune] [--jobs N]
    fedmix gradcheck [--arch logistic|mlp] [--input-dim N] [--hidden-dim N]
                     [--activation tanh|relu] [--seed N] [--eps E]

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from fedmix.config import ConfigError, ExperimentConfig
from fedmix.data import (
    DataError,
    load_central,
    load_federated,
    synthesize,
    synthesize_oracle,
    write_central,
    write_federated,
)
from fedmix.engine import NEEDS_CENTRAL, Datasets, train
from fedmix.metrics import Strategy, write_history
from fedmix.model import ArchSpec, NumericalError, gradient_check, save_params

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

FEDERATED_FILE = "federated.jsonl"
CENTRAL_FILE = "central.jsonl"
EVAL_FILE = "eval.jsonl"
ORACLE_FILE = "oracle_federated.jsonl"

COMPARISON = [
    Strategy.NO_MIX,
    Strategy.PARALLEL,
    Strategy.EXAMPLE_TRANSFER,
    Strategy.GRADIENT_TRANSFER,
    Strategy.ORACLE,
]

log = logging.getLogger("fedmix")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def cmd_synth(config_path, out_dir, seed=None) -> list[Path]:
    cfg = ExperimentConfig.load(config_path)
    syn = cfg.synthetic()
    seed = cfg.data_seed(seed)
    try:
        train_fed, central, eval_fed = synthesize(syn, seed)
        oracle = synthesize_oracle(syn, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / FEDERATED_FILE, out / CENTRAL_FILE, out / EVAL_FILE, out / ORACLE_FILE]
    write_federated(train_fed, paths[0])
    write_central(central, paths[1])
    write_federated(eval_fed, paths[2])
    write_federated(oracle, paths[3])
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"config": syn.to_dict(), "seed": seed}, indent=2, sort_keys=True) + "\n")
    return paths + [manifest]


def _scenarios(name: str, fine_tune: bool) -> list[Strategy]:
    if name == "all":
        return COMPARISON + ([Strategy.FINE_TUNE] if fine_tune else [])
    return [Strategy.parse(name)]


def load_datasets(data_dir, scenarios) -> Datasets:
    data_dir = Path(data_dir)

    def need(name):
        path = data_dir / name
        if not path.exists():
            raise DataError(f"required data file {path} is missing")
        return path

    central = oracle = None
    if any(s in NEEDS_CENTRAL for s in scenarios):
        central = load_central(need(CENTRAL_FILE))
    if Strategy.ORACLE in scenarios:
        oracle = load_federated(need(ORACLE_FILE))
    return Datasets(
        train=load_federated(need(FEDERATED_FILE)),
        eval=load_federated(need(EVAL_FILE)),
        central=central,
        oracle=oracle,
    )


def cmd_run(
    scenario: str,
    data_dir,
    out_dir,
    config_path=None,
    seed: int | None = None,
    eval_every: int | None = None,
    fine_tune: bool = False,
    jobs: int = 1,
) -> list[Path]:
    try:
        scenarios = _scenarios(scenario, fine_tune)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = ExperimentConfig.load(config_path)
    tcfg = cfg.training(seed=seed, eval_every=eval_every)
    mix = cfg.mixing()
    datasets = load_datasets(data_dir, scenarios)
    arch = cfg.arch(datasets.train.input_dim)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for s in scenarios:
        log.info("running scenario %s", s.label)
        records, params = train(datasets, tcfg, s, mix, arch, jobs=jobs)
        csv_path = out / f"metrics_{s.label}.csv"
        write_history(records, csv_path)
        model_path = out / f"model_{s.label}.bin"
        save_params(params, model_path)
        written += [csv_path, model_path]
    manifest = out / "run_manifest.json"
    manifest.write_text(
        json.dumps(
            {
                "scenarios": [s.label for s in scenarios],
                "seed": tcfg.master_seed,
                "data_dir": str(data_dir),
                "config": {k: cfg.values[k] for k in sorted(cfg.values)},
            },
            indent=2,
        )
        + "\n"
    )
    return written + [manifest]


def cmd_gradcheck(
    kind="logistic", input_dim=10, hidden_dim=8, activation="tanh", seed=0, eps=1e-5, draws=10,
    tol=1e-4,
) -> tuple[float, bool]:
    arch = ArchSpec(kind, input_dim, hidden_dim, activation)
    err = gradient_check(arch, seed=seed, draws=draws, eps=eps)
    return err, err < tol


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fedmix",
        description="Federated learning with centralized data mixing (simulation).",
        epilog="Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic label-skewed dataset")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, help="overrides data.seed")

    p = sub.add_parser("run", help="train one scenario, or all of them")
    p.add_argument(
        "--scenario",
        required=True,
        choices=[s.label for s in Strategy] + ["all"],
    )
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, help="overrides train.seed")
    p.add_argument("--eval-every", type=int)
    p.add_argument("--fine-tune", action="store_true", help="include fine-tune in --scenario all")
    p.add_argument("--jobs", type=int, default=1, help="threads for client training")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--arch", choices=["logistic", "mlp"], default="logistic")
    p.add_argument("--input-dim", type=int, default=10)
    p.add_argument("--hidden-dim", type=int, default=8)
    p.add_argument("--activation", choices=["tanh", "relu"], default="tanh")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--draws", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        if args.command == "synth":
            for path in cmd_synth(args.config, args.out, args.seed):
                print(path)
        elif args.command == "run":
            for path in cmd_run(
                args.scenario, args.data, args.out, args.config, args.seed, args.eval_every,
                args.fine_tune, args.jobs,
            ):
                print(path)
        else:
            err, ok = cmd_gradcheck(
                args.arch, args.input_dim, args.hidden_dim, args.activation, args.seed,
                args.eps, args.draws, args.tol,
            )
            print(f"max relative error {err:.3e} over {args.draws} draws: {'PASS' if ok else 'FAIL'}")
            return EXIT_OK if ok else EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
