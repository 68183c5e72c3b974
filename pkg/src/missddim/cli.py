"""Command-line entry point: mask -> train -> impute -> eval -> ablate / bench.

Exit codes: 0 success, 2 validation error, 3 numeric error, 4 I/O error.
Every subcommand writes ``run_config.json`` into its output directory; pass it
back with ``--config`` to replay the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .checkpoint import MAGIC
from .data import (Schema, encode_matrix, load_dataset, simulate_mcar, write_csv, write_masked)
from .errors import ConfigurationError, MissDDIMError, NumericError, ParameterError, SchemaError
from .evaluation import benchmark_grid, evaluate, write_grid
from .sampler import SamplerConfig, impute_dataset
from .schedule import build_schedule
from .training import CHECKPOINT_NAME, ModelConfig, TrainConfig, load_model, save_model, train

log = logging.getLogger("missddim")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _float_list(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise ParameterError(f"missing required argument {name.replace('_', '-')}")


def _write_run_config(out: Path, args, resolved: dict) -> None:
    stored = {k: v for k, v in vars(args).items() if k not in ("func", "config", "quiet", "command")}
    payload = {"version": __version__, "command": args.command, "args": stored, "resolved": resolved}
    (out / "run_config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sampler_config(args) -> SamplerConfig:
    agg = args.agg or ("median" if args.samples > 1 else "single")
    return SamplerConfig(eta=args.eta, steps=args.steps, n_samples=args.samples, aggregation=agg,
                         init_seed=args.init_seed, method=args.sampler, threads=args.threads)


# -- subcommands -------------------------------------------------------------

def cmd_mask(args) -> int:
    _require(args, "input")
    if args.rate is None or not 0.0 < args.rate < 1.0:
        raise ParameterError(f"--rate must be in (0, 1), got {args.rate}")
    out = _out_dir(args)
    ds = load_dataset(args.input)
    masked = simulate_mcar(ds, args.rate, args.seed, columns=args.columns)
    write_masked(masked, out)
    log.info("masked %d of %d observed cells", int(masked.simulated_missing.sum()), int(ds.observed.sum()))
    _write_run_config(out, args, {"rate": args.rate, "seed": args.seed, "columns": args.columns})
    return EXIT_OK


def cmd_train(args) -> int:
    _require(args, "input")
    out = _out_dir(args)
    declared = {c: "categorical" for c in (args.categorical or [])}
    schema = Schema.from_dict(json.loads(Path(args.schema).read_text())) if args.schema else None
    ds = load_dataset(args.input, schema=schema, declared_types=declared)
    schedule = build_schedule(args.schedule, args.T, args.beta_min, args.beta_max)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                         adam_beta1=args.adam_beta1, adam_beta2=args.adam_beta2, adam_eps=args.adam_eps,
                         mask_ratio_min=args.mask_ratio_min, mask_ratio_max=args.mask_ratio_max,
                         seed=args.seed, checkpoint_every=args.checkpoint_every)
    model_config = ModelConfig(args.depth, args.width, args.time_embed_dim, args.activation)

    def progress(epoch, value):
        log.info("epoch %d/%d loss %.6f", epoch, config.epochs, value)

    result = train(ds, schedule, config, model_config, checkpoint_dir=out,
                   resume_from=args.resume, callback=progress)
    save_model(out / CHECKPOINT_NAME, result.model, schedule, ds.schema, config, result.adam,
               result.epochs_done, result.history)
    write_csv(out / "loss.csv", ["epoch", "mean_loss"],
              [(i + 1, float(v)) for i, v in enumerate(result.history)])
    (out / "schema.json").write_text(json.dumps(ds.schema.to_dict(), indent=2) + "\n")
    _write_run_config(out, args, {
        "schedule": schedule.to_dict(), "model": asdict(model_config), "train": asdict(config),
        "schema_hash": ds.schema.schema_hash,
        "note": "network size and optimizer settings are engineering defaults",
    })
    return EXIT_OK


def cmd_impute(args) -> int:
    _require(args, "input", "checkpoint")
    out = _out_dir(args)
    loaded = load_model(args.checkpoint)
    try:
        ds = load_dataset(args.input, schema=loaded.schema)
    except SchemaError as exc:
        raise SchemaError(f"{args.input} does not match the checkpoint schema: {exc}") from exc
    config = _sampler_config(args)
    result = impute_dataset(ds, loaded.model, loaded.schedule, config,
                            schema_hash=loaded.meta["schema_hash"])
    names = ds.schema.names
    write_csv(out / "completed.csv", names, result.values)
    write_csv(out / "provenance.csv", ["row", "column", "status"], result.provenance(names))
    timing = {"wall_time_s": result.wall_time_s, "rows_imputed": int(result.generated.any(axis=1).sum()),
              "sampler": config.to_dict()}
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    _write_run_config(out, args, {"sampler": config.to_dict(), "schedule": loaded.schedule.to_dict()})
    log.info("imputed %d cells in %.3fs", int(result.generated.sum()), result.wall_time_s)
    return EXIT_OK


def _eval_schema(args) -> Schema | None:
    if args.checkpoint:
        return load_model(args.checkpoint).schema
    if args.schema:
        return Schema.from_dict(json.loads(Path(args.schema).read_text()))
    return None


def cmd_eval(args) -> int:
    _require(args, "input", "truth", "mask")
    out = _out_dir(args)
    schema = _eval_schema(args)
    imputed = load_dataset(args.input, schema=schema)
    truth = load_dataset(args.input, schema=imputed.schema, truth_path=args.truth, mask_path=args.mask)
    enc, _ = encode_matrix(imputed.values, imputed.schema)
    wall = None
    if args.timing:
        wall = json.loads(Path(args.timing).read_text()).get("wall_time_s")
    report = evaluate(truth, [enc], wall_time_s=wall,
                      config={"completed": str(args.input), "schema_hash": imputed.schema.schema_hash})
    (out / "metrics.json").write_text(report.to_json() + "\n")
    _write_run_config(out, args, {})
    print(report.to_json())
    return EXIT_OK


def _grid(args, etas, steps_list, samples_list) -> int:
    _require(args, "input", "checkpoint", "truth", "mask")
    out = _out_dir(args)
    loaded = load_model(args.checkpoint)
    ds = load_dataset(args.input, schema=loaded.schema, truth_path=args.truth, mask_path=args.mask)
    rows = []
    for n_samples in samples_list:
        rows += benchmark_grid(ds, loaded.model, loaded.schedule, etas, steps_list, args.repeats,
                               n_samples=n_samples, init_seed=args.init_seed,
                               distinct_seeds=not args.fixed_seed, threads=args.threads)
    write_grid(out / "grid.csv", rows)
    _write_run_config(out, args, {"etas": etas, "steps": steps_list, "samples": samples_list})
    return EXIT_OK


def cmd_ablate(args) -> int:
    return _grid(args, _float_list(args.etas), _int_list(args.steps_list), [args.samples])


def cmd_bench(args) -> int:
    return _grid(args, _float_list(args.etas), _int_list(args.steps_list), _int_list(args.samples_list))


# -- parser ------------------------------------------------------------------

def _add_sampler_flags(p) -> None:
    p.add_argument("--eta", type=float, default=0.0, help="sampler stochasticity (0 = deterministic)")
    p.add_argument("--steps", type=int, default=None, help="sampling steps (default: T)")
    p.add_argument("--samples", type=int, default=1, help="samples per row")
    p.add_argument("--agg", choices=("single", "median"), default=None,
                   help="aggregation (default: single for 1 sample, else median)")
    p.add_argument("--sampler", choices=("ddim", "ddpm"), default="ddim")
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="row-level sampling threads")


def _add_grid_flags(p, etas: str, steps: str) -> None:
    p.add_argument("input", nargs="?", help="masked CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--truth", help="truth sidecar from `mask`")
    p.add_argument("--mask", help="mask sidecar from `mask`")
    p.add_argument("--etas", default=etas, help="comma-separated eta values")
    p.add_argument("--steps-list", default=steps, help="comma-separated step counts")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--fixed-seed", action="store_true", help="reuse --init-seed for every repeat")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="missddim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"missddim {__version__} (checkpoint format {MAGIC.decode().strip()})")
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = {}

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", required=False, default=None, help="output directory")
        p.add_argument("--config", help="replay a previous run_config.json")
        p.set_defaults(func=func)
        parser.subcommands[name] = p
        return p

    p = command("mask", cmd_mask, "simulate MCAR missingness")
    p.add_argument("input", nargs="?", help="fully or partially observed CSV")
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--columns", nargs="+", default=None, help="restrict masking to these columns")

    p = command("train", cmd_train, "train the noise predictor")
    p.add_argument("input", nargs="?", help="CSV with missing cells")
    p.add_argument("--schema", help="schema JSON to reuse instead of inferring one")
    p.add_argument("--categorical", nargs="+", default=None, help="force columns to categorical")
    p.add_argument("--schedule", choices=("quadratic", "linear"), default="quadratic")
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--beta-min", type=float, default=1e-4)
    p.add_argument("--beta-max", type=float, default=0.3)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--time-embed-dim", type=int, default=32)
    p.add_argument("--activation", choices=("silu", "tanh"), default="silu")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--adam-beta1", type=float, default=0.9)
    p.add_argument("--adam-beta2", type=float, default=0.999)
    p.add_argument("--adam-eps", type=float, default=1e-8)
    p.add_argument("--mask-ratio-min", type=float, default=0.1)
    p.add_argument("--mask-ratio-max", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", help="checkpoint to continue training from")

    p = command("impute", cmd_impute, "fill missing cells")
    p.add_argument("input", nargs="?", help="CSV with missing cells")
    p.add_argument("--checkpoint")
    _add_sampler_flags(p)

    p = command("eval", cmd_eval, "score a completed CSV")
    p.add_argument("input", nargs="?", help="completed CSV")
    p.add_argument("--truth")
    p.add_argument("--mask")
    p.add_argument("--checkpoint", help="take standardization statistics from this checkpoint")
    p.add_argument("--schema", help="or from this schema JSON")
    p.add_argument("--timing", help="timing.json from `impute` to include")

    p = command("ablate", cmd_ablate, "eta x steps RMSE grid")
    _add_grid_flags(p, "0,0.5,1", "25,50,75,100")
    p.add_argument("--samples", type=int, default=1)

    p = command("bench", cmd_bench, "sampling-time grid over steps and sample counts")
    _add_grid_flags(p, "0", "20,50,100")
    p.add_argument("--samples-list", default="1", help="comma-separated sample counts")
    return parser


def _parse(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config:
        stored = json.loads(Path(args.config).read_text())
        if stored.get("command") != args.command:
            raise ParameterError(f"--config was written by {stored.get('command')!r}, not {args.command!r}")
        parser.subcommands[args.command].set_defaults(**stored["args"])
        args = parser.parse_args(argv)
    if args.out is None:
        raise ParameterError("missing required argument --out")
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(message)s", stream=sys.stderr)
        return args.func(args)
    except (ParameterError, ConfigurationError, SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MissDDIMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
