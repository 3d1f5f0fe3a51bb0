"""Command-line entry point: ``ace-cfe explain`` and ``ace-cfe benchmark``.

Exit codes: 0 valid counterfactual (or benchmark written), 2 no valid
counterfactual, 1 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from .blackbox import KnnBlackBox, SubprocessBlackBox
from .engine import EngineConfig, run
from .errors import AceError, SchemaError
from .growing_spheres import GsConfig
from .schema import Dataset, FeatureSchema, encode_instance, load_csv, load_schema

EXIT_OK, EXIT_USAGE, EXIT_NO_CFE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class UsageError(Exception):
    pass


def _add_common(p):
    p.add_argument("--data", required=True, help="CSV with a header row and a label column")
    p.add_argument("--schema", required=True, help="JSON feature schema")
    p.add_argument("--blackbox", default="knn",
                   help="'knn' (k-NN fitted on --data) or 'subprocess:<command>'")
    p.add_argument("--k", type=int, default=5, help="neighbours for the k-NN black box")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (fallback: $ACE_SEED, then 0)")
    p.add_argument("--n0", type=int, default=None)
    p.add_argument("--max-queries", type=int, default=None)
    p.add_argument("--init", choices=("truncated_normal", "dataset"), default=None)
    # hyperparameter names follow the usual symbols
    p.add_argument("--lambda0", type=float, default=None)
    p.add_argument("--lambda-max", type=float, default=None)
    p.add_argument("--p", type=float, default=None, help="penalty growth exponent")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--mc", type=int, default=None, help="Monte-Carlo samples")
    p.add_argument("--ss", type=int, default=None, help="Sobol samples")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--tau", type=float, default=None, help="LOF inlier threshold")
    p.add_argument("--restarts", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ace-cfe", description="Query-efficient counterfactual explanations")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ex = sub.add_parser("explain", help="explain one instance")
    _add_common(ex)
    ex.add_argument("--instance", required=True,
                    help="JSON list of encoded values, JSON object of raw values, or a row index")
    ex.add_argument("--out", default=None, help="also write the JSON result here")

    bm = sub.add_parser("benchmark", help="run the fixed- or mixed-instance protocol")
    _add_common(bm)
    bm.add_argument("--methods", default="ace,gs", help="comma-separated subset of ace,gs")
    bm.add_argument("--mode", choices=("fixed", "mixed"), default="fixed")
    bm.add_argument("--instance", default=None, help="instance for --mode fixed")
    bm.add_argument("--repeats", type=int, default=10)
    bm.add_argument("--n-instances", type=int, default=10)
    bm.add_argument("--out", default="benchmark.csv", help="records CSV path")
    bm.add_argument("--dataset-name", default=None)
    return parser


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("ACE_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"ACE_SEED must be an integer, got {env!r}") from None


def engine_config(args) -> EngineConfig:
    overrides = {
        "n0": args.n0, "max_queries": args.max_queries, "init": args.init,
        "lambda0": args.lambda0, "lambda_max": args.lambda_max, "growth_p": args.p,
        "epsilon": args.epsilon, "mc": args.mc, "sobol_n": args.ss, "beta": args.beta,
        "tau": args.tau, "restarts": args.restarts,
    }
    kw = {k: v for k, v in overrides.items() if v is not None}
    try:
        return EngineConfig(rng_seed=_seed(args), **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def parse_instance(text: str, schema: FeatureSchema, data: Dataset) -> tuple[np.ndarray, int | None]:
    """Returns the encoded instance and its row index when given by index."""
    text = text.strip()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        raise UsageError(f"--instance is neither JSON nor a row index: {text!r}") from None
    if isinstance(obj, bool):
        raise UsageError("--instance must be a list, an object or an integer")
    if isinstance(obj, int):
        if not 0 <= obj < len(data):
            raise UsageError(f"row index {obj} out of range for {len(data)} rows")
        return np.array(data.X[obj]), obj
    if isinstance(obj, dict):
        return encode_instance({k: str(v) for k, v in obj.items()}, schema), None
    if isinstance(obj, list):
        return np.asarray(obj, dtype=float), None
    raise UsageError("--instance must be a list, an object or an integer")


def _blackbox_factory(args, schema_path, n_features):
    spec = args.blackbox
    if spec == "knn":
        return lambda train: KnnBlackBox(train.X, train.t, k=args.k)
    if spec.startswith("subprocess:"):
        cmd = spec[len("subprocess:"):].strip()
        if not cmd:
            raise UsageError("subprocess black box needs a command")
        return lambda train: SubprocessBlackBox(cmd, schema_path, n_features)
    raise UsageError(f"unknown black box {spec!r}")


def _load(args):
    schema = load_schema(args.schema)
    data = load_csv(args.data, schema)
    return schema, data


def cmd_explain(args) -> int:
    schema, data = _load(args)
    x, _row = parse_instance(args.instance, schema, data)
    config = engine_config(args)
    bb = _blackbox_factory(args, args.schema, len(schema))(data)
    try:
        result = run(x, schema, bb, config, data=data)
    finally:
        close = getattr(bb, "close", None)
        if close:
            close()
    text = result.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    sys.stdout.write(text + "\n")
    return EXIT_OK if result.valid else EXIT_NO_CFE


def cmd_benchmark(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in bench.METHODS]
    if not methods or unknown:
        raise UsageError(f"unknown method(s) {unknown}; expected a subset of {bench.METHODS}")
    schema, data = _load(args)
    config = engine_config(args)
    gs_config = GsConfig(rng_seed=config.rng_seed)
    if args.max_queries is not None:
        gs_config = replace(gs_config, max_queries=args.max_queries)
    factory = _blackbox_factory(args, args.schema, len(schema))
    if args.mode == "mixed" and args.blackbox != "knn":
        raise UsageError("the mixed-instance test retrains the black box and needs --blackbox knn")
    name = args.dataset_name or Path(args.data).stem
    records = []
    for m in methods:
        if args.mode == "fixed":
            if args.instance is None:
                raise UsageError("--mode fixed needs --instance")
            x, row = parse_instance(args.instance, schema, data)
            seeds = [config.rng_seed + i for i in range(args.repeats)]
            records += bench.run_fixed_test(m, data, schema, x, args.repeats, seeds, factory,
                                            config, gs_config, name,
                                            -1 if row is None else row)
        else:
            records += bench.run_mixed_test(m, data, schema, args.n_instances, config.rng_seed,
                                            factory, config, gs_config, name)
    bench.write_records(args.out, records)
    sys.stdout.write(bench.render_table(records) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "explain":
            return cmd_explain(args)
        return cmd_benchmark(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"ace-cfe: error: {exc}\n")
        return EXIT_USAGE
    except (OSError, SchemaError) as exc:
        sys.stderr.write(f"ace-cfe: error: {exc}\n")
        return EXIT_USAGE
    except AceError as exc:
        sys.stderr.write(f"ace-cfe: {type(exc).__name__}: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
