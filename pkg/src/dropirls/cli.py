"""``dropirls`` command line.

Commands: train, predict, cv, nightmare, compare-explicit.  Every flag maps
to an :class:`~dropirls.experiments.ExperimentConfig` field; a JSON file given
with ``--config`` overrides the flags.  Results are JSON lines written to
``--out`` (or stdout).  ``DROPIRLS_THREADS`` sets the work-pool size.

Exit status: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import experiments as ex
from .data import DataError, Dataset, Task, load_sparse
from .linear import TrainingError
from .modelio import ModelFormatError, load_model, save_model
from .noise import NoiseParameterError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
BUILTIN_PREFIX = "builtin:"

log = logging.getLogger("dropirls")


class ConfigError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


_HELP = {
    "task": "binary, multiclass or regression (inferred from labels if omitted)",
    "arch": "linear or latent",
    "loss": "hinge, logistic or eps_insensitive",
    "noise": "dropout, gaussian, laplace, poisson or none",
    "q": "noise level for train / compare-explicit",
    "c": "loss weight for train / compare-explicit",
    "reweight_mode": "adaptive or fixed_quadratic",
    "train": f"training data (libsvm text or .csv); {BUILTIN_PREFIX}toy for the bundled set",
    "test": "test data",
    "model_path": "model file written by train/cv, read by predict/nightmare",
    "out": "JSON-lines result file (default stdout)",
}


def _element_type(name: str):
    return {"q_grid": float, "c_grid": float, "K_grid": int, "alpha_reg_grid": float, "seeds": int,
            "deletion_grid": float, "M_grid": int}[name]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dropirls", description="Marginalized-dropout IRLS trainers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    defaults = ex.ExperimentConfig()
    for cmd in ("train", "predict", "cv", "nightmare", "compare-explicit"):
        p = sub.add_parser(cmd)
        p.add_argument("--config", help="JSON file; its keys override flags")
        p.add_argument("--predictions", help="predict: write one prediction per line here")
        for f in fields(ex.ExperimentConfig):
            flag = "--" + f.name.replace("_", "-")
            default = getattr(defaults, f.name)
            if isinstance(default, list):
                p.add_argument(flag, dest=f.name, nargs="+", type=_element_type(f.name), default=None)
            elif f.name in ("task", "train", "test", "model_path", "out"):
                p.add_argument(flag, dest=f.name, default=None, help=_HELP.get(f.name))
            else:
                p.add_argument(flag, dest=f.name, type=type(default), default=None, help=_HELP.get(f.name))
    return parser


def resolve_config(args: argparse.Namespace) -> ex.ExperimentConfig:
    values = {f.name: getattr(args, f.name) for f in fields(ex.ExperimentConfig)
              if getattr(args, f.name, None) is not None}
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(overrides) - set(ex.ExperimentConfig.field_names())
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(overrides)
    try:
        return ex.ExperimentConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _load(path: str | None, what: str, task: str | None) -> Dataset:
    if path is None:
        raise ConfigError(f"--{what} is required for this command")
    if path.startswith(BUILTIN_PREFIX):
        name = path[len(BUILTIN_PREFIX):]
        ref = resources.files("dropirls") / "datasets" / f"{name}.svm"
        if not ref.is_file():
            raise ConfigError(f"no bundled dataset named {name!r}")
        with resources.as_file(ref) as real:
            return load_sparse(real, task)
    if not Path(path).is_file():
        raise ConfigError(f"{what} file not found: {path}")
    return load_sparse(path, task)


def _align(train: Dataset, test: Dataset) -> Dataset:
    """Pad or reject a test set whose width differs from the training set."""
    if test.dim == train.dim:
        return test
    if test.dim < train.dim:
        import scipy.sparse as sp

        X = sp.hstack([test.X, sp.csr_matrix((len(test), train.dim - test.dim))], format="csr")
        return Dataset(X, test.y, test.task, test.n_classes)
    raise DataError(f"test set has {test.dim} features, training set {train.dim}")


def _check_finite(model) -> None:
    parts = getattr(model, "models", None) or (model,)
    for m in parts:
        arrays = [m.w, np.atleast_1d(m.b)] + ([m.alpha] if hasattr(m, "alpha") else [])
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise NumericError("training produced non-finite parameters")


class _Sink:
    """Single serialized writer for result records."""

    def __init__(self, path: str | None):
        self.path = path
        self.fh = open(path, "w") if path else sys.stdout

    def write(self, rec: dict) -> None:
        self.fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self):
        if self.path:
            self.fh.close()


def _run(command: str, exp: ex.ExperimentConfig, args) -> list[dict]:
    if command == "train":
        train = _load(exp.train, "train", exp.task)
        test = _align(train, _load(exp.test, "test", exp.task)) if exp.test else None
        model, rec = ex.run_train(exp, train, test)
        _check_finite(model)
        if exp.model_path:
            save_model(model, exp.model_path)
        return [rec]
    if command == "predict":
        if not exp.model_path or not Path(exp.model_path).is_file():
            raise ConfigError("predict needs an existing --model-path")
        model = load_model(exp.model_path)
        data = _load(exp.test or exp.train, "test", exp.task)
        pred = ex.predictions(model, data.X, data.task)
        text = "".join(f"{v:.17g}\n" for v in pred)
        if args.predictions:
            Path(args.predictions).write_text(text)
        elif not exp.out:
            sys.stdout.write(text)
            return []
        return [ex.record("predict", "predict", exp, seed=None, metrics={"test": ex.evaluate(model, data)})]
    if command == "cv":
        train = _load(exp.train, "train", exp.task)
        model, _, records = ex.run_cv(exp, train)
        _check_finite(model)
        if exp.test:
            records[-1]["metrics"]["test"] = ex.evaluate(model, _align(train, _load(exp.test, "test", exp.task)))
        if exp.model_path:
            save_model(model, exp.model_path)
        return records
    if command == "nightmare":
        if exp.model_path and Path(exp.model_path).is_file() and not exp.train:
            model = load_model(exp.model_path)
            return ex.run_nightmare_fixed(exp, model, _load(exp.test, "test", exp.task))
        train = _load(exp.train, "train", exp.task)
        return ex.run_nightmare(exp, train, _align(train, _load(exp.test, "test", exp.task)))
    if command == "compare-explicit":
        train = _load(exp.train, "train", exp.task)
        return ex.run_compare_explicit(exp, train, _align(train, _load(exp.test, "test", exp.task)))
    raise ConfigError(f"unknown command {command}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        exp = resolve_config(args)
        with np.errstate(over="raise"):
            records = _run(args.command, exp, args)
    except (ConfigError, NoiseParameterError) as exc:
        print(f"dropirls: parameter error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, TrainingError, ModelFormatError, OSError) as exc:
        print(f"dropirls: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"dropirls: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"dropirls: parameter error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sink = _Sink(exp.out)
    try:
        for rec in records:
            sink.write(rec)
    finally:
        sink.close()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
