"""Command-line frontend for encoding, merging, training, and evaluation.

Every command resolves its parameters in three layers: built-in defaults,
then a config file section named after the command (flat key=value, INI
style), then explicit flags.  The effective parameters of each run are
echoed to ``<out-dir>/<command>_config.txt`` so any result can be
reproduced from its echo alone.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
inputs), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

import numpy as np

from ._container import ContainerError
from .bundle import (
    SyntheticSpec,
    generate_synthetic,
    make_split,
    merge_modalities,
    read_bundle,
    split_from_file,
    write_bundle,
)
from .estimators import (
    MultipartClassifier,
    cross_validate_subjects,
    evaluate,
    evaluate_split,
    fit_bundle,
    load_model,
    report_part_selection,
    save_model,
)
from .layout import FeatureLayout, LayoutError
from .objective import VARIANTS, ObjectiveConfig, make_objective, one_hot
from .optimize import check_gradient
from .skeleton import DegenerateSkeletonError, PyramidConfig, encode_bundle, read_manifest

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    """Bad parameter values or combinations; exits with code 1."""


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1 (argparse's default is 2, reserved for data errors)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------------
# config file + flag layering


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    lowered = str(value).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {value!r}")


def _read_config(path, section) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file {path} does not exist")
    cp = configparser.ConfigParser()
    cp.read(path)
    if not cp.has_section(section):
        return {}
    return {k.replace("-", "_"): v for k, v in cp.items(section)}


def _resolve(args, config: dict, schema: dict) -> dict:
    """defaults < config file section < explicit flags."""
    effective = {}
    for name, (default, cast) in schema.items():
        value = getattr(args, name, None)
        if value is None and name in config:
            value = config[name]
        if value is None:
            effective[name] = default
        else:
            try:
                effective[name] = cast(value)
            except UsageError:
                raise
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad value for {name}: {exc}") from exc
    return effective


def _write_echo(out_dir, command, params) -> str:
    os.makedirs(out_dir, exist_ok=True)
    cp = configparser.ConfigParser()
    cp[command] = {
        k: ("" if v is None else str(v)) for k, v in sorted(params.items())
    }
    path = os.path.join(out_dir, f"{command}_config.txt")
    with open(path, "w") as fh:
        cp.write(fh)
    return path


# ----------------------------------------------------------------------
# shared pieces


def _choice(*allowed):
    def cast(value):
        value = str(value)
        if value not in allowed:
            raise UsageError(f"expected one of {allowed}, got {value!r}")
        return value
    return cast


TRAIN_SCHEMA = {
    "variant": (
        "mmmp", _choice("mmmp", "mp", "l1", "l2", "single-modality")
    ),
    "lambda1": (0.05, float),
    "lambda2": (2.0, float),
    "lambda3": (1.0, float),
    "warm_lambda1": (None, float),
    "warm_lambda2": (None, float),
    "modality": (None, str),
    "two_step": ("auto", _choice("auto", "on", "off")),
    "epsilon": (1e-8, float),
    "standardize": (True, _as_bool),
    "memory": (10, int),
    "max_iters": (500, int),
    "grad_tol": (1e-5, float),
    "f_tol": (1e-9, float),
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant",
                   choices=("mmmp", "mp", "l1", "l2", "single-modality"))
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--lambda3", type=float)
    p.add_argument("--warm-lambda1", type=float, dest="warm_lambda1")
    p.add_argument("--warm-lambda2", type=float, dest="warm_lambda2")
    p.add_argument("--modality", help="train on this modality's columns only")
    p.add_argument("--two-step", choices=("auto", "on", "off"), dest="two_step")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--standardize", choices=("true", "false"))
    p.add_argument("--memory", type=int)
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--grad-tol", type=float, dest="grad_tol")
    p.add_argument("--f-tol", type=float, dest="f_tol")


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--split-rule", choices=("first-five", "odd"),
                       dest="split_rule")
    group.add_argument("--split-file", dest="split_file")


def _make_model(params) -> MultipartClassifier:
    variant = params["variant"]
    modality = params["modality"]
    if variant == "single-modality":
        if not modality:
            raise UsageError("--variant single-modality requires --modality")
        variant = "mmmp"
    two_step = {"auto": None, "on": True, "off": False}[params["two_step"]]
    return MultipartClassifier(
        variant=variant,
        lambda1=params["lambda1"],
        lambda2=params["lambda2"],
        lambda3=params["lambda3"],
        warm_lambda1=params["warm_lambda1"],
        warm_lambda2=params["warm_lambda2"],
        two_step=two_step,
        modality=modality,
        epsilon=params["epsilon"],
        standardize=params["standardize"],
        memory=params["memory"],
        max_iters=params["max_iters"],
        grad_tol=params["grad_tol"],
        f_tol=params["f_tol"],
    )


def _load_split(bundle, params):
    if params.get("split_file"):
        return split_from_file(bundle, params["split_file"])
    if params.get("split_rule"):
        return make_split(bundle, params["split_rule"])
    return None


def _display_classes(model, bundle):
    """Class names for reports: bundle names where the labels index them."""
    names = []
    for c in model.classes_:
        if (bundle.class_names and np.issubdtype(np.asarray([c]).dtype, np.integer)
                and 0 <= int(c) < len(bundle.class_names)):
            names.append(bundle.class_names[int(c)])
        else:
            names.append(str(c))
    return names


def _write_table(path, text) -> None:
    with open(path, "w") as fh:
        fh.write(text)


# ----------------------------------------------------------------------
# commands


def cmd_encode(args) -> int:
    config = _read_config(args.config, "encode")
    schema = {"levels": (3, int), "coefficients": (4, int)}
    params = _resolve(args, config, schema)
    cfg = PyramidConfig(levels=params["levels"],
                        coefficients=params["coefficients"])
    sequences = read_manifest(args.manifest)
    bundle = encode_bundle(sequences, cfg)
    write_bundle(bundle, args.out)
    _write_echo(args.out_dir, "encode",
                dict(params, manifest=args.manifest, out=args.out))
    print(f"encoded {bundle.n_samples} sequences -> {bundle.n_features} "
          f"features ({bundle.layout.n_parts} parts) in {args.out}")
    return EXIT_OK


def cmd_merge(args) -> int:
    bundles = [read_bundle(p) for p in args.bundles]
    merged = merge_modalities(bundles)
    write_bundle(merged, args.out)
    _write_echo(args.out_dir, "merge",
                {"inputs": ",".join(args.bundles), "out": args.out})
    print(f"merged {len(bundles)} bundles -> {merged.n_features} features, "
          f"modalities {', '.join(merged.layout.modality_ids)} in {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _read_config(args.config, "train")
    params = _resolve(args, config, dict(
        TRAIN_SCHEMA,
        split_rule=(None, str),
        split_file=(None, str),
    ))
    bundle = read_bundle(args.bundle)
    split = _load_split(bundle, params)
    model = _make_model(params)
    fit_bundle(model, bundle, split)

    model_path = args.model or os.path.join(args.out_dir, "model.bin")
    save_model(model, model_path)
    report = report_part_selection(model)
    report_path = os.path.join(args.out_dir, "part_selection.tsv")
    _write_table(report_path, report.to_table())
    _write_echo(args.out_dir, "train",
                dict(params, bundle=args.bundle, model=model_path))

    print(f"fit variant={params['variant']} in {model.n_iter_} iterations "
          f"({model.termination_}), objective {model.final_objective_:.6g}")
    if split is not None and split.test_indices.size:
        rep = evaluate_split(model, bundle, split)
        print(f"test accuracy: {100 * rep.accuracy:.2f}% "
              f"({rep.n_correct}/{rep.n_test})")
    print(f"model: {model_path}")
    print(f"part selection: {report_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _read_config(args.config, "eval")
    params = _resolve(args, config, {
        "split_rule": (None, str),
        "split_file": (None, str),
    })
    model = load_model(args.model)
    bundle = read_bundle(args.bundle)
    split = _load_split(bundle, params)
    if split is None:
        rep = evaluate(model, bundle.X, bundle.labels)
    else:
        rep = evaluate_split(model, bundle, split)
    names = _display_classes(model, bundle)
    print(rep.to_text(class_names=names))

    lines = ["true\\pred\t" + "\t".join(names)]
    for name, row in zip(names, rep.confusion):
        lines.append(name + "\t" + "\t".join(str(int(v)) for v in row))
    confusion_path = os.path.join(args.out_dir, "confusion.tsv")
    _write_table(confusion_path, "\n".join(lines) + "\n")
    _write_echo(args.out_dir, "eval",
                dict(params, model=args.model, bundle=args.bundle))
    print(f"confusion matrix: {confusion_path}")
    return EXIT_OK


def cmd_cv(args) -> int:
    config = _read_config(args.config, "cv")
    params = _resolve(args, config, dict(
        TRAIN_SCHEMA,
        train_count=(5, int),
        workers=(1, int),
    ))
    bundle = read_bundle(args.bundle)
    model = _make_model(params)
    result = cross_validate_subjects(
        model, bundle, train_count=params["train_count"],
        n_jobs=params["workers"],
    )
    results_path = os.path.join(args.out_dir, "cv_results.tsv")
    _write_table(results_path, result.to_table())
    _write_echo(args.out_dir, "cv", dict(params, bundle=args.bundle))
    print(f"{len(result.accuracies)} splits: {result.format_mean_std()}")
    print(f"per-split results: {results_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = _read_config(args.config, "gradcheck")
    params = _resolve(args, config, {
        "seed": (0, int),
        "points": (20, int),
        "epsilon": (1e-8, float),
        "threshold": (1e-5, float),
        "step": (1e-6, float),
    })
    rng = np.random.default_rng(params["seed"])
    layout = FeatureLayout([
        (f"p{j}", [("mod0", 3), ("mod1", 3)]) for j in range(4)
    ])
    n, d, C = 8, layout.total_dim, 3
    X = rng.standard_normal((n, d))
    Y = one_hot(rng.integers(0, C, size=n), C)

    _write_echo(args.out_dir, "gradcheck", params)
    worst = 0.0
    for variant in VARIANTS:
        cfg = ObjectiveConfig(variant=variant, lambda1=0.7, lambda2=1.3,
                              lambda3=0.9, epsilon=params["epsilon"])
        anchor = rng.standard_normal((d, C)) if variant == "fine_tune" else None
        fun = make_objective(X, Y, layout, cfg, anchor)
        err = max(
            check_gradient(fun, rng.standard_normal(d * C), step=params["step"])
            for _ in range(params["points"])
        )
        worst = max(worst, err)
        status = "ok" if err < params["threshold"] else "FAIL"
        print(f"{variant:>10s}: max relative error {err:.3e}  [{status}]")
    if worst >= params["threshold"]:
        print(f"gradient check failed: {worst:.3e} >= {params['threshold']:.1e}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_synth(args) -> int:
    config = _read_config(args.config, "synth")
    params = _resolve(args, config, {
        "parts": (10, int),
        "modalities": (2, int),
        "block_dim": (8, int),
        "classes": (5, int),
        "train": (400, int),
        "test": (400, int),
        "active": (3, int),
        "noise": (0.1, float),
        "margin": (6.0, float),
        "subjects": (10, int),
        "seed": (0, int),
    })
    spec = SyntheticSpec(
        n_parts=params["parts"], n_modalities=params["modalities"],
        block_dim=params["block_dim"], n_classes=params["classes"],
        n_train=params["train"], n_test=params["test"],
        active_parts=params["active"], noise=params["noise"],
        seed=params["seed"], n_subjects=params["subjects"],
        margin=params["margin"],
    )
    ds = generate_synthetic(spec)
    write_bundle(ds.bundle, args.out)
    truth_path = os.path.join(args.out_dir, "synth_truth.json")
    with open(truth_path, "w") as fh:
        json.dump({
            "active_parts": [list(parts) for parts in ds.active_parts],
            "train_rows": [int(ds.train_indices[0]), int(ds.train_indices[-1])],
            "test_rows": [int(ds.test_indices[0]), int(ds.test_indices[-1])],
        }, fh, indent=2)
    _write_echo(args.out_dir, "synth", dict(params, out=args.out))
    print(f"synthetic bundle: n={ds.bundle.n_samples} d={ds.bundle.n_features} "
          f"classes={spec.n_classes} in {args.out}")
    print(f"planted supports: {truth_path}")
    return EXIT_OK


def cmd_tune(args) -> int:
    config = _read_config(args.config, "tune")
    schema = dict(TRAIN_SCHEMA)
    del schema["lambda1"], schema["lambda2"]
    params = _resolve(args, config, dict(
        schema,
        lambda1_grid=("0.01,0.05,0.25", str),
        lambda2_grid=("0.5,2.0,8.0", str),
        split_rule=("first-five", str),
        split_file=(None, str),
    ))
    bundle = read_bundle(args.bundle)
    split = _load_split(bundle, params)
    if split.test_indices.size == 0:
        raise ValueError("tuning needs a split with a non-empty test side")
    grid1 = [float(v) for v in params["lambda1_grid"].split(",") if v.strip()]
    grid2 = [float(v) for v in params["lambda2_grid"].split(",") if v.strip()]
    if not grid1 or not grid2:
        raise UsageError("lambda grids must be non-empty comma lists")

    rows, best = [], None
    for lam1 in grid1:
        for lam2 in grid2:
            model = _make_model(dict(params, lambda1=lam1, lambda2=lam2))
            fit_bundle(model, bundle, split)
            acc = evaluate_split(model, bundle, split).accuracy
            rows.append((lam1, lam2, acc))
            if best is None or acc > best[2]:
                best = (lam1, lam2, acc)

    lines = ["lambda1\tlambda2\taccuracy"]
    lines += [f"{a}\t{b}\t{acc:.6f}" for a, b, acc in rows]
    results_path = os.path.join(args.out_dir, "tune_results.tsv")
    _write_table(results_path, "\n".join(lines) + "\n")
    _write_echo(args.out_dir, "tune", dict(params, bundle=args.bundle))
    print(f"best: lambda1={best[0]} lambda2={best[1]} "
          f"accuracy {100 * best[2]:.2f}%")
    print(f"grid results: {results_path}")
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="partlearn",
                     description="structured-sparsity multipart classification")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI config file; section [%s]" % name)
        p.add_argument("--out-dir", default=".", dest="out_dir",
                       help="directory for reports and the config echo")
        p.set_defaults(func=func)
        return p

    p = add("encode", cmd_encode, "skeleton manifest -> feature bundle")
    p.add_argument("manifest")
    p.add_argument("out")
    p.add_argument("--levels", type=int)
    p.add_argument("--coefficients", type=int)

    p = add("merge", cmd_merge, "join per-modality bundles")
    p.add_argument("bundles", nargs="+")
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "fit a classifier on a bundle")
    p.add_argument("bundle")
    p.add_argument("--model", help="output model path (default <out-dir>/model.bin)")
    _add_split_flags(p)
    _add_train_flags(p)

    p = add("eval", cmd_eval, "evaluate a saved model")
    p.add_argument("model")
    p.add_argument("bundle")
    _add_split_flags(p)

    p = add("cv", cmd_cv, "subject-wise cross validation")
    p.add_argument("bundle")
    p.add_argument("--train-count", type=int, dest="train_count")
    p.add_argument("--workers", type=int)
    _add_train_flags(p)

    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient audit")
    p.add_argument("--seed", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--step", type=float)

    p = add("synth", cmd_synth, "generate a planted-support synthetic bundle")
    p.add_argument("out")
    p.add_argument("--parts", type=int)
    p.add_argument("--modalities", type=int)
    p.add_argument("--block-dim", type=int, dest="block_dim")
    p.add_argument("--classes", type=int)
    p.add_argument("--train", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--active", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--subjects", type=int)
    p.add_argument("--seed", type=int)

    p = add("tune", cmd_tune, "grid-search lambdas on a subject split")
    p.add_argument("bundle")
    p.add_argument("--lambda1-grid", dest="lambda1_grid")
    p.add_argument("--lambda2-grid", dest="lambda2_grid")
    _add_split_flags(p)
    _add_train_flags(p)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, IsADirectoryError, PermissionError,
            ContainerError, LayoutError, DegenerateSkeletonError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
