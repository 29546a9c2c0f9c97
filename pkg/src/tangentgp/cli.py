"""Command line front end.

One JSON config document describes a run (architecture, likelihood, prior
precision, split fractions, seeds, ...); file paths are given on the command
line so experiment records stay diff-able.  Commands are deterministic given
their inputs and seeds: everything except measured wall times is
byte-reproducible.  Errors exit with code 2 (configuration / IO) or 3
(numerical) and print a machine readable JSON object to stderr.

Commands
--------
train      fit an MLP by penalised MAP and write a checkpoint plus report
fit        build the sparse function-space posterior from a checkpoint
predict    write predictions CSV (x..., mean_c..., var_c..., prob_c...)
update     fold a new data CSV into a posterior without retraining
cl         run a sequence of tasks with the function-space regulariser
eval       metrics for a checkpoint or posterior on a labelled CSV
oracle-gp  dense all-points posterior predictions (verification aid)
plot       render a predictions CSV to a figure file
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import continual, datasets, metrics, posterior
from .datasets import Dataset, Normalization
from .errors import Error, MissingFile, SchemaError
from .likelihoods import Gaussian, make_likelihood
from .nets import NetworkSpec, TrainConfig, forward, load_checkpoint, save_checkpoint, train_map

# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

_SCHEMA = {
    "network": {"input_dim": "int", "output_dim": "int", "hidden": "list",
                "activation": "str", "bias": "bool"},
    "likelihood": {"kind": "str", "noise_variance": "number", "num_classes": "int"},
    "prior_precision": "number",
    "task": "str",
    "target_column": "str",
    "train": {"learning_rate": "number", "batch_size": "int", "max_epochs": "int",
              "patience": "int", "seed": "int", "lr_decay": "number"},
    "split": {"fractions": "list", "seed": "int", "normalize": "bool"},
    "inducing": {"count": "int", "seed": "int"},
    "fit": {"batch": "int"},
    "predict": {"samples": "int", "seed": "int", "batch": "int"},
    "mean_mode": "str",
    "update": {"train_data": "str"},
    "cl": {"tau": "number", "points_per_task": "int", "reg_metric": "str", "seed": "int",
           "tasks": "list", "buffer_out": "str",
           "synthetic": {"kind": "str", "n": "int", "num_classes": "int",
                         "classes_per_task": "int", "seed": "int", "spread": "number",
                         "radius": "number"}},
}


def _check_type(value, kind: str, path: str) -> None:
    ok = {
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "str": lambda v: isinstance(v, str),
        "bool": lambda v: isinstance(v, bool),
        "list": lambda v: isinstance(v, list),
    }[kind](value)
    if not ok:
        raise SchemaError(f"config key {path} must be {kind}, got {type(value).__name__}")


def _validate(doc, schema, path="") -> None:
    if not isinstance(doc, dict):
        raise SchemaError(f"config section {path or '<root>'} must be an object")
    for key in doc:
        if key not in schema:
            raise SchemaError(f"unknown config key {path}{key}")
    for key, kind in schema.items():
        if key not in doc:
            continue
        if isinstance(kind, dict):
            _validate(doc[key], kind, f"{path}{key}.")
        else:
            _check_type(doc[key], kind, f"{path}{key}")


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise MissingFile(f"config not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config is not valid JSON: {exc}") from None
    _validate(doc, _SCHEMA)
    return doc


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise SchemaError(f"config is missing required section {key!r}")
    return cfg[key]


def _network(cfg) -> NetworkSpec:
    sec = _require(cfg, "network")
    return NetworkSpec(
        input_dim=sec["input_dim"],
        output_dim=sec["output_dim"],
        hidden=tuple(sec.get("hidden", ())),
        activation=sec.get("activation", "tanh"),
        bias=sec.get("bias", True),
    )


def _train_config(cfg, seed_override=None) -> TrainConfig:
    sec = _require(cfg, "train")
    return TrainConfig(
        learning_rate=float(sec.get("learning_rate", 1e-3)),
        batch_size=int(sec.get("batch_size", 32)),
        max_epochs=int(sec.get("max_epochs", 500)),
        patience=int(sec.get("patience", 30)),
        prior_precision=float(_require(cfg, "prior_precision")),
        seed=int(seed_override if seed_override is not None else sec.get("seed", 0)),
        lr_decay=float(sec.get("lr_decay", 1.0)),
    )


def _split_three(cfg, data: Dataset):
    sec = cfg.get("split", {})
    fractions = tuple(sec.get("fractions", (0.7, 0.15, 0.15)))
    return datasets.split(data, fractions, seed=int(sec.get("seed", 0)),
                          normalize=bool(sec.get("normalize", True)))


# ---------------------------------------------------------------------------
# IO helpers
# ---------------------------------------------------------------------------


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def _report_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".report.json")


def _load_labelled(cfg, path) -> Dataset:
    return datasets.load_csv(path, _require(cfg, "target_column"), _require(cfg, "task"))


def _load_inputs(cfg, path):
    """Feature matrix from a CSV that may or may not carry the target column."""
    target = _require(cfg, "target_column")
    p = Path(path)
    if not p.exists():
        raise MissingFile(f"no such file: {p}")
    with p.open(newline="") as handle:
        header = next(csv.reader(handle), None)
    if header is None:
        raise MissingFile(f"{p} is empty")
    if target in [h.strip() for h in header]:
        data = _load_labelled(cfg, path)
        return data.X, data.y, data.feature_names
    rows = []
    with p.open(newline="") as handle:
        reader = csv.reader(handle)
        names = tuple(h.strip() for h in next(reader))
        for row in reader:
            rows.append([float(c) for c in row])
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(names)), None, names


def _load_posterior_with_norm(path, mean_mode=None):
    post, weights_ref = posterior.load_posterior(path)
    ref = Path(weights_ref)
    if not ref.is_absolute():
        ref = Path(path).parent / ref
    _, norm = load_checkpoint(ref)
    if mean_mode is not None:
        post.mean_mode = mean_mode
    return post, (None if norm is None else Normalization.from_dict(norm)), weights_ref


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_predictions_csv(out, names, x_raw, mean, var, extra_cols) -> None:
    names = list(names) if names else [f"x{j}" for j in range(x_raw.shape[1])]
    header = names + [f"mean_c{c}" for c in range(mean.shape[1])] + [f"var_c{c}" for c in range(var.shape[1])]
    for col_name, _ in extra_cols:
        header.append(col_name)
    lines = [",".join(header)]
    for i in range(x_raw.shape[0]):
        cells = [_fmt(v) for v in x_raw[i]]
        cells += [_fmt(v) for v in mean[i]]
        cells += [_fmt(v) for v in var[i]]
        for _, col in extra_cols:
            cells.append(_fmt(col[i]))
        lines.append(",".join(cells))
    Path(out).write_text("\n".join(lines) + "\n")


def _evaluate_predictions(likelihood, pred, y, norm) -> metrics.EvalReport:
    if isinstance(likelihood, Gaussian):
        mean, var = pred
        y = np.asarray(y, dtype=np.float64)
        if norm is not None and norm.y_mean is not None:
            mean, var = datasets.denormalize_predictions(mean[:, 0], var[:, 0], norm)
            y = y * norm.y_std + norm.y_mean
        else:
            mean, var = mean[:, 0], var[:, 0]
        return metrics.EvalReport(nlpd=metrics.nlpd_gaussian(mean, var, y))
    probs = pred
    return metrics.EvalReport(
        nlpd=metrics.nlpd_probs(probs, y),
        accuracy=metrics.accuracy(probs, y),
        ece=metrics.ece(probs, y),
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    spec = _network(cfg)
    likelihood = make_likelihood(_require(cfg, "likelihood"))
    tcfg = _train_config(cfg, args.seed)
    data = _load_labelled(cfg, args.data)
    train, val, test = _split_three(cfg, data)

    with metrics.Stopwatch() as timer:
        weights = train_map(train, spec, likelihood, tcfg, val)
    norm = train.normalization.to_dict() if train.normalization is not None else None
    save_checkpoint(weights, args.out, normalization=norm)

    f = forward(weights, test.X)
    if isinstance(likelihood, Gaussian):
        pred = likelihood.predictive(f, np.zeros_like(f))
        report = _evaluate_predictions(likelihood, pred, test.y, train.normalization)
    else:
        report = _evaluate_predictions(likelihood, likelihood.probs(f), test.y, None)
    report.wall_seconds = timer.seconds
    _write_json(_report_path(args.out), report.to_dict())
    return 0


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    likelihood = make_likelihood(_require(cfg, "likelihood"))
    weights, norm = load_checkpoint(args.model)
    data = _load_labelled(cfg, args.data)
    if norm is not None:
        data = datasets.apply_normalization(data, Normalization.from_dict(norm))
    sec = _require(cfg, "inducing")
    seed = int(args.seed if args.seed is not None else sec.get("seed", 0))
    inducing = posterior.sample_inducing(data.X, int(sec["count"]), seed)
    delta = float(_require(cfg, "prior_precision"))
    mean_mode = args.mode or cfg.get("mean_mode", "zero_mean")
    batch = int(cfg.get("fit", {}).get("batch", 128))
    if args.baseline == "subset":
        post = posterior.fit_subset(data, weights, likelihood, delta, inducing, mean_mode=mean_mode)
    else:
        post = posterior.fit(data, weights, likelihood, delta, inducing, batch=batch, mean_mode=mean_mode)
    posterior.save_posterior(post, args.out, weights_ref=str(args.model))
    return 0


def _predict_arrays(cfg, post, norm, x_raw, args):
    sec = cfg.get("predict", {})
    samples = int(sec.get("samples", 64))
    seed = int(args.seed if args.seed is not None else sec.get("seed", 0))
    batch = int(sec.get("batch", 128))
    x = datasets.normalize_inputs(x_raw, norm) if norm is not None else x_raw
    mean, var = post.predict_f(x, batch=batch)
    extra = []
    if isinstance(post.likelihood, Gaussian):
        _, pred_var = post.likelihood.predictive(mean, var)
        if norm is not None and norm.y_mean is not None:
            mean_o, var_o = datasets.denormalize_predictions(mean, var, norm)
            pred_var = pred_var * norm.y_std**2
        else:
            mean_o, var_o = mean, var
        extra.append(("pred_var", pred_var[:, 0]))
        return mean_o, var_o, extra
    probs = post.likelihood.expected_prob(mean, var, samples=samples, seed=seed)
    for c in range(probs.shape[1]):
        extra.append((f"prob_c{c}", probs[:, c]))
    return mean, var, extra


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    post, norm, _ = _load_posterior_with_norm(args.model, mean_mode=args.mode)
    x_raw, _, names = _load_inputs(cfg, args.data)
    mean, var, extra = _predict_arrays(cfg, post, norm, x_raw, args)
    _write_predictions_csv(args.out, names, x_raw, mean, var, extra)
    if args.plot:
        from .figures import render_predictions

        render_predictions(args.out, args.plot, train_csv=args.train_overlay,
                           target_column=cfg.get("target_column", "y"))
    return 0


def cmd_oracle_gp(args) -> int:
    cfg = load_config(args.config)
    likelihood = make_likelihood(_require(cfg, "likelihood"))
    weights, norm_doc = load_checkpoint(args.model)
    norm = Normalization.from_dict(norm_doc) if norm_doc is not None else None
    data = _load_labelled(cfg, args.data)
    if norm is not None:
        data = datasets.apply_normalization(data, norm)
    x_raw, _, names = _load_inputs(cfg, args.test)
    x = datasets.normalize_inputs(x_raw, norm) if norm is not None else x_raw
    delta = float(_require(cfg, "prior_precision"))
    mean_mode = args.mode or cfg.get("mean_mode", "zero_mean")
    sec = cfg.get("predict", {})
    mean, var = posterior.full_gp_predict(data, weights, likelihood, delta, x,
                                          batch=int(sec.get("batch", 128)), mean_mode=mean_mode)
    extra = []
    if isinstance(likelihood, Gaussian):
        _, pred_var = likelihood.predictive(mean, var)
        if norm is not None and norm.y_mean is not None:
            mean, var = datasets.denormalize_predictions(mean, var, norm)
            pred_var = pred_var * norm.y_std**2
        extra.append(("pred_var", pred_var[:, 0]))
    else:
        seed = int(args.seed if args.seed is not None else sec.get("seed", 0))
        probs = likelihood.expected_prob(mean, var, samples=int(sec.get("samples", 64)), seed=seed)
        extra = [(f"prob_c{c}", probs[:, c]) for c in range(probs.shape[1])]
    _write_predictions_csv(args.out, names, x_raw, mean, var, extra)
    return 0


def cmd_update(args) -> int:
    cfg = load_config(args.config)
    post, norm, weights_ref = _load_posterior_with_norm(args.model)
    new_data = _load_labelled(cfg, args.data)
    if norm is not None:
        new_data = datasets.apply_normalization(new_data, norm)
    with metrics.Stopwatch() as timer:
        updated = posterior.dual_update(post, new_data)
    posterior.save_posterior(updated, args.out, weights_ref=weights_ref)
    report = {"update_seconds": timer.seconds, "new_points": int(new_data.n)}

    if args.retrain:
        train_path = cfg.get("update", {}).get("train_data")
        if train_path is None:
            raise SchemaError("--retrain needs config key update.train_data")
        spec = _network(cfg)
        likelihood = make_likelihood(_require(cfg, "likelihood"))
        tcfg = _train_config(cfg, args.seed)
        d1 = _load_labelled(cfg, train_path)
        combined = Dataset(
            X=np.concatenate([d1.X, _load_labelled(cfg, args.data).X]),
            y=np.concatenate([d1.y, _load_labelled(cfg, args.data).y]),
            task=d1.task,
        )
        train, val, _ = _split_three(cfg, combined)
        with metrics.Stopwatch() as retrain_timer:
            train_map(train, spec, likelihood, tcfg, val)
        report["retrain_seconds"] = retrain_timer.seconds
    _write_json(_report_path(args.out), report)
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    doc = json.loads(Path(args.model).read_text()) if Path(args.model).exists() else None
    if doc is None:
        raise MissingFile(f"no such file: {args.model}")
    data = _load_labelled(cfg, args.data)
    sec = cfg.get("predict", {})
    samples = int(sec.get("samples", 64))
    seed = int(args.seed if args.seed is not None else sec.get("seed", 0))

    with metrics.Stopwatch() as timer:
        if "alpha" in doc:  # posterior file
            post, norm, _ = _load_posterior_with_norm(args.model, mean_mode=args.mode)
            if norm is not None:
                data = datasets.apply_normalization(data, norm)
            pred = post.predict_y(data.X, samples=samples, seed=seed,
                                  batch=int(sec.get("batch", 128)))
            report = _evaluate_predictions(post.likelihood, pred, data.y, norm)
        else:  # checkpoint: plain network predictions
            weights, norm_doc = load_checkpoint(args.model)
            norm = Normalization.from_dict(norm_doc) if norm_doc is not None else None
            likelihood = make_likelihood(_require(cfg, "likelihood"))
            if norm is not None:
                data = datasets.apply_normalization(data, norm)
            f = forward(weights, data.X)
            if isinstance(likelihood, Gaussian):
                pred = likelihood.predictive(f, np.zeros_like(f))
            else:
                pred = likelihood.probs(f)
            report = _evaluate_predictions(likelihood, pred, data.y, norm)
    report.wall_seconds = timer.seconds
    _write_json(args.out, report.to_dict())
    return 0


def cmd_cl(args) -> int:
    cfg = load_config(args.config)
    sec = _require(cfg, "cl")
    spec = _network(cfg)
    likelihood = make_likelihood(_require(cfg, "likelihood"))
    seed = int(args.seed if args.seed is not None else sec.get("seed", 0))
    ccfg = continual.ClConfig(
        tau=float(sec.get("tau", 1.0)),
        points_per_task=int(sec.get("points_per_task", 20)),
        train=_train_config(cfg),
        reg_metric=sec.get("reg_metric", "dual"),
        seed=seed,
    )
    if "tasks" in sec:
        tasks = [_load_labelled(cfg, path) for path in sec["tasks"]]
    elif "synthetic" in sec:
        syn = sec["synthetic"]
        if syn.get("kind", "blobs") != "blobs":
            raise SchemaError(f"unknown synthetic task kind {syn.get('kind')!r}")
        base = datasets.make_blobs(
            n=int(syn.get("n", 400)),
            num_classes=int(syn.get("num_classes", 4)),
            seed=int(syn.get("seed", 0)),
            spread=float(syn.get("spread", 0.6)),
            radius=float(syn.get("radius", 2.5)),
        )
        tasks = datasets.make_split_tasks(base, int(syn.get("classes_per_task", 2)))
    else:
        raise SchemaError("config key cl needs either 'tasks' or 'synthetic'")

    with metrics.Stopwatch() as timer:
        result = continual.run_continuum(tasks, spec, ccfg, likelihood)
    doc = result.to_dict()
    doc["wall_seconds"] = timer.seconds
    _write_json(args.out, doc)
    if "buffer_out" in sec:
        continual.save_buffer(result.buffer, sec["buffer_out"])
    return 0


def cmd_plot(args) -> int:
    from .figures import render_predictions

    render_predictions(args.data, args.out, train_csv=args.train_overlay)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tangentgp",
                                     description="Sparse function-space posteriors for trained MLPs")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, **flags):
        p = sub.add_parser(name)
        if flags.get("config", True):
            p.add_argument("--config", required=True, help="JSON run configuration")
        if flags.get("data"):
            p.add_argument("--data", required=True, help="CSV data file")
        if flags.get("model"):
            p.add_argument("--model", required=True, help="checkpoint or posterior JSON")
        if flags.get("out"):
            p.add_argument("--out", required=True, help="output path")
        p.add_argument("--seed", type=int, default=None, help="override the relevant config seed")
        if flags.get("mode"):
            p.add_argument("--mode", choices=("zero_mean", "nn_mean"), default=None)
        p.set_defaults(handler=handler)
        return p

    add("train", cmd_train, data=True, out=True)
    p = add("fit", cmd_fit, data=True, model=True, out=True, mode=True)
    p.add_argument("--baseline", choices=("subset",), default=None,
                   help="fit from the inducing subset only")
    p = add("predict", cmd_predict, data=True, model=True, out=True, mode=True)
    p.add_argument("--plot", default=None, help="also render a figure to this path")
    p.add_argument("--train-overlay", default=None, help="training CSV to overlay on the figure")
    p = add("update", cmd_update, data=True, model=True, out=True)
    p.add_argument("--retrain", action="store_true",
                   help="also retrain from scratch on old+new data and report its wall time")
    add("eval", cmd_eval, data=True, model=True, out=True, mode=True)
    add("cl", cmd_cl, out=True)
    p = add("oracle-gp", cmd_oracle_gp, data=True, model=True, out=True, mode=True)
    p.add_argument("--test", required=True, help="CSV of prediction inputs")
    p = sub.add_parser("plot")
    p.add_argument("--data", required=True, help="predictions CSV")
    p.add_argument("--out", required=True, help="figure output path")
    p.add_argument("--train-overlay", default=None, help="training CSV to overlay")
    p.set_defaults(handler=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except Error as exc:
        sys.stderr.write(json.dumps({"kind": exc.kind, "message": str(exc)}) + "\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
