"""Command-line interface: generate / train / evaluate / ablate / diagnose.

All file outputs except the streamed metrics log are written atomically
(temp file + rename), so an interrupted run leaves either the previous
artifact or none — never a truncated one.  The metrics log is the
deliberate exception: records are flushed as they are produced so a
partial log survives an interrupt.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric
divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import tempfile

import numpy as np

from . import diagnostics
from .config import apply_overrides, config_to_text, default_config, load_config
from .data import (
    Dataset,
    SyntheticSpec,
    apply_scaler,
    fit_scaler,
    generate_synthetic,
    load_csv,
    save_csv,
    split,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    FairkanError,
    ModelFormatError,
    NumericError,
    ShapeError,
    UsageError,
)
from .network import deserialize, serialize
from .training import TrainConfig, derive_seed, evaluate_model, train

__all__ = ["main"]


# ---------------------------------------------------------------------------
# Small file helpers
# ---------------------------------------------------------------------------

def _atomic_write_bytes(path: str, payload: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.chmod(tmp, 0o644)   # mkstemp defaults to 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: str, text: str):
    _atomic_write_bytes(path, text.encode("utf-8"))


def _atomic_write_json(path: str, obj):
    _atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _refuse_existing(paths, force: bool):
    if force:
        return
    hits = [p for p in paths if os.path.exists(p)]
    if hits:
        raise UsageError(
            f"refusing to overwrite {', '.join(hits)} (pass --force)"
        )


# ---------------------------------------------------------------------------
# Config -> objects
# ---------------------------------------------------------------------------

def _seed_for(cfg: dict, key: str, label: str) -> int:
    explicit = cfg.get(key)
    if explicit is not None:
        return int(explicit)
    return derive_seed(int(cfg["run.seed"]), label)


def _synth_spec(cfg: dict) -> SyntheticSpec:
    return SyntheticSpec(
        m=cfg["data.m"], n=cfg["data.n"], n_sensitive=cfg["data.n_sensitive"],
        balance=cfg["data.balance"], gamma=cfg["data.gamma"],
        noise=cfg["data.noise"], mixing=cfg["data.mixing"],
        seed=_seed_for(cfg, "data.seed", "data"),
    )


def _load_dataset(cfg: dict) -> Dataset:
    source = cfg["data.source"]
    if source == "synthetic":
        return generate_synthetic(_synth_spec(cfg))
    if source == "csv":
        path = cfg["data.path"]
        label = cfg["data.label"]
        sensitive = cfg["data.sensitive"]
        if not path or not label or not sensitive:
            raise ConfigError(
                "csv source needs data.path, data.label and data.sensitive"
            )
        if not os.path.exists(path):
            raise ConfigError(f"data file not found: {path}")
        with open(path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), None)
        if header is None:
            raise DataError(f"{path}: empty file")
        features = [c for c in header if c != label and c not in sensitive]
        data, dropped = load_csv(path, features, sensitive, label)
        if dropped:
            print(f"note: dropped {dropped} malformed row(s)", file=sys.stderr)
        return data
    raise ConfigError(f"data.source must be synthetic or csv, got {source!r}")


def _prepared_splits(cfg: dict):
    """Load, split, and (optionally) scale onto the spline domain."""
    data = _load_dataset(cfg)
    tr, te = split(data, cfg["data.test_fraction"],
                   _seed_for(cfg, "data.split_seed", "split"))
    if cfg["data.scale"]:
        scaler = fit_scaler(tr)
        tr, te = apply_scaler(scaler, tr), apply_scaler(scaler, te)
    return tr, te


def _train_config(cfg: dict, n_features: int, n_attrs: int) -> TrainConfig:
    tc = TrainConfig(
        classifier_widths=[n_features] + list(cfg["train.classifier_hidden"]) + [1],
        adversary_widths=[1] + list(cfg["train.adversary_hidden"]) + [n_attrs],
        order=cfg["train.order"],
        grid_schedule=list(cfg["train.grid_schedule"]),
        clf_optimizer=cfg["train.clf_optimizer"],
        clf_lr=cfg["train.clf_lr"],
        adv_optimizer=cfg["train.adv_optimizer"],
        adv_lr=cfg["train.adv_lr"],
        beta1=cfg["train.beta1"],
        beta2=cfg["train.beta2"],
        epsilon=cfg["train.epsilon"],
        adopt_clip=cfg["train.adopt_clip"],
        epochs=cfg["train.epochs"],
        pretrain_epochs=cfg["train.pretrain_epochs"],
        adversary_epochs=cfg["train.adversary_epochs"],
        batch_size=cfg["train.batch_size"],
        eta=cfg["train.eta"],
        tau=cfg["train.tau"],
        lambda_init=cfg["train.lambda_init"],
        lambda_shared=cfg["train.lambda_shared"],
        lambda_split=cfg["train.lambda_split"],
        l1=cfg["train.l1"],
        l2=cfg["train.l2"],
        seed=_seed_for(cfg, "train.seed", "train"),
        eval_every=cfg["train.eval_every"],
        alternating=cfg["train.alternating"],
        calibrate=cfg["train.calibrate"],
    )
    tc.validate()
    return tc


def _pick_split(cfg, which=None):
    tr, te = _prepared_splits(cfg)
    name = which or cfg["eval.split"]
    if name == "train":
        return [("train", tr)]
    if name == "test":
        return [("test", te)]
    if name == "both":
        return [("train", tr), ("test", te)]
    raise ConfigError(f"eval.split must be train/test/both, got {name!r}")


def _load_model(path: str):
    if not path:
        raise UsageError("this command needs --model PATH")
    if not os.path.exists(path):
        raise UsageError(f"model file not found: {path}")
    with open(path, "rb") as fh:
        return deserialize(fh.read())


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: dict, out: str, force: bool) -> int:
    if cfg["data.source"] != "csv" and cfg["data.path"]:
        raise ConfigError("generate writes its own csv; drop data.path or source=csv")
    spec = _synth_spec(cfg)
    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, "data.csv")
    manifest_path = os.path.join(out, "manifest.json")
    _refuse_existing([csv_path, manifest_path], force)
    data = generate_synthetic(spec)
    save_csv(csv_path, data)
    _atomic_write_json(manifest_path, dataclasses.asdict(spec))
    print(f"wrote {csv_path} ({data.n_rows} rows) and {manifest_path}")
    return 0


def cmd_train(cfg: dict, out: str, force: bool) -> int:
    train_data, test_data = _prepared_splits(cfg)
    tc = _train_config(cfg, train_data.n_features, train_data.n_sensitive)
    os.makedirs(out, exist_ok=True)
    metrics_path = os.path.join(out, cfg["out.metrics"])
    model_path = os.path.join(out, cfg["out.model"])
    pretrained_path = os.path.join(out, "pretrained.kan")
    report_path = os.path.join(out, "report.json")
    theory_path = os.path.join(out, "theory.json")
    _refuse_existing(
        [metrics_path, model_path, pretrained_path, report_path, theory_path],
        force,
    )
    with open(metrics_path, "w", encoding="utf-8") as log:
        def on_record(rec):
            log.write(json.dumps(rec, sort_keys=True) + "\n")
            log.flush()

        state = train(tc, train_data, eval_data=test_data, on_record=on_record)

    _atomic_write_bytes(model_path, serialize(state.classifier))
    _atomic_write_bytes(pretrained_path, state.pretrained_snapshot)
    train_report, train_loss, _ = evaluate_model(state.classifier, train_data)
    test_report, test_loss, _ = evaluate_model(state.classifier, test_data)
    _atomic_write_json(report_path, {
        "train": dict(train_report.to_dict(), loss_y=train_loss),
        "test": dict(test_report.to_dict(), loss_y=test_loss),
        "lambda": [float(v) for v in state.controller.lambdas],
        "config": {k: cfg[k] for k in sorted(cfg)},
    })
    rep = diagnostics.theory_report(
        state.classifier, test_data, seed=_seed_for(cfg, "diag.seed", "diag"),
        pairs=cfg["diag.pairs"], lines=cfg["diag.lines"],
    )
    _atomic_write_json(theory_path, rep.to_dict())
    print(f"wrote {model_path}, {pretrained_path}, {metrics_path}, "
          f"{report_path}, {theory_path}")
    return 0


def cmd_evaluate(cfg: dict, out: str, force: bool, model_path: str) -> int:
    net = _load_model(model_path)
    pairs = _pick_split(cfg)
    os.makedirs(out, exist_ok=True)
    report_path = os.path.join(out, "report.json")
    hist_paths = {name: os.path.join(out, f"hist_{name}.csv")
                  for name, _ in pairs}
    _refuse_existing([report_path] + list(hist_paths.values()), force)
    payload = {}
    for name, data in pairs:
        report, loss_y, _ = evaluate_model(net, data)
        payload[name] = dict(report.to_dict(), loss_y=loss_y)
        rows = diagnostics.export_score_distributions(
            net, data, bins=cfg["diag.bins"]
        )
        tmp = hist_paths[name] + ".tmp"
        diagnostics.write_histogram_csv(tmp, rows)
        os.replace(tmp, hist_paths[name])
    _atomic_write_json(report_path, payload)
    print(f"wrote {report_path} and {', '.join(sorted(hist_paths.values()))}")
    return 0


def cmd_diagnose(cfg: dict, out: str, force: bool, model_path: str) -> int:
    net = _load_model(model_path)
    pairs = _pick_split(cfg)
    if len(pairs) != 1:
        raise ConfigError("diagnose runs on a single split (train or test)")
    name, data = pairs[0]
    os.makedirs(out, exist_ok=True)
    theory_path = os.path.join(out, "theory.json")
    _refuse_existing([theory_path], force)
    rep = diagnostics.theory_report(
        net, data, seed=_seed_for(cfg, "diag.seed", "diag"),
        pairs=cfg["diag.pairs"], lines=cfg["diag.lines"],
    )
    _atomic_write_json(theory_path, dict(rep.to_dict(), split=name))
    print(f"wrote {theory_path}")
    return 0


def _loss_trace_rows(history):
    rows = []
    for rec in history:
        if rec["split"] != "train" or rec["phase"] == "refine":
            continue
        row = {
            "epoch": rec["epoch"],
            "phase": rec["phase"],
            "grid_level": rec["grid_level"],
            "loss_y": rec["loss_y"],
        }
        loss_z = rec.get("loss_z")
        row["loss_z_mean"] = (
            None if not loss_z else float(np.mean([v for v in loss_z]))
        )
        for j, lam in enumerate(rec["lambda"]):
            row[f"lambda_{j}"] = lam
        rows.append(row)
    return rows


def cmd_ablate(cfg: dict, out: str, force: bool) -> int:
    orders = cfg["ablate.orders"]
    optimizers = cfg["ablate.optimizers"]
    os.makedirs(out, exist_ok=True)
    summary_path = os.path.join(out, "ablation_summary.csv")
    _refuse_existing([summary_path], force)
    train_data, test_data = _prepared_splits(cfg)
    summary = []
    for order in orders:
        for opt in optimizers:
            cell = f"cell_k{order}_{opt}"
            cell_dir = os.path.join(out, cell)
            os.makedirs(cell_dir, exist_ok=True)
            metrics_path = os.path.join(cell_dir, cfg["out.metrics"])
            trace_path = os.path.join(cell_dir, "loss_trace.csv")
            _refuse_existing([metrics_path, trace_path], force)
            tc = _train_config(cfg, train_data.n_features,
                               train_data.n_sensitive)
            tc.order = order
            tc.clf_optimizer = opt
            tc.adv_optimizer = opt
            # normalized first steps after refinement are huge otherwise
            tc.adopt_clip = tc.adopt_clip or opt == "adopt"
            with open(metrics_path, "w", encoding="utf-8") as log:
                def on_record(rec, log=log):
                    log.write(json.dumps(rec, sort_keys=True) + "\n")
                    log.flush()

                state = train(tc, train_data, eval_data=test_data,
                              on_record=on_record)
            rows = _loss_trace_rows(state.history)
            tmp = trace_path + ".tmp"
            with open(tmp, "w", newline="", encoding="utf-8") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
                writer.writeheader()
                writer.writerows(rows)
            os.replace(tmp, trace_path)
            report, _, _ = evaluate_model(state.classifier, test_data)
            rep = report.to_dict()
            lams = [float(v) for v in state.controller.lambdas]
            entry = {
                "order": order,
                "optimizer": opt,
                "accuracy": rep["accuracy"],
                "auroc": rep["auroc"],
            }
            for j in range(train_data.n_sensitive):
                entry[f"p_rule_{j}"] = rep["p_rule"][j]
                entry[f"dp_gap_{j}"] = rep["dp_gap"][j]
            entry["lambda_min"] = min(lams)
            entry["lambda_max"] = max(lams)
            summary.append(entry)
            print(f"{cell}: acc={rep['accuracy']:.3f} "
                  f"p_rule={[round(p, 1) if p is not None else None for p in rep['p_rule']]}")
    tmp = summary_path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary[0].keys()))
        writer.writeheader()
        writer.writerows(summary)
    os.replace(tmp, summary_path)
    print(f"wrote {summary_path} ({len(summary)} cells)")
    return 0


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairkan",
        description="Fairness-constrained spline-network training toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_model in [
        ("generate", False), ("train", False), ("evaluate", True),
        ("ablate", False), ("diagnose", True),
    ]:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--seed", type=int, default=None,
                       help="root seed; per-phase seeds derive from it")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing artifacts")
        if needs_model:
            p.add_argument("--model", default=None, help="saved model file")
    return parser


def _parse_dotted(extras) -> list:
    """Turn leftover ``--section.key value`` flags into override pairs."""
    pairs = []
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--") or "." not in token:
            raise UsageError(f"unknown argument: {token}")
        body = token[2:]
        if "=" in body:
            key, _, value = body.partition("=")
            i += 1
        else:
            key = body
            if i + 1 >= len(extras):
                raise UsageError(f"flag {token} needs a value")
            value = extras[i + 1]
            i += 2
        pairs.append((key, value))
    return pairs


def main(argv=None) -> int:
    parser = _build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        overrides = _parse_dotted(extras)
        cfg = load_config(args.config) if args.config else default_config()
        apply_overrides(cfg, overrides)
        if args.seed is not None:
            cfg["run.seed"] = int(args.seed)
        out = args.out
        if args.command == "generate":
            return cmd_generate(cfg, out, args.force)
        if args.command == "train":
            return cmd_train(cfg, out, args.force)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out, args.force, args.model)
        if args.command == "ablate":
            return cmd_ablate(cfg, out, args.force)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, out, args.force, args.model)
        raise UsageError(f"unknown command {args.command!r}")
    except (DivergenceError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DataError, UsageError, ModelFormatError,
            ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FairkanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
