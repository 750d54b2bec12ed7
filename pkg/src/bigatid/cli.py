"""Workbench command line: train, evaluate, ablate, loao, explain, bench,
synth, and inspect subcommands over JSON configs with flag overrides.

Every report echoes the merged effective config and seed so a run can be
reproduced exactly; artifacts (checkpoint, history CSV, ROC CSVs,
attribution CSVs, report JSON) land in the output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as D
from . import explain as E
from . import metrics as M
from . import model as MOD
from . import training as T
from .numerics import RngStream

OUT_DIR_ENV = "BIGATID_OUT_DIR"
SEED_ENV = "BIGATID_SEED"


class ConfigError(ValueError):
    """Invalid or contradictory run configuration."""


class StageError(RuntimeError):
    """Pipeline failure wrapped with the stage that produced it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[stage={stage}] {cause}")
        self.stage = stage
        self.cause = cause


class _Stage:
    """Context manager attributing any failure to a named pipeline stage."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def derive_seed(*keys: int) -> int:
    """Stable child seed for per-variant / per-fold runs."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

RUN_DEFAULTS: dict = {
    "csv": None,
    "synth": False,
    "label_column": "Label",
    "synth_classes": 6,
    "synth_per_class": 400,
    "synth_seq_len": 20,
    "synth_separation": 6.0,
    "synth_imbalance": None,
    "train_frac": 0.8,
    "scale": True,
    "balancing": "none",
    "smote_k": 5,
    "variant": 4,
    "dropout": None,
    "learning_rate": 1e-3,
    "batch_size": 128,
    "epochs": 30,
    "loss": "cce",
    "focal_gamma": 2.0,
    "focal_alpha": None,
    "grad_clip": None,
    "seed": 0,
    "out_dir": "runs",
    "bench_warmup": 1,
    "bench_repeats": 3,
    "normal_class": "normal",
}


@dataclass
class RunConfig:
    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def echo(self) -> dict:
        return dict(self.values)

    def train_config(self, epochs=None, seed=None) -> T.TrainConfig:
        return T.TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs if epochs is None else epochs,
            loss=self.loss,
            focal_gamma=self.focal_gamma,
            focal_alpha=self.focal_alpha,
            seed=self.seed if seed is None else seed,
            balancing=self.balancing,
            grad_clip=self.grad_clip,
        )


def merge_config(args: argparse.Namespace, extra_defaults: dict | None = None) -> RunConfig:
    """defaults < config file < explicit flags; unknown file keys rejected."""
    defaults = dict(RUN_DEFAULTS)
    if extra_defaults:
        defaults.update(extra_defaults)
    if os.environ.get(OUT_DIR_ENV):
        defaults["out_dir"] = os.environ[OUT_DIR_ENV]
    if os.environ.get(SEED_ENV):
        defaults["seed"] = int(os.environ[SEED_ENV])
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        unknown = set(file_cfg) - set(merged)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    for key in merged:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            merged[key] = flag_val
    if merged.get("synth_imbalance") is not None and isinstance(merged["synth_imbalance"], str):
        merged["synth_imbalance"] = [float(v) for v in merged["synth_imbalance"].split(",")]
    cfg = RunConfig(values=merged)
    if "csv" in merged and bool(cfg.csv) == bool(cfg.synth):
        raise ConfigError("exactly one data source required: pass --csv PATH or --synth")
    return cfg


# ---------------------------------------------------------------------------
# shared pipeline stages
# ---------------------------------------------------------------------------

def load_source_dataset(cfg: RunConfig, rng: RngStream) -> D.Dataset:
    if cfg.csv:
        with _Stage("load"):
            table = D.load_csv(cfg.csv, label_column=cfg.label_column)
        with _Stage("clean"):
            table, _drops = D.clean(table)
        with _Stage("encode"):
            features, labels, codec = D.encode(table)
        with _Stage("reshape"):
            return D.Dataset(X=D.to_sequences(features), y=labels, codec=codec)
    with _Stage("synth"):
        return D.synth_generate(cfg.synth_classes, cfg.synth_per_class, cfg.synth_seq_len,
                                cfg.synth_separation, rng.spawn(0),
                                imbalance=cfg.synth_imbalance)


def split_and_scale(cfg: RunConfig, ds: D.Dataset, rng: RngStream):
    """Split first, then fit the scaler on the training split only."""
    with _Stage("split"):
        train_ds, test_ds = D.stratified_split(ds, cfg.train_frac, rng.spawn(1))
    scaler = None
    if cfg.scale:
        with _Stage("scale"):
            scaler = D.fit_scaler(train_ds.features())
            train_ds = _scaled(train_ds, scaler)
            test_ds = _scaled(test_ds, scaler)
    return train_ds, test_ds, scaler


def _scaled(ds: D.Dataset, scaler: D.ScalerParams) -> D.Dataset:
    return D.Dataset(X=D.to_sequences(D.apply_scaler(scaler, ds.features())),
                     y=ds.y, codec=ds.codec)


def balance_train(cfg: RunConfig, train_ds: D.Dataset, rng: RngStream,
                  strategy: str | None = None) -> D.Dataset:
    strategy = cfg.balancing if strategy is None else strategy
    with _Stage("balance"):
        if strategy == "ros":
            return D.ros_balance(train_ds, rng.spawn(2))
        if strategy == "smote":
            return D.smote_balance(train_ds, rng.spawn(2), k=cfg.smote_k)
        if strategy == "none":
            return train_ds
        raise ConfigError(f"unknown balancing strategy {strategy!r}")


def resolve_variant(cfg: RunConfig, seq_len: int, n_classes: int) -> MOD.Variant:
    variants = {v.id: v for v in MOD.table5_variants(seq_len, n_classes)}
    if cfg.variant not in variants:
        raise ConfigError(f"variant must be 1..12, got {cfg.variant}")
    v = variants[cfg.variant]
    if cfg.dropout is not None:
        if cfg.variant != 4:
            raise ConfigError("--dropout override is only supported for variant 4")
        v = MOD.Variant(4, f"(BiGRU64+MHA8)-LSTM32 d={cfg.dropout}",
                        MOD.bigat_spec(seq_len, n_classes, dropout_rate=cfg.dropout))
    return v


def evaluate_model(params, spec, test_ds: D.Dataset, cfg: RunConfig,
                   bench: bool = True) -> M.EvalReport:
    probs = T.batched_probs(params, spec, test_ds.X)
    loss_fn = T.loss_fn_for(cfg.train_config(), spec.n_classes)
    loss, _ = loss_fn(probs, D.one_hot(test_ds.y, spec.n_classes))
    stats = None
    if bench:
        stats = M.inference_bench(params, spec, test_ds.X, warmup=cfg.bench_warmup,
                                  repeats=cfg.bench_repeats)
    return M.evaluate_probs(probs, test_ds.y, list(test_ds.codec.classes), loss, bench=stats)


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def _write_roc_csvs(report: M.EvalReport, out_dir: Path) -> list[str]:
    paths = []
    for curve, name in zip(report.roc, report.class_names):
        if not curve.defined:
            continue
        path = out_dir / f"roc_{name}.csv"
        M.roc_points_to_csv(curve, path)
        paths.append(str(path))
    return paths


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = merge_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = RngStream(cfg.seed)

    ds = load_source_dataset(cfg, rng)
    train_ds, test_ds, scaler = split_and_scale(cfg, ds, rng)
    train_bal = balance_train(cfg, train_ds, rng)
    variant = resolve_variant(cfg, ds.seq_len, ds.n_classes)

    t0 = time.perf_counter()
    with _Stage("train"):
        params, history = T.train(variant.spec, train_bal, test_ds, cfg.train_config())
    train_sec = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _Stage("evaluate"):
        report = evaluate_model(params, variant.spec, test_ds, cfg)
    eval_sec = time.perf_counter() - t0

    with _Stage("persist"):
        ckpt_path = out_dir / "checkpoint.bgid"
        metadata = {
            "codec": test_ds.codec.to_dict(),
            "scaler": None if scaler is None else scaler.to_dict(),
            "config": cfg.echo(),
            "variant_id": variant.id,
            "variant_label": variant.label,
        }
        MOD.save(params, variant.spec, metadata, ckpt_path)
        history_path = out_dir / "history.csv"
        history.to_csv(history_path)
        roc_paths = _write_roc_csvs(report, out_dir)
        run_report = {
            "config": cfg.echo(),
            "variant": {"id": variant.id, "label": variant.label,
                        "param_total": MOD.param_total(variant.spec)},
            "history": history.as_dicts(),
            "eval": report.to_json_dict(),
            "timing": {"train_sec": train_sec, "eval_sec": eval_sec},
            "artifacts": {"checkpoint": str(ckpt_path), "history_csv": str(history_path),
                          "roc_csvs": roc_paths},
        }
        report_path = out_dir / "run_report.json"
        _write_json(report_path, run_report)

    row = report.table_row()
    print(f"variant #{variant.id} {variant.label}: "
          f"acc {row['accuracy']:.4f}  loss {row['loss']:.4f}  "
          f"f1 {row['f1']:.4f}  fpr {row['fpr']:.4f}")
    print(f"report: {report_path}")
    return 0


def _load_checkpoint(path):
    params, spec, metadata = MOD.load(path)
    codec = D.LabelCodec.from_dict(metadata["codec"])
    scaler = (None if metadata.get("scaler") is None
              else D.ScalerParams.from_dict(metadata["scaler"]))
    return params, spec, metadata, codec, scaler


def _eval_dataset_for_checkpoint(args, spec, codec, scaler) -> D.Dataset:
    """Build an evaluation dataset matching a checkpoint's preprocessing."""
    cfg = merge_config(args)
    rng = RngStream(cfg.seed)
    if cfg.csv:
        with _Stage("load"):
            table = D.load_csv(cfg.csv, label_column=cfg.label_column)
        with _Stage("clean"):
            table, _ = D.clean(table)
        with _Stage("encode"):
            features, labels, _ = D.encode(table, codec=codec)
        ds = D.Dataset(X=D.to_sequences(features), y=labels, codec=codec)
    else:
        with _Stage("synth"):
            ds = D.synth_generate(cfg.synth_classes, cfg.synth_per_class, cfg.synth_seq_len,
                                  cfg.synth_separation, rng.spawn(0),
                                  imbalance=cfg.synth_imbalance)
        if tuple(ds.codec.classes) != tuple(codec.classes):
            raise ConfigError("synthetic classes do not match the checkpoint codec")
    if ds.seq_len != spec.seq_len:
        raise ConfigError(f"dataset has {ds.seq_len} features but the checkpoint "
                          f"expects {spec.seq_len}")
    if scaler is not None:
        ds = _scaled(ds, scaler)
    return ds


def cmd_evaluate(args) -> int:
    cfg = merge_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with _Stage("checkpoint"):
        params, spec, metadata, codec, scaler = _load_checkpoint(args.checkpoint)
    ds = _eval_dataset_for_checkpoint(args, spec, codec, scaler)
    with _Stage("evaluate"):
        report = evaluate_model(params, spec, ds, cfg)
    payload = {"config": cfg.echo(), "checkpoint": str(args.checkpoint),
               "eval": report.to_json_dict()}
    report_path = out_dir / "eval_report.json"
    _write_json(report_path, payload)
    _write_roc_csvs(report, out_dir)
    row = report.table_row()
    print(f"acc {row['accuracy']:.4f}  loss {row['loss']:.4f}  f1 {row['f1']:.4f}  "
          f"fpr {row['fpr']:.4f}")
    print(f"report: {report_path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = merge_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = RngStream(cfg.seed)

    ds = load_source_dataset(cfg, rng)
    train_ds, test_ds, _scaler = split_and_scale(cfg, ds, rng)
    balanced_strategy = cfg.balancing if cfg.balancing != "none" else "ros"
    settings = [("unbalanced", "none"), ("balanced", balanced_strategy)]

    rows = []
    any_failed = False
    for variant in MOD.table5_variants(ds.seq_len, ds.n_classes):
        for si, (setting, strategy) in enumerate(settings):
            row = {"variant": variant.id, "label": variant.label,
                   "canonical": variant.id == 4,
                   "param_total": MOD.param_total(variant.spec),
                   "setting": setting, "status": "ok",
                   "accuracy": None, "loss": None, "fpr": None}
            try:
                tr = balance_train(cfg, train_ds, rng, strategy=strategy)
                seed_v = derive_seed(cfg.seed, variant.id, si)
                params, _hist = T.train(variant.spec, tr, test_ds,
                                        cfg.train_config(seed=seed_v))
                report = evaluate_model(params, variant.spec, test_ds, cfg, bench=False)
                row.update(accuracy=report.accuracy, loss=report.loss,
                           fpr=report.fpr_macro)
            except Exception as exc:  # isolate the failing row, keep sweeping
                any_failed = True
                row.update(status="failed", error=str(exc))
            rows.append(row)
            acc = "-" if row["accuracy"] is None else f"{row['accuracy']:.4f}"
            print(f"#{variant.id:<3}{setting:<12}{row['status']:<8}acc {acc}")

    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("variant,label,canonical,param_total,setting,status,accuracy,loss,fpr\n")
        for r in rows:
            fh.write(",".join([
                str(r["variant"]), f"\"{r['label']}\"", str(r["canonical"]).lower(),
                str(r["param_total"]), r["setting"], r["status"],
                *("" if r[k] is None else repr(r[k]) for k in ("accuracy", "loss", "fpr")),
            ]) + "\n")
    _write_json(out_dir / "ablation.json", {"config": cfg.echo(), "rows": rows})
    print(f"ablation table: {csv_path}")
    return 1 if any_failed else 0


def _remap(ds: D.Dataset, new_codec: D.LabelCodec) -> D.Dataset:
    names = [ds.codec.from_index(int(k)) for k in ds.y]
    return D.Dataset(X=ds.X, y=new_codec.encode(names), codec=new_codec)


def cmd_loao(args) -> int:
    cfg = merge_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = RngStream(cfg.seed)

    ds = load_source_dataset(cfg, rng)
    train_ds, test_ds, _scaler = split_and_scale(cfg, ds, rng)
    classes = list(ds.codec.classes)
    if cfg.normal_class not in classes:
        raise ConfigError(f"normal class {cfg.normal_class!r} not in {classes}")
    if args.sweep:
        held_out_list = [c for c in classes if c != cfg.normal_class]
    else:
        if not args.held_out:
            raise ConfigError("pass --held-out CLASS or --sweep")
        if args.held_out == cfg.normal_class:
            raise ConfigError("the zero-day protocol holds out attack classes, "
                              "not the normal class")
        if args.held_out not in classes:
            raise ConfigError(f"held-out class {args.held_out!r} not in {classes}")
        held_out_list = [args.held_out]

    results = []
    for fold, held_out in enumerate(held_out_list):
        held_idx = ds.codec.to_index(held_out)
        retained_codec = D.LabelCodec.fit([c for c in classes if c != held_out])
        tr_subset = train_ds.subset(train_ds.y != held_idx)
        held_in_train = int((tr_subset.y == held_idx).sum())
        if held_in_train:  # protocol invariant: asserted, not assumed
            raise StageError("loao", RuntimeError(
                f"{held_in_train} held-out samples leaked into the training split"))
        tr = _remap(tr_subset, retained_codec)
        te_retained = _remap(test_ds.subset(test_ds.y != held_idx), retained_codec)
        te_holdout = test_ds.subset(test_ds.y == held_idx)

        tr_bal = balance_train(cfg, tr, rng.spawn(10 + fold))
        variant = resolve_variant(cfg, ds.seq_len, retained_codec.n_classes)
        seed_f = derive_seed(cfg.seed, 100 + fold)
        with _Stage("train"):
            params, _hist = T.train(variant.spec, tr_bal, te_retained,
                                    cfg.train_config(seed=seed_f))
        with _Stage("evaluate"):
            retained_probs = T.batched_probs(params, variant.spec, te_retained.X)
            retained_acc = float((retained_probs.argmax(axis=1) == te_retained.y).mean())
            holdout_probs = T.batched_probs(params, variant.spec, te_holdout.X)
            normal_idx = retained_codec.to_index(cfg.normal_class)
            pred = holdout_probs.argmax(axis=1)
            detection_rate = float((pred != normal_idx).mean()) if len(te_holdout) else 0.0
            combined_correct = int((retained_probs.argmax(axis=1) == te_retained.y).sum()) \
                + int((pred != normal_idx).sum())
            combined_acc = combined_correct / (len(te_retained) + len(te_holdout))
        results.append({
            "held_out": held_out,
            "held_out_train_count": held_in_train,
            "retained_classes": list(retained_codec.classes),
            "retained_accuracy": retained_acc,
            "zero_day_detection_rate": detection_rate,
            "combined_accuracy_detection_counted": combined_acc,
            "n_holdout_test": len(te_holdout),
            "seed": seed_f,
        })
        print(f"held-out {held_out}: retained acc {retained_acc:.4f}, "
              f"zero-day detection {detection_rate:.4f}")

    payload = {"config": cfg.echo(), "results": results}
    report_path = out_dir / "loao_report.json"
    _write_json(report_path, payload)
    print(f"report: {report_path}")
    return 0


def cmd_explain(args) -> int:
    cfg = merge_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with _Stage("checkpoint"):
        params, spec, metadata, codec, scaler = _load_checkpoint(args.checkpoint)
    ds = _eval_dataset_for_checkpoint(args, spec, codec, scaler)
    settings = E.ShapleySettings(n_instances=args.instances,
                                 n_permutations=args.permutations)
    rng = RngStream(cfg.seed).spawn(7)
    with _Stage("attribution"):
        attribution = E.attribution_summary(params, spec, ds, settings, rng)
    csv_path = out_dir / "attribution.csv"
    attribution.to_csv(csv_path)
    attribution.top_k_json(out_dir / "attribution_topk.json", k=args.top_k)
    order = attribution.ranking()[:args.top_k]
    for i in order:
        print(f"{attribution.feature_names[i]:<8}{attribution.values[i].mean():.6f}")
    print(f"attribution: {csv_path}")
    return 0


def cmd_bench(args) -> int:
    cfg = merge_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with _Stage("checkpoint"):
        params, spec, metadata, codec, scaler = _load_checkpoint(args.checkpoint)
    ds = _eval_dataset_for_checkpoint(args, spec, codec, scaler)
    with _Stage("bench"):
        stats = M.inference_bench(params, spec, ds.X, warmup=cfg.bench_warmup,
                                  repeats=cfg.bench_repeats, batch_size=args.batch)
    _write_json(out_dir / "bench.json", {"config": cfg.echo(), "bench": stats.to_dict()})
    print(f"mean {stats.mean_sec_per_instance:.3e} s/inst  "
          f"median {stats.median_sec_per_instance:.3e}  p95 {stats.p95_sec_per_instance:.3e}")
    return 0


def cmd_synth(args) -> int:
    cfg = merge_config(args)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = RngStream(cfg.seed)
    with _Stage("synth"):
        ds = D.synth_generate(cfg.synth_classes, cfg.synth_per_class, cfg.synth_seq_len,
                              cfg.synth_separation, rng.spawn(0),
                              imbalance=cfg.synth_imbalance)
    csv_path = Path(args.out) if args.out else out_dir / "synth.csv"
    sidecar = csv_path.with_suffix(".sidecar.json")
    D.save_dataset_csv(ds, csv_path, sidecar_path=sidecar)
    print(f"wrote {len(ds)} rows to {csv_path}")
    return 0


def cmd_inspect(args) -> int:
    if bool(args.checkpoint) == bool(args.variant):
        raise ConfigError("pass exactly one of --checkpoint or --variant")
    if args.checkpoint:
        with _Stage("checkpoint"):
            _params, spec, metadata, _codec, _scaler = _load_checkpoint(args.checkpoint)
        label = metadata.get("variant_label", "?")
    else:
        variants = {v.id: v for v in MOD.table5_variants(args.seq_len, args.classes)}
        if args.variant not in variants:
            raise ConfigError(f"variant must be 1..12, got {args.variant}")
        spec = variants[args.variant].spec
        label = variants[args.variant].label
    print(f"variant: {label}")
    print(MOD.format_inspect_table(spec))
    if args.json:
        _write_json(args.json, MOD.inspect_table(spec))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--csv", help="flow-record CSV with a header row")
    p.add_argument("--synth", action="store_const", const=True, default=None,
                   help="use the synthetic generator as the data source")
    p.add_argument("--label-column", dest="label_column")
    p.add_argument("--synth-classes", dest="synth_classes", type=int)
    p.add_argument("--synth-per-class", dest="synth_per_class", type=int)
    p.add_argument("--synth-seq-len", dest="synth_seq_len", type=int)
    p.add_argument("--synth-separation", dest="synth_separation", type=float)
    p.add_argument("--synth-imbalance", dest="synth_imbalance",
                   help="comma-separated per-class count fractions")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--no-scale", dest="scale", action="store_const", const=False,
                   default=None, help="disable min-max feature scaling")
    p.add_argument("--balancing", choices=["none", "ros", "smote"])
    p.add_argument("--smote-k", dest="smote_k", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--loss", choices=["cce", "focal"])
    p.add_argument("--focal-gamma", dest="focal_gamma", type=float)
    p.add_argument("--grad-clip", dest="grad_clip", type=float)
    p.add_argument("--bench-warmup", dest="bench_warmup", type=int)
    p.add_argument("--bench-repeats", dest="bench_repeats", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bigatid",
        description="dual-branch recurrent-attention intrusion detection workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one variant end to end")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--variant", type=int)
    p.add_argument("--dropout", type=float, help="dropout override for variant 4")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--bench-warmup", dest="bench_warmup", type=int)
    p.add_argument("--bench-repeats", dest="bench_repeats", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train/evaluate all 12 variants, both balancings")
    _add_data_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("loao", help="leave-one-attack-out zero-day protocol")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--variant", type=int)
    p.add_argument("--held-out", dest="held_out", help="attack class to exclude")
    p.add_argument("--sweep", action="store_true", help="run every attack class in turn")
    p.add_argument("--normal-class", dest="normal_class")
    p.set_defaults(func=cmd_loao)

    p = sub.add_parser("explain", help="Shapley attribution for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--permutations", type=int, default=2000)
    p.add_argument("--top-k", dest="top_k", type=int, default=10)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("bench", help="inference timing for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--bench-warmup", dest="bench_warmup", type=int)
    p.add_argument("--bench-repeats", dest="bench_repeats", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    _add_data_flags(p)
    p.add_argument("--out", help="CSV output path (default <out-dir>/synth.csv)")
    p.set_defaults(func=cmd_synth, synth=True)

    p = sub.add_parser("inspect", help="per-layer shape and parameter table")
    p.add_argument("--checkpoint")
    p.add_argument("--variant", type=int)
    p.add_argument("--seq-len", dest="seq_len", type=int, default=83)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--json", help="also write the table to this JSON path")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MOD.CheckpointError, MOD.ConstructionError, D.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
