"""Command-line pipeline: gen, train, unlearn, eval, sweep-k, compare.

Every command is reproducible: the config file plus the root seed
determine all output bytes.  Exit codes: 0 success, 2 config error,
3 runtime/training error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import multiprocessing
import sys
import time
from pathlib import Path

import numpy as np

from . import datagen, evaluation, methods
from .config import ExperimentConfig, load_config
from .datagen import (
    MEMORY_CATEGORIES,
    SPLIT_HOLDOUT,
    BenchSpec,
    layout_for,
    make_refusal_pool,
)
from .errors import (
    ConfigError,
    FormatError,
    IoError,
    SmfaError,
    TargetNotReached,
    UnknownMethod,
)
from .model import checkpoint as ckpt
from .model.network import init_model, predict_batch
from .sculptor import SculptConfig, extract_delta, sculpt_pipeline

METHOD_NAMES = ("smfa", "idk", "ga-diff", "kl-min", "manu")

SWEEP_CSV_HEADER = "k,split,category,n,rouge_l_f1,exact,token,refusal,wellformed"


def _log(verbose: bool, msg: str) -> None:
    if verbose:
        print(msg, file=sys.stderr)


# -- dataset plumbing -----------------------------------------------------


def _dataset_paths(cfg: ExperimentConfig) -> tuple[Path, Path]:
    data_dir = Path(cfg.paths.resolved().data)
    return data_dir / "bench.jsonl", data_dir / "bench.meta.json"


def _build_dataset(spec: BenchSpec):
    layout = layout_for(spec)
    pool = make_refusal_pool(layout, spec.pool_size, spec.seed)
    profiles = datagen.generate_profiles(spec)
    items = datagen.build_qa(profiles, spec, pool)
    return layout, pool, items


def _load_dataset(cfg: ExperimentConfig, forget_ratio: float | None = None):
    """Dataset bundle from disk; re-splits in memory on a ratio override."""
    data_path, meta_path = _dataset_paths(cfg)
    spec, layout, pool = datagen.read_sidecar(meta_path)
    digest = ckpt.file_digest(data_path)
    if forget_ratio is not None and abs(forget_ratio - spec.forget_ratio) > 1e-12:
        spec = dataclasses.replace(spec, forget_ratio=forget_ratio)
        layout, pool, items = _build_dataset(spec)
    else:
        items = datagen.read_dataset(data_path)
    return spec, layout, pool, items, digest


# -- commands -------------------------------------------------------------


def cmd_gen(cfg: ExperimentConfig, out: str | None, verbose: bool = False) -> list[Path]:
    data_dir = Path(out) if out else Path(cfg.paths.resolved().data)
    spec = cfg.bench
    layout, pool, items = _build_dataset(spec)
    data_path = data_dir / "bench.jsonl"
    meta_path = data_dir / "bench.meta.json"
    datagen.write_dataset(data_path, items)
    datagen.write_sidecar(meta_path, spec, layout, pool)
    _log(verbose, f"wrote {len(items)} items to {data_path}")
    return [data_path, meta_path]


def _exact_match(weights, mconfig, items) -> float:
    if not items:
        return 0.0
    zero = np.zeros(mconfig.feature_dim)
    features = np.stack([i.feature if i.feature is not None else zero for i in items])
    preds = predict_batch(weights, mconfig, features, [i.question for i in items])
    exact, _ = evaluation.accuracy(preds, [i.answer for i in items])
    return exact


def fit_gate_metrics(weights, mconfig, items) -> tuple[float, float]:
    """(training-memory exact match, holdout understanding exact match)."""
    train_mem = [
        i for i in datagen.training_items(items) if i.category in MEMORY_CATEGORIES
    ]
    holdout_und = [i for i in items if i.split == SPLIT_HOLDOUT and i.variant >= 1]
    return _exact_match(weights, mconfig, train_mem), _exact_match(
        weights, mconfig, holdout_und
    )


def _original_path(cfg: ExperimentConfig) -> Path:
    return (
        Path(cfg.paths.resolved().checkpoints) / f"original_seed{cfg.train.seed}.ckpt"
    )


def cmd_train(cfg: ExperimentConfig, verbose: bool = False) -> Path:
    _, layout, _, items, _ = _load_dataset(cfg)
    mconfig = cfg.model_config(layout)
    init = init_model(mconfig, cfg.train.seed)
    targets = cfg.train_targets

    def reached(weights, epoch):
        mem, und = fit_gate_metrics(weights, mconfig, items)
        _log(verbose, f"epoch {epoch}: memory {mem:.3f}, holdout understanding {und:.3f}")
        return mem >= targets.memory_exact and und >= targets.understanding_exact

    weights, curve = methods.train_model(
        init, mconfig, datagen.training_items(items), cfg.train, stop_check=reached
    )
    mem, und = fit_gate_metrics(weights, mconfig, items)
    if mem < targets.memory_exact or und < targets.understanding_exact:
        raise TargetNotReached(
            f"after {cfg.train.epochs} epochs: memory {mem:.3f} "
            f"(target {targets.memory_exact}), holdout understanding {und:.3f} "
            f"(target {targets.understanding_exact})"
        )
    out = _original_path(cfg)
    ckpt.save_weights(out, weights, method="original", seed=cfg.train.seed)
    curve_path = (
        Path(cfg.paths.resolved().reports) / f"train_curve_seed{cfg.train.seed}.csv"
    )
    curve_path.parent.mkdir(parents=True, exist_ok=True)
    curve_path.write_text(
        "epoch,loss\n" + "".join(f"{i},{v:.6f}\n" for i, v in enumerate(curve)),
        encoding="utf-8",
    )
    _log(verbose, f"trained to memory {mem:.3f} / understanding {und:.3f} -> {out}")
    return out


def _write_manifest(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")


def cmd_unlearn(
    cfg: ExperimentConfig,
    method: str,
    verbose: bool = False,
    forget_ratio: float | None = None,
) -> Path:
    if method not in METHOD_NAMES:
        raise UnknownMethod(f"unknown method {method!r}; choose from {METHOD_NAMES}")
    spec, layout, pool, items, dataset_digest = _load_dataset(cfg, forget_ratio)
    mconfig = cfg.model_config(layout)
    base_path = _original_path(cfg)
    base = ckpt.load_checkpoint(base_path).weights()
    sets = datagen.split_sets(items, spec)
    d_f, d_r_few = sets["forget"], sets["retain_few"]
    seed = cfg.unlearn_train.seed

    ckpt_dir = Path(cfg.paths.resolved().checkpoints)
    stem = f"{method}_seed{seed}"
    out_path = ckpt_dir / f"{stem}.ckpt"
    start = time.perf_counter()
    extra: dict = {}

    if method == "smfa":
        result = methods.smfa_unlearn(
            base, mconfig, d_f, d_r_few, pool, cfg.unlearn_train, cfg.sculpt
        )
        weights = result.weights
        ckpt.save_delta(ckpt_dir / f"{stem}.delta.ckpt", result.sculpted)
        ckpt.save_mask(
            ckpt_dir / f"{stem}.mask.ckpt",
            result.mask,
            method="smfa",
            seed=seed,
            k=cfg.sculpt.k,
            base_digest=ckpt.weights_digest(base),
        )
        extra = {
            "k": cfg.sculpt.k,
            "masked_fraction": result.stats.overall_masked_fraction,
        }
    elif method == "idk":
        weights = methods.idk_tuning_unlearn(
            base, mconfig, d_f, d_r_few, pool, cfg.unlearn_train
        )
        ckpt.save_delta(
            ckpt_dir / f"{stem}.delta.ckpt",
            extract_delta(weights, base, method="idk", seed=seed),
        )
    elif method == "ga-diff":
        weights = methods.ga_difference_unlearn(
            base, mconfig, d_f, d_r_few, cfg.unlearn_train
        )
        ckpt.save_delta(
            ckpt_dir / f"{stem}.delta.ckpt",
            extract_delta(weights, base, method="ga-diff", seed=seed),
        )
    elif method == "kl-min":
        weights = methods.kl_minimization_unlearn(
            base, mconfig, d_f, d_r_few, cfg.unlearn_train
        )
        ckpt.save_delta(
            ckpt_dir / f"{stem}.delta.ckpt",
            extract_delta(weights, base, method="kl-min", seed=seed),
        )
    else:  # manu
        weights = methods.manu_unlearn(base, mconfig, d_f, d_r_few, cfg.manu)
        extra = {"alpha": cfg.manu.alpha}
    elapsed = time.perf_counter() - start

    ckpt.save_weights(out_path, weights, method=method, seed=seed)
    manifest = {
        "method": method,
        "seed": seed,
        "forget_ratio": spec.forget_ratio,
        "config": cfg.to_dict(),
        "input_digests": {
            "dataset": dataset_digest,
            "base_checkpoint": ckpt.file_digest(base_path),
        },
        "wall_time_s": elapsed,
        **extra,
    }
    _write_manifest(ckpt_dir / f"{stem}.manifest.json", manifest)
    _log(verbose, f"{method} done in {elapsed:.1f}s -> {out_path}")
    return out_path


def _manifest_forget_ratio(checkpoint_path: Path) -> float | None:
    manifest_path = checkpoint_path.parent / (
        checkpoint_path.name.removesuffix(".ckpt") + ".manifest.json"
    )
    if manifest_path.exists():
        try:
            return json.loads(manifest_path.read_text(encoding="utf-8")).get(
                "forget_ratio"
            )
        except (OSError, json.JSONDecodeError):
            return None
    return None


def cmd_eval(
    cfg: ExperimentConfig, checkpoint_path: str, verbose: bool = False
) -> tuple[Path, Path]:
    cpath = Path(checkpoint_path)
    loaded = ckpt.load_checkpoint(cpath)
    weights = loaded.weights()
    ratio = _manifest_forget_ratio(cpath)
    spec, layout, pool, items, dataset_digest = _load_dataset(cfg, ratio)
    mconfig = cfg.model_config(layout)
    manifest = {
        "checkpoint": ckpt.file_digest(cpath),
        "dataset": dataset_digest,
        "method": loaded.meta.get("method"),
        "seed": loaded.meta.get("seed"),
        "forget_ratio": spec.forget_ratio,
    }
    report = evaluation.evaluate_model(weights, mconfig, items, layout, pool, manifest)
    reports_dir = Path(cfg.paths.resolved().reports)
    stem = cpath.name.removesuffix(".ckpt")
    json_path = reports_dir / f"{stem}.report.json"
    csv_path = reports_dir / f"{stem}.report.csv"
    evaluation.write_report(report, json_path, "json")
    evaluation.write_report(report, csv_path, "csv")
    _log(verbose, f"evaluated {cpath} -> {json_path}")
    return json_path, csv_path


def _sweep_rows(args) -> list[str]:
    """Sculpt at one k and evaluate; returns CSV rows (used by --jobs workers)."""
    k, base, delta_f, delta_a, sculpt_cfg_dict, mconfig, items, layout, pool = args
    sculpt_cfg = SculptConfig(
        k=k, epsilon=sculpt_cfg_dict["epsilon"], rho_scope=sculpt_cfg_dict["rho_scope"]
    )
    result = sculpt_pipeline(base, delta_f, delta_a, sculpt_cfg)
    report = evaluation.evaluate_model(result.weights, mconfig, items, layout, pool)
    rows = []
    for r in report.rows:
        rows.append(
            f"{k:g},{r.split},{r.category},{r.n_items},"
            f"{r.rouge_l_f1:.6f},{r.exact_match:.6f},{r.token_accuracy:.6f},"
            f"{r.refusal_rate:.6f},{r.wellformed_rate:.6f}"
        )
    return rows


def cmd_sweep_k(
    cfg: ExperimentConfig, k_list: list[float], jobs: int = 1, verbose: bool = False
) -> Path:
    """Fine-tune the two deltas once, then sculpt and evaluate per k."""
    spec, layout, pool, items, _ = _load_dataset(cfg)
    mconfig = cfg.model_config(layout)
    base = ckpt.load_checkpoint(_original_path(cfg)).weights()
    sets = datagen.split_sets(items, spec)
    d_f, d_r_few = sets["forget"], sets["retain_few"]
    seed = cfg.unlearn_train.seed

    refusal_items = datagen.make_refusal_set(
        d_f, pool, methods.refusal_seed(cfg.unlearn_train)
    )
    delta_f = methods.finetune(
        base, mconfig, refusal_items + d_r_few, cfg.unlearn_train, method="mfa"
    )
    delta_a = methods.finetune(base, mconfig, d_r_few, cfg.unlearn_train, method="anchor")
    ckpt_dir = Path(cfg.paths.resolved().checkpoints)
    ckpt.save_delta(ckpt_dir / f"sweep_mfa_seed{seed}.delta.ckpt", delta_f)
    ckpt.save_delta(ckpt_dir / f"sweep_anchor_seed{seed}.delta.ckpt", delta_a)

    sculpt_dict = {"epsilon": cfg.sculpt.epsilon, "rho_scope": cfg.sculpt.rho_scope}
    work = [
        (k, base, delta_f, delta_a, sculpt_dict, mconfig, items, layout, pool)
        for k in k_list
    ]
    if jobs > 1:
        with multiprocessing.get_context("fork").Pool(jobs) as pool_proc:
            all_rows = pool_proc.map(_sweep_rows, work)
    else:
        all_rows = [_sweep_rows(w) for w in work]

    out = Path(cfg.paths.resolved().reports) / f"sweep_k_seed{seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = [SWEEP_CSV_HEADER]
    for rows in all_rows:
        lines.extend(rows)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _log(verbose, f"sweep over k={k_list} -> {out}")
    return out


def cmd_compare(report_paths: list[str]) -> str:
    """Side-by-side CSV over reports joined on (split, category)."""
    reports = [(Path(p), evaluation.read_report(p)) for p in report_paths]
    labels = []
    for path, _ in reports:
        label = path.name
        for suffix in (".report.json", ".json"):
            label = label.removesuffix(suffix)
        labels.append(label)
    keys = [(r.split, r.category) for r in reports[0][1].rows]
    for path, rep in reports[1:]:
        if [(r.split, r.category) for r in rep.rows] != keys:
            from .errors import SchemaMismatch

            raise SchemaMismatch(f"{path} rows differ from {reports[0][0]}")
    metrics = ("rouge_l_f1", "exact_match", "token_accuracy", "refusal_rate", "wellformed_rate")
    header = ["split", "category"] + [
        f"{label}_{m}" for label in labels for m in metrics
    ]
    lines = [",".join(header)]
    for split, category in keys:
        cells = [split, category]
        for _, rep in reports:
            row = rep.row(split, category)
            cells.extend(f"{getattr(row, m):.6f}" for m in metrics)
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# -- argument parsing -------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smfa", description="selective unlearning workbench"
    )
    parser.add_argument("--seed", type=int, default=None, help="root seed override")
    parser.add_argument("--jobs", type=int, default=1, help="parallel workers")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate the benchmark dataset")
    p_gen.add_argument("--config", default=None)
    p_gen.add_argument("--out", default=None)

    p_train = sub.add_parser("train", help="fit the original model")
    p_train.add_argument("--config", default=None)

    p_unlearn = sub.add_parser("unlearn", help="run an unlearning method")
    p_unlearn.add_argument("--config", default=None)
    p_unlearn.add_argument("--method", required=True)
    p_unlearn.add_argument("--k", type=float, default=None)
    p_unlearn.add_argument("--alpha", type=float, default=None)
    p_unlearn.add_argument("--forget-ratio", type=float, default=None)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--checkpoint", required=True)

    p_sweep = sub.add_parser("sweep-k", help="sculpt once-fine-tuned deltas per k")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--k", default="0,1,5,25", help="comma-separated k values")

    p_cmp = sub.add_parser("compare", help="side-by-side report CSV on stdout")
    p_cmp.add_argument("reports", nargs="+")
    return parser


def _config_overrides(args) -> dict:
    overrides: dict = {}
    if args.seed is not None:
        overrides["bench"] = {"seed": args.seed}
        overrides["train"] = {"seed": args.seed}
        overrides["unlearn_train"] = {"seed": args.seed}
    if getattr(args, "k", None) is not None and args.command == "unlearn":
        overrides.setdefault("sculpt", {})["k"] = args.k
    if getattr(args, "alpha", None) is not None:
        overrides.setdefault("manu", {})["alpha"] = args.alpha
    return overrides


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            sys.stdout.write(cmd_compare(args.reports))
            return 0
        cfg = load_config(args.config, _config_overrides(args))
        if args.command == "gen":
            cmd_gen(cfg, args.out, args.verbose)
        elif args.command == "train":
            cmd_train(cfg, args.verbose)
        elif args.command == "unlearn":
            cmd_unlearn(cfg, args.method, args.verbose, args.forget_ratio)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.verbose)
        elif args.command == "sweep-k":
            try:
                k_list = [float(x) for x in args.k.split(",") if x.strip() != ""]
            except ValueError as exc:
                raise ConfigError(f"bad --k list {args.k!r}: {exc}") from exc
            if not k_list:
                raise ConfigError("--k list is empty")
            cmd_sweep_k(cfg, k_list, args.jobs, args.verbose)
        return 0
    except (ConfigError, UnknownMethod) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (IoError, FormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except SmfaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
