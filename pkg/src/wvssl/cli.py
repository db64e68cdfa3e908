"""Single executable exposing the pipeline stage by stage, so probes can be
rerun against stored embeddings without re-embedding.

Exit codes: 0 success, 1 usage/config error, 2 data error,
3 numerical/training error. Structured logs go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import contact_sheet
from .config import RunConfig, load_config
from .contrastive import embed_dataset, model_from_checkpoint, pretrain
from .errors import ConfigError, DataError, NumericError
from .metrics import (binarize, f1_micro, mae_rmse, micro_auroc,
                      per_class_auroc)
from .probes import (FinetuneConfig, LinearProbe, MlpProbe, finetune,
                     knn_predict)
from .report import (MetricsReport, merge_reports, read_report, render_plots,
                     render_table, write_report)
from .retrieval import retrieval_map, retrieve_topk
from .sar import (preprocess_scene, read_scene, read_scene_png,
                  write_image_png)
from .store import (Manifest, ManifestRecord, load_unit_images,
                    parse_manifest, read_embeddings, write_embeddings,
                    write_manifest)
from .synth import SynthSpec, write_synth_dataset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

log = logging.getLogger("wvssl")

PROBE_PROTOCOLS = ("knn", "linear", "mlp", "finetune")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems become exit code 1
        raise ConfigError(message)


def cache_dir() -> Path:
    return Path(os.environ.get("WVSSL_CACHE", ".wvssl-cache"))


def build_parser() -> _Parser:
    parser = _Parser(prog="wvssl", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--threads", type=int, help="worker thread cap; 1 is "
                        "fully deterministic (default 1)")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", parents=[common],
                       help="generate the synthetic texture corpus")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--classes", default="flat,streaks,cells,slicks")
    p.add_argument("--overlay-prob", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common],
                       help="convert raw scenes into training PNGs")
    p.add_argument("scenes", nargs="+", help="scene files (.wvsc or .png with "
                   "sidecar) or directories of them")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--size", type=int, default=256,
                   help="square model input side (default 256)")
    p.add_argument("--window", type=int, default=10,
                   help="boxcar window and stride (default 10)")
    p.add_argument("--constant-fill", type=int, default=None,
                   help="substitute this gray level for constant scenes "
                   "instead of failing")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment-preview", parents=[common],
                       help="write a contact sheet of sampled views")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="output PNG path")
    p.add_argument("--n", type=int, default=6, help="rows to sample")
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("pretrain", parents=[common],
                       help="contrastive pretraining over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--log", default=None, help="JSONL training log path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--fraction", type=float, default=None,
                   help="per-epoch sub-sample fraction (default 0.3)")
    p.add_argument("--stop-after", type=int, default=None,
                   help="pause after this epoch (resume later)")
    p.add_argument("--progress", action="store_true",
                   help="print per-step losses")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("embed", parents=[common],
                       help="embed a manifest with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="embedding store path")
    p.add_argument("--space", choices=("backbone", "projected"),
                   default="backbone")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("probe", parents=[common],
                       help="evaluate embeddings with a transfer protocol")
    p.add_argument("protocol", choices=PROBE_PROTOCOLS)
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", default=None,
                   help="embedding store (knn/linear/mlp)")
    p.add_argument("--checkpoint", default=None,
                   help="encoder checkpoint (finetune)")
    p.add_argument("--task", choices=("classification", "regression"),
                   default="classification")
    p.add_argument("--eval-split", choices=("val", "test"), default="test")
    p.add_argument("--label-budget", default=None,
                   help="comma-joined training-label counts; emits a "
                   "score-vs-labels curve instead of a single fit")
    p.add_argument("--curve-name", default="default",
                   help="name for the emitted curve")
    p.add_argument("--out", default=None, help="metrics JSONL path")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("retrieve", parents=[common],
                       help="nearest-neighbor retrieval evaluation")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--anchor", default=None,
                   help="print ranked neighbor ids for one anchor instead of "
                   "running the mAP benchmark")
    p.add_argument("--out", default=None, help="metrics JSONL path")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("report", parents=[common],
                       help="render metric files as tables and figures")
    p.add_argument("metrics", nargs="+", help="metrics JSONL files")
    p.add_argument("--plots", default=None, help="directory for figures")
    p.add_argument("--formats", default="png",
                   help="comma-joined figure formats (png,svg)")
    p.set_defaults(func=cmd_report)

    return parser


def _resolve_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        overrides["run.threads"] = args.threads
    if getattr(args, "epochs", None) is not None:
        overrides["train.epochs"] = args.epochs
    if getattr(args, "batch_size", None) is not None:
        overrides["train.batch_size"] = args.batch_size
    if getattr(args, "fraction", None) is not None:
        overrides["train.subsample_fraction"] = args.fraction
    config = load_config(getattr(args, "config", None), overrides)
    import torch
    torch.set_num_threads(config.threads)
    return config


def dispatch(argv) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        config = _resolve_config(args)
        return args.func(args, config)
    except SystemExit as exc:  # argparse --help / --version
        code = exc.code
        return int(code) if isinstance(code, int) else EXIT_OK
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC


def main():
    sys.exit(dispatch(sys.argv[1:]))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args, config: RunConfig) -> int:
    classes = tuple(tok.strip() for tok in args.classes.split(",") if tok.strip())
    spec = SynthSpec(n_images=args.n, side=args.side, classes=classes,
                     overlay_prob=args.overlay_prob)
    manifest_path = write_synth_dataset(args.out, spec, seed=config.seed)
    log.info("wrote %d images under %s", args.n, args.out)
    print(manifest_path)
    return EXIT_OK


def _scene_files(inputs) -> list:
    files = []
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            files.extend(sorted(path.glob("*.wvsc")))
            files.extend(sorted(p for p in path.glob("*.png")
                                if p.with_suffix(".json").exists()))
        elif path.exists():
            files.append(path)
        else:
            raise DataError(f"scene input {path} does not exist")
    if not files:
        raise DataError("no scene files found")
    return files


def cmd_preprocess(args, config: RunConfig) -> int:
    out_dir = Path(args.out)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for path in _scene_files(args.scenes):
        scene = (read_scene(path) if path.suffix == ".wvsc"
                 else read_scene_png(path))
        image = preprocess_scene(scene, window=args.window,
                                 model_side=args.size,
                                 constant_fill=args.constant_fill)
        rel = f"images/{image.source_id}.png"
        write_image_png(image, out_dir / rel)
        records.append(ManifestRecord(id=image.source_id, path=rel,
                                      split="train", labels=()))
        log.info("preprocessed %s -> %s", path.name, rel)
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(Manifest(records, root=out_dir), manifest_path)
    print(manifest_path)
    return EXIT_OK


def cmd_augment_preview(args, config: RunConfig) -> int:
    from PIL import Image

    manifest = parse_manifest(args.manifest)
    images, _, _ = load_unit_images(manifest)
    sheet = contact_sheet(images[:args.n], config.pool, seed=config.seed)
    out = Path(args.out) if args.out else cache_dir() / "augment-preview.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(sheet, mode="L").save(out)
    print(out)
    return EXIT_OK


def cmd_pretrain(args, config: RunConfig) -> int:
    manifest = parse_manifest(args.manifest)
    out = pretrain(manifest, config.pool, config.train, config.encoder,
                   args.out, resume_from=args.resume, log_path=args.log,
                   quiet=not args.progress, stop_after=args.stop_after,
                   extra_config={"run": config.to_dict()})
    print(out)
    return EXIT_OK


def cmd_embed(args, config: RunConfig) -> int:
    manifest = parse_manifest(args.manifest)
    matrix = embed_dataset(args.checkpoint, manifest, space=args.space)
    write_embeddings(args.out, matrix, config=config.to_dict())
    log.info("embedded %d rows (%s, %d-d)", matrix.rows.shape[0],
             matrix.space, matrix.rows.shape[1])
    print(args.out)
    return EXIT_OK


def _aligned_rows(matrix, manifest_subset: Manifest):
    index = {rid: i for i, rid in enumerate(matrix.ids)}
    missing = [r.id for r in manifest_subset.records if r.id not in index]
    if missing:
        raise DataError(f"{len(missing)} manifest ids missing from the "
                        f"embedding store (first: {missing[0]!r})")
    rows = np.stack([matrix.rows[index[r.id]] for r in manifest_subset.records])
    return rows


def _regression_subset(manifest: Manifest) -> Manifest:
    records = [r for r in manifest.records if r.target is not None]
    if not records:
        raise DataError("no records carry a regression target")
    return Manifest(records, classes=manifest.classes,
                    target_name=manifest.target_name, root=manifest.root)


def _classification_report(labels, scores, classes, config, protocol) -> MetricsReport:
    return MetricsReport(
        protocol=protocol,
        auroc_micro=micro_auroc(labels, scores),
        f1_micro=f1_micro(labels, binarize(scores, config.f1_threshold)),
        per_class_auroc=per_class_auroc(labels, scores, classes),
        config=config.to_dict(),
    )


def _regression_report(targets, predictions, config, protocol) -> MetricsReport:
    mae, rmse = mae_rmse(targets, predictions)
    pairs = [[float(a), float(b)] for a, b in zip(targets[:500], predictions[:500])]
    return MetricsReport(protocol=protocol, mae=mae, rmse=rmse,
                         regression_pairs=pairs, config=config.to_dict())


def _fit_predict(protocol, task, train_x, train_y, eval_x, config: RunConfig):
    if protocol == "knn":
        if task != "classification":
            raise ConfigError("the kNN protocol applies to classification only")
        return knn_predict(train_x, train_y, eval_x,
                           k=config.knn_k, tau=config.knn_tau)
    if protocol == "linear":
        probe = LinearProbe(task=task, l2=config.linear_l2,
                            epochs=config.linear_epochs, lr=config.linear_lr,
                            seed=config.seed)
    else:
        probe = MlpProbe(task=task, hidden=config.mlp_hidden,
                         epochs=config.mlp_epochs, lr=config.mlp_lr,
                         batch_size=config.mlp_batch_size, seed=config.seed)
    probe.fit(train_x, train_y)
    return probe.predict(eval_x)


def cmd_probe(args, config: RunConfig) -> int:
    manifest = parse_manifest(args.manifest)
    task = args.task
    if task == "regression":
        manifest = _regression_subset(manifest)
    train_man = manifest.subset("train")
    eval_man = manifest.subset(args.eval_split)
    if not train_man.records or not eval_man.records:
        raise DataError(f"need non-empty train and {args.eval_split} splits")

    if task == "classification":
        train_y = train_man.label_matrix()
        eval_y = eval_man.label_matrix()
    else:
        train_y = train_man.targets()
        eval_y = eval_man.targets()

    protocol = {"probe": args.protocol, "task": task,
                "eval_split": args.eval_split,
                "train_size": len(train_man.records)}

    if args.protocol == "finetune":
        if not args.checkpoint:
            raise ConfigError("finetune needs --checkpoint")
        model, _ = model_from_checkpoint(args.checkpoint)
        side = model.config.input_side
        train_images, _, _ = load_unit_images(train_man, side=side)
        eval_images, _, _ = load_unit_images(eval_man, side=side)
        ft_config = FinetuneConfig(
            task=task, epochs=config.finetune_epochs,
            batch_size=config.finetune_batch_size, lr=config.finetune_lr,
            backbone_lr=config.finetune_backbone_lr,
            head_lr=config.finetune_head_lr,
            weight_decay=config.finetune_weight_decay,
            dropout=config.finetune_dropout, seed=config.seed)
        tuned = finetune(model, train_images, train_y, ft_config)
        predictions = tuned.predict(eval_images)
    else:
        if not args.embeddings:
            raise ConfigError(f"{args.protocol} needs --embeddings")
        matrix = read_embeddings(args.embeddings)
        train_x = _aligned_rows(matrix, train_man)
        eval_x = _aligned_rows(matrix, eval_man)
        if args.label_budget:
            return _probe_curve(args, config, protocol, train_x, train_y,
                                eval_x, eval_y, manifest)
        predictions = _fit_predict(args.protocol, task, train_x, train_y,
                                   eval_x, config)

    if task == "classification":
        report = _classification_report(eval_y, predictions,
                                        manifest.classes, config, protocol)
    else:
        report = _regression_report(eval_y, predictions, config, protocol)
    _emit_report(report, args.out, f"probe-{args.protocol}")
    return EXIT_OK


def _probe_curve(args, config, protocol, train_x, train_y, eval_x, eval_y,
                 manifest) -> int:
    budgets = []
    for tok in args.label_budget.split(","):
        tok = tok.strip()
        if tok:
            budgets.append(int(tok))
    if not budgets or any(b < 1 for b in budgets):
        raise ConfigError("label budgets must be positive integers")
    rng = np.random.default_rng([config.seed & 0xFFFFFFFFFFFFFFFF, 0x1B])
    points = []
    metric = "auroc_micro" if args.task == "classification" else "rmse"
    for budget in budgets:
        if budget > train_x.shape[0]:
            raise DataError(f"label budget {budget} exceeds the "
                            f"{train_x.shape[0]}-row train split")
        pick = np.sort(rng.choice(train_x.shape[0], size=budget, replace=False))
        predictions = _fit_predict(args.protocol, args.task,
                                   train_x[pick], train_y[pick], eval_x, config)
        if args.task == "classification":
            value = micro_auroc(eval_y, predictions)
        else:
            value = mae_rmse(eval_y, predictions)[1]
        points.append({"labels": budget, "value": float(value)})
        log.info("budget %d -> %s %.4f", budget, metric, value)
    report = MetricsReport(
        protocol={**protocol, "label_budgets": budgets, "metric": metric},
        curves=[{"name": args.curve_name, "metric": metric, "points": points}],
        config=config.to_dict())
    _emit_report(report, args.out, f"curve-{args.protocol}")
    return EXIT_OK


def cmd_retrieve(args, config: RunConfig) -> int:
    matrix = read_embeddings(args.embeddings)
    manifest = parse_manifest(args.manifest)
    if args.anchor is not None:
        ranked = retrieve_topk(args.anchor, matrix, k=config.retrieval_k)
        for rid in ranked:
            print(rid)
        return EXIT_OK
    labels_by_id = {r.id: set(r.labels) for r in manifest.records}
    per_class, map_mean = retrieval_map(
        matrix, labels_by_id, manifest.classes,
        trials=config.retrieval_trials, k=config.retrieval_k,
        seed=config.seed, relevance=config.retrieval_relevance)
    report = MetricsReport(
        protocol={"probe": "retrieval", "trials": config.retrieval_trials,
                  "k": config.retrieval_k,
                  "relevance": config.retrieval_relevance},
        map_per_class=per_class, map_mean=map_mean, config=config.to_dict())
    _emit_report(report, args.out, "retrieval")
    return EXIT_OK


def _emit_report(report: MetricsReport, out, stem: str) -> None:
    path = Path(out) if out else cache_dir() / f"{stem}.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, path)
    sys.stdout.write(render_table(report))
    print(path)


def cmd_report(args, config: RunConfig) -> int:
    reports = [read_report(p) for p in args.metrics]
    merged = merge_reports(reports) if len(reports) > 1 else reports[0]
    sys.stdout.write(render_table(merged))
    if args.plots:
        formats = tuple(tok.strip() for tok in args.formats.split(",") if tok.strip())
        written = render_plots(merged, args.plots, formats=formats)
        for path in written:
            log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    main()
