"""Command-line entry point.

Subcommands: generate-synthetic, preprocess, pretrain, finetune, predict,
annotate-loops, evaluate, perturb, theorem-demo, plot. Every command
writes one run record next to its outputs. Exit codes: 0 success, 1
validation/usage error, 2 runtime or numeric error. All diagnostics go to
stderr; files are written only to the declared output paths.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .archive import read_archive, write_archive
from .encoders import EncoderConfig
from .errors import (
    ConfigError,
    ConvergenceError,
    HicfuseError,
    MetricUndefinedError,
    NumericError,
    ParseError,
    SamplingError,
    ValidationError,
)
from .evaluation import (
    MetricReport,
    auroc,
    corrupt_contacts,
    info_gap_demo,
    perturbation_experiment,
    prf,
    r_squared,
    random_joint,
)
from .genomic_io import load_manifest, parse_loops, write_loops
from .loop_annotation import annotate_chromosome
from .preprocessing import kr_balance, records_to_dense, sample_negative_loops
from .synthetic import SyntheticSpec, generate_dataset, write_dataset_files
from .training import (
    TrainConfig,
    WindowDataset,
    finetune,
    load_checkpoint,
    predict,
    pretrain,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; the contract is exit 1
        raise UsageError(message)


def _digest(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()


def _write_run_record(
    args: argparse.Namespace, outputs: list[Path], started: float
) -> None:
    payload = {k: v for k, v in vars(args).items() if k not in ("func", "threads")}
    record = {
        "command": args.command,
        "config_digest": _digest(payload),
        "seed": getattr(args, "seed", None),
        "started_unix": started,
        "finished_unix": time.time(),
        "outputs": [str(p) for p in outputs],
        "package_version": __version__,
    }
    primary = outputs[0]
    record_path = primary / "run.json" if primary.is_dir() else primary.with_name(primary.name + ".run.json")
    record_path.write_text(json.dumps(record, indent=2, default=str) + "\n")


def _encoder_config_from_args(args, meta: dict) -> EncoderConfig:
    track_length = meta["track_length"]
    if track_length % 50 != 0:
        raise ValidationError(
            f"archive track length {track_length} is not reducible by the "
            "default convolution pool schedule (factor 50)"
        )
    return EncoderConfig(
        window_side=meta["height"],
        patch_size=args.patch_size,
        base_dim=args.base_dim,
        blocks_per_layer=args.blocks,
        track_length=track_length,
        track_channels=meta["track_channels"],
        track_stage0_length=track_length // 50,
        attention_heads=args.heads,
        dropout=args.dropout,
    )


def _load_dataset(path: str) -> tuple[WindowDataset, dict]:
    samples, meta = read_archive(path)
    return WindowDataset.from_samples(samples), meta


def cmd_generate_synthetic(args) -> list[Path]:
    out_dir = Path(args.out)
    spec = SyntheticSpec(
        n_bins=args.n_bins,
        loop_count=args.loop_count,
        enrichment=args.enrichment,
        anchor_coupling=args.kappa,
        background_rate=args.background,
        track_noise=args.track_noise,
        min_loop_distance_bins=args.min_loop_distance,
        max_loop_distance_bins=args.max_loop_distance,
        resolution_bp=args.resolution,
        seed=args.seed,
    )
    windows = {}
    for split, count in (("train", args.train), ("validation", args.validation), ("test", args.test)):
        if count > 0:
            windows[split] = count
    if not windows:
        raise ValidationError("at least one of --train/--validation/--test must be positive")
    results = generate_dataset(spec, windows, args.task, args.window_bins)
    write_dataset_files(results, out_dir)
    outputs = [out_dir]
    for split, result in results.items():
        archive_path = out_dir / f"{split}.mxh"
        write_archive(archive_path, result.samples, spec.resolution_bp, spec.bin_track_bp)
        if result.annotations is not None:
            write_loops(result.annotations, out_dir / f"{split}.samples.loops.tsv")
    return outputs


def cmd_preprocess(args) -> list[Path]:
    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .genomic_io import parse_contact_matrix, parse_track
    from .preprocessing import window_from_dense, passes_quality_filter
    from .preprocessing import ContactMapWindow, SamplePair, TrackWindow, bin_track_raw
    from .genomic_io import GenomicInterval

    window_bins = manifest.window_bins
    for split, chroms in manifest.splits.items():
        samples = []
        annotations = []
        for chrom in chroms:
            files = manifest.chromosomes[chrom]
            records = parse_contact_matrix(files.contacts, chrom)
            n_bins = files.n_bins or (max(r.bin_j for r in records) + 1 if records else 0)
            if n_bins < window_bins:
                raise ValidationError(f"chromosome {chrom!r} shorter than one window")
            dense = records_to_dense(records, n_bins)
            balanced, _ = kr_balance(dense, tolerance=args.balance_tolerance)
            track_records = [parse_track(p) for p in files.tracks]
            extent = GenomicInterval(chrom, 0, n_bins * manifest.resolution_bp)
            profiles = [
                bin_track_raw(tr, extent, manifest.bin_track_bp) for tr in track_records
            ]
            bins_per_res = manifest.resolution_bp // manifest.bin_track_bp
            seg = window_bins * bins_per_res

            def build(ox: int, oy: int, label=None) -> SamplePair | None:
                values = window_from_dense(balanced, ox, oy, window_bins)
                if not passes_quality_filter(values):
                    return None
                res = manifest.resolution_bp
                ivx = GenomicInterval(chrom, ox * res, (ox + window_bins) * res)
                ivy = GenomicInterval(chrom, oy * res, (oy + window_bins) * res)
                channels = [
                    np.log1p(
                        np.concatenate(
                            [
                                profile[ox * bins_per_res : ox * bins_per_res + seg],
                                profile[oy * bins_per_res : oy * bins_per_res + seg],
                            ]
                        )
                    )
                    for profile in profiles
                ]
                contact = ContactMapWindow(values, ivx, ivy, res)
                track = TrackWindow(
                    np.stack(channels, axis=1), ivx, ivy, manifest.bin_track_bp
                )
                target = values.copy() if args.task == "contact" else None
                return SamplePair(contact, track, loop_label=label, contact_target=target)

            if args.task == "loop":
                if files.loops is None:
                    raise ValidationError(f"chromosome {chrom!r} has no loop file")
                positives = [l for l in parse_loops(files.loops) if l.label != "negative"]
                res = manifest.resolution_bp
                for loop in positives:
                    ox = min(max(loop.anchor1.start // res - window_bins // 2, 0), n_bins - window_bins)
                    oy = min(max(loop.anchor2.start // res - window_bins // 2, 0), n_bins - window_bins)
                    sample = build(ox, oy, label=1)
                    if sample is not None:
                        samples.append(sample)
                        annotations.append(loop)
                negatives = sample_negative_loops(
                    positives,
                    len(positives),
                    rng_seed=args.seed,
                    chromosome_extent_bp=n_bins * res,
                    resolution_bp=res,
                )
                for loop in negatives:
                    ox = min(max(loop.anchor1.start // res - window_bins // 2, 0), n_bins - window_bins)
                    oy = min(max(loop.anchor2.start // res - window_bins // 2, 0), n_bins - window_bins)
                    sample = build(ox, oy, label=0)
                    if sample is not None:
                        samples.append(sample)
                        annotations.append(loop)
            else:
                for ox in range(0, n_bins - window_bins + 1, window_bins):
                    sample = build(ox, ox)
                    if sample is not None:
                        samples.append(sample)
        if not samples:
            continue
        write_archive(
            out_dir / f"{split}.mxh", samples, manifest.resolution_bp, manifest.bin_track_bp
        )
        if args.task == "loop":
            write_loops(annotations, out_dir / f"{split}.samples.loops.tsv")
    return [out_dir]


def cmd_pretrain(args) -> list[Path]:
    dataset, meta = _load_dataset(args.data)
    encoder_config = _encoder_config_from_args(args, meta)
    train_config = TrainConfig(
        phase="pretrain",
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        seed=args.seed,
        temperature=args.temperature,
        grad_clip_norm=None if args.no_grad_clip else args.grad_clip,
        weight_decay=args.weight_decay,
    )
    out_dir = Path(args.out)
    result = pretrain(
        dataset,
        train_config,
        encoder_config,
        out_dir=out_dir,
        data_meta={
            "resolution_bp": meta["resolution_bp"],
            "bin_track_bp": meta["bin_track_bp"],
        },
    )
    print(
        f"pretrained {result.epochs_run} epochs, final loss {result.final_loss:.6f}",
        file=sys.stderr,
    )
    return [out_dir]


def cmd_finetune(args) -> list[Path]:
    train_ds, meta = _load_dataset(args.train)
    val_ds, _ = _load_dataset(args.validation)
    pretrained = load_checkpoint(args.pretrained) if args.pretrained else None
    if pretrained is not None:
        encoder_config = pretrained.encoder_config
    else:
        encoder_config = _encoder_config_from_args(args, meta)
    train_config = TrainConfig(
        phase="finetune",
        task=args.task,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        early_stop_patience=args.patience,
        seed=args.seed,
        input_mode=args.input_mode,
        grad_clip_norm=None if args.no_grad_clip else args.grad_clip,
        weight_decay=args.weight_decay,
    )
    out_dir = Path(args.out)
    result = finetune(
        train_ds,
        val_ds,
        train_config,
        encoder_config,
        pretrained=pretrained,
        out_dir=out_dir,
        data_meta={
            "resolution_bp": meta["resolution_bp"],
            "bin_track_bp": meta["bin_track_bp"],
        },
    )
    print(
        f"fine-tuned {result.epochs_run} epochs, best validation loss "
        f"{result.best_checkpoint.best_metric:.6f}",
        file=sys.stderr,
    )
    return [out_dir]


def cmd_predict(args) -> list[Path]:
    checkpoint = load_checkpoint(args.checkpoint)
    samples, meta = read_archive(args.data)
    dataset = WindowDataset.from_samples(samples)
    outputs = predict(checkpoint, dataset, input_mode=args.input_mode)
    out_path = Path(args.out)
    with open(out_path, "w") as handle:
        if checkpoint.kind == "loop":
            for sample, prob in zip(samples, outputs):
                ix, iy = sample.contact.origin_x, sample.contact.origin_y
                handle.write(
                    f"{ix.chromosome}\t{ix.start}\t{ix.end}\t"
                    f"{iy.chromosome}\t{iy.start}\t{iy.end}\t{prob:.6f}\n"
                )
        elif checkpoint.kind == "cage":
            for row in outputs:
                handle.write("\t".join(f"{v:.6f}" for v in row) + "\n")
        else:
            for k, (sample, grid) in enumerate(zip(samples, outputs)):
                ix, iy = sample.contact.origin_x, sample.contact.origin_y
                handle.write(f"# sample {k}\t{ix.chromosome}\t{ix.start}\t{iy.chromosome}\t{iy.start}\n")
                for row in grid:
                    handle.write("\t".join(f"{v:.6f}" for v in row) + "\n")
    return [out_path]


def cmd_evaluate(args) -> list[Path]:
    checkpoint = load_checkpoint(args.checkpoint)
    samples, meta = read_archive(args.data)
    if args.corrupt_mode != "none":
        samples = [
            corrupt_contacts(s, args.corrupt_ratio, args.corrupt_mode, seed=args.corrupt_seed + k)
            for k, s in enumerate(samples)
        ]
    dataset = WindowDataset.from_samples(samples)
    outputs = predict(checkpoint, dataset, input_mode=args.input_mode)
    reports: list[MetricReport] = []
    task = checkpoint.kind
    n = len(samples)
    if task == "loop":
        labels = np.array([s.loop_label for s in samples])
        precision, recall, f1 = prf(outputs, labels)
        reports.append(MetricReport("auroc", auroc(outputs, labels), n, task, args.split))
        reports.append(MetricReport("precision", precision, n, task, args.split))
        reports.append(MetricReport("recall", recall, n, task, args.split))
        reports.append(MetricReport("f1", f1, n, task, args.split))
    else:
        targets = np.stack(
            [s.cage if task == "cage" else s.contact_target for s in samples]
        )
        reports.append(MetricReport("r_squared", r_squared(outputs, targets), n, task, args.split))
        reports.append(
            MetricReport("mse", float(((outputs - targets) ** 2).mean()), n, task, args.split)
        )
    out_path = Path(args.out)
    with open(out_path, "w") as handle:
        handle.write("metric\tvalue\tsample_count\ttask\tsplit\n")
        for report in reports:
            handle.write(
                f"{report.name}\t{report.value:.6f}\t{report.sample_count}"
                f"\t{report.task}\t{report.split}\n"
            )
    return [out_path]


def cmd_annotate_loops(args) -> list[Path]:
    manifest = load_manifest(args.manifest)
    checkpoint = load_checkpoint(args.checkpoint)
    out_path = Path(args.out)
    calls = annotate_chromosome(
        manifest,
        checkpoint,
        args.chromosome,
        max_distance_bins=args.max_distance,
        out_path=out_path,
        p_threshold=args.p_threshold,
        score_threshold=args.score_threshold,
        neighborhood_radius_bins=args.radius,
        fdr_target=args.fdr,
    )
    print(f"annotated {len(calls)} loops on {args.chromosome}", file=sys.stderr)
    return [out_path]


def cmd_perturb(args) -> list[Path]:
    checkpoint = load_checkpoint(args.checkpoint)
    samples, _ = read_archive(args.data)
    loops = parse_loops(args.loops)
    if len(loops) != len(samples):
        raise ValidationError(
            f"{len(samples)} samples but {len(loops)} loop annotations; "
            "they must align one-to-one"
        )
    positives = [
        (s, l) for s, l in zip(samples, loops) if s.loop_label == 1
    ]
    if not positives:
        raise ValidationError("no positive loop samples to perturb")
    ratios = tuple(float(r) for r in args.ratios.split(","))
    recalls = perturbation_experiment(
        checkpoint, positives, ratios=ratios, input_mode=args.input_mode
    )
    out_path = Path(args.out)
    with open(out_path, "w") as handle:
        handle.write("ratio\trecall\n")
        for ratio in ratios:
            handle.write(f"{ratio:.3f}\t{recalls[ratio]:.6f}\n")
    return [out_path]


def cmd_theorem_demo(args) -> list[Path]:
    rng = np.random.default_rng(args.seed)
    out_path = Path(args.out)
    passed = 0
    with open(out_path, "w") as handle:
        handle.write("gamma_q\traw_ce\taligned_ce\tbound_holds\n")
        for _ in range(args.trials):
            shape = tuple(int(rng.integers(2, args.max_alphabet + 1)) for _ in range(3))
            report = info_gap_demo(random_joint(rng, shape))
            passed += int(report.bound_holds)
            handle.write(
                f"{report.gamma_q:.12f}\t{report.raw_ce:.12f}\t"
                f"{report.aligned_ce:.12f}\t{int(report.bound_holds)}\n"
            )
    print(f"information-gap bound held in {passed}/{args.trials} trials", file=sys.stderr)
    if passed != args.trials:
        raise NumericError(f"bound violated in {args.trials - passed} trials")
    return [out_path]


def cmd_plot(args) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_path = Path(args.out)
    fig, ax = plt.subplots(figsize=(6, 4))
    if args.kind == "pretrain-loss":
        data = np.loadtxt(args.input, ndmin=2)
        for column, label in zip(range(1, 5), ("contrastive", "orthogonal", "mapping", "total")):
            ax.plot(data[:, 0], data[:, column], label=label)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
    elif args.kind == "epoch-loss":
        data = np.loadtxt(args.input, ndmin=2)
        ax.plot(data[:, 0], data[:, 1], label="train")
        ax.plot(data[:, 0], data[:, 2], label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
    elif args.kind == "ratio-curve":
        data = np.loadtxt(args.input, skiprows=1, ndmin=2)
        ax.plot(data[:, 0], data[:, 1], marker="o")
        ax.set_xlabel("ratio")
        ax.set_ylabel("value")
    else:
        raise ValidationError(f"unknown plot kind {args.kind!r}")
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return [out_path]


def _add_encoder_flags(parser) -> None:
    parser.add_argument("--base-dim", type=int, default=128, help="base feature dimension")
    parser.add_argument("--blocks", type=int, default=2, help="transformer blocks per layer")
    parser.add_argument("--heads", type=int, default=4, help="attention heads")
    parser.add_argument("--patch-size", type=int, default=2, help="contact-map patch size")
    parser.add_argument("--dropout", type=float, default=0.0, help="dropout rate")


def _add_optim_flags(parser, default_lr: float) -> None:
    parser.add_argument("--learning-rate", type=float, default=default_lr)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--weight-decay", type=float, default=0.01)
    parser.add_argument("--grad-clip", type=float, default=5.0)
    parser.add_argument("--no-grad-clip", action="store_true")


def build_parser() -> _Parser:
    parser = _Parser(prog="hicfuse", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None, help="bound intra-command parallelism")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate-synthetic", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--task", choices=("none", "loop", "cage", "contact"), default="none")
    p.add_argument("--n-bins", type=int, default=400)
    p.add_argument("--loop-count", type=int, default=40)
    p.add_argument("--enrichment", type=float, default=8.0)
    p.add_argument("--kappa", type=float, default=0.8)
    p.add_argument("--background", type=float, default=20.0)
    p.add_argument("--track-noise", type=float, default=0.1)
    p.add_argument("--min-loop-distance", type=int, default=5)
    p.add_argument("--max-loop-distance", type=int, default=None)
    p.add_argument("--resolution", type=int, default=5000)
    p.add_argument("--window-bins", type=int, default=16)
    p.add_argument("--train", type=int, default=0)
    p.add_argument("--validation", type=int, default=0)
    p.add_argument("--test", type=int, default=0)
    p.set_defaults(func=cmd_generate_synthetic)

    p = sub.add_parser("preprocess", help="assemble window archives from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=("none", "loop", "contact"), default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--balance-tolerance", type=float, default=1e-6)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    p.add_argument("--data", required=True, help="paired-window archive")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--temperature", type=float, default=0.07)
    _add_encoder_flags(p)
    _add_optim_flags(p, default_lr=1e-5)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="task-specific fine-tuning")
    p.add_argument("--task", choices=("loop", "cage", "contact"), required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--validation", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--pretrained", default=None)
    p.add_argument(
        "--input-mode",
        choices=("bimodal", "infer_missing_hic", "track_only"),
        default="bimodal",
    )
    p.add_argument("--patience", type=int, default=20)
    _add_encoder_flags(p)
    _add_optim_flags(p, default_lr=1e-5)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("predict", help="run inference on an archive")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--input-mode", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="compute task metrics on an archive")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--input-mode", default=None)
    p.add_argument("--corrupt-mode", choices=("none", "sparsify", "gaussian"), default="none")
    p.add_argument("--corrupt-ratio", type=float, default=0.0)
    p.add_argument("--corrupt-seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("annotate-loops", help="whole-chromosome loop annotation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--chromosome", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--p-threshold", type=float, default=0.01)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--fdr", type=float, default=0.05)
    p.add_argument("--max-distance", type=int, required=True, help="distance cap in bins")
    p.set_defaults(func=cmd_annotate_loops)

    p = sub.add_parser("perturb", help="anchor-attenuation recall experiment")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="loop-task archive")
    p.add_argument("--loops", required=True, help="per-sample loop annotations")
    p.add_argument("--ratios", default="0,0.5,0.7,0.9")
    p.add_argument("--input-mode", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("theorem-demo", help="closed-form information-gap bound checks")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-alphabet", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_theorem_demo)

    p = sub.add_parser("plot", help="render metric files as line charts")
    p.add_argument("--kind", choices=("pretrain-loss", "epoch-loss", "ratio-curve"), required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    if getattr(args, "command", None) is None or not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return 1
    if args.threads is not None:
        torch.set_num_threads(args.threads)
    started = time.time()
    try:
        outputs = args.func(args)
        _write_run_record(args, outputs, started)
    except (ValidationError, ConfigError, ParseError, MetricUndefinedError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, NumericError, SamplingError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
