"""Command line front door: train, eval, gradcheck, dos-trace, synth.

Every command is deterministic for a fixed flag set. Output files are first
written under a temporary name in the target directory and renamed into
place, so a failing run never leaves partial output behind. Reports are
written as delimited text plus a rendered figure of the same data.
"""
from __future__ import annotations

import argparse
import os
import sys
import tempfile
import time

import numpy as np

from .cell import CellParams, forward_sequence, load_params, save_params
from .data import (Dataset, load_dataset, load_pca, pca_fit, pca_transform,
                   save_dataset, save_pca, split_by_subject, synth_spike_dataset)
from .plots import (save_confusion_figure, save_dos_trace_figure,
                    save_loss_curve_figure)
from .training import (BpttMode, LossMode, TrainConfig, evaluate,
                       run_gradient_checks, save_loss_curve, train)

GRADCHECK_TOLERANCE = 1e-5


# === atomic output helpers ===


def _atomic(path, writer) -> None:
    """Run writer against a temporary sibling path, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory,
                               prefix=os.path.basename(path) + ".", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_text(path, text: str) -> None:
    def writer(tmp):
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
    _atomic(path, writer)


def _confusion_csv(matrix, normalized: bool) -> str:
    k = matrix.shape[0]
    lines = ["class," + ",".join(str(c) for c in range(1, k + 1))]
    for r in range(k):
        if normalized:
            cells = ",".join(f"{v:.17g}" for v in matrix[r])
        else:
            cells = ",".join(str(int(v)) for v in matrix[r])
        lines.append(f"{r + 1},{cells}")
    return "\n".join(lines) + "\n"


# === shared pieces ===


def _load_model_with_pca(model_path):
    params = load_params(model_path)
    pca_path = model_path + ".pca"
    pca = load_pca(pca_path) if os.path.exists(pca_path) else None
    return params, pca


def _apply_pca(dataset: Dataset, pca) -> Dataset:
    if pca is None:
        return dataset
    return dataset.with_frames(lambda frames: pca_transform(pca, frames))


def _loss_mode_for(dataset: Dataset, requested: LossMode) -> LossMode:
    """Reject a loss mode whose label arity the dataset cannot serve."""
    frame_labeled = any(seq.has_frame_labels for seq in dataset.sequences)
    if requested == LossMode.CUMULATIVE and not frame_labeled:
        raise ValueError(
            "cumulative loss needs per-frame labels, dataset has sequence labels"
        )
    if requested == LossMode.FINAL and frame_labeled:
        raise ValueError(
            "final loss needs sequence-level labels, dataset has per-frame labels"
        )
    return requested


def _fit_and_train(train_set: Dataset, args, seed: int):
    """PCA (optional) plus one training run; shared by train and eval trials."""
    loss_mode = _loss_mode_for(train_set, LossMode(args.loss))
    pca = None
    if args.pca_energy is not None:
        pca = pca_fit(train_set.all_frames(), args.pca_energy)
        train_set = _apply_pca(train_set, pca)
    params = CellParams.random(args.order, train_set.feature_dim, args.state_dim,
                               train_set.num_classes, seed=seed)
    config = TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                         shuffle_seed=seed, truncation=BpttMode.TRUNCATED,
                         loss_mode=loss_mode)
    params, curve = train(train_set, params, config)
    return params, curve, pca


# === commands ===


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    started = time.perf_counter()
    params, curve, pca = _fit_and_train(dataset, args, args.seed)
    elapsed = time.perf_counter() - started

    model_path = args.model or os.path.join(args.out, "model.drnn")
    _atomic(model_path, lambda tmp: save_params(params, tmp))
    if pca is not None:
        _atomic(model_path + ".pca", lambda tmp: save_pca(pca, tmp))
    _atomic(os.path.join(args.out, "loss_curve.tsv"),
            lambda tmp: save_loss_curve(tmp, curve))
    _atomic(os.path.join(args.out, "loss_curve.png"),
            lambda tmp: save_loss_curve_figure(curve, tmp))
    print(f"epochs={args.epochs} final_loss={curve[-1]:.17g} time_s={elapsed:.2f}")
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    out = args.out

    if args.split_fraction is not None:
        # split / train / evaluate, once per trial, then aggregate
        accuracies = []
        normalized_sum = None
        for trial in range(args.trials):
            train_set, test_set = split_by_subject(dataset, args.split_fraction,
                                                   args.split_seed + trial)
            params, _, pca = _fit_and_train(train_set, args, args.seed + trial)
            accuracy, confusion = evaluate(params, _apply_pca(test_set, pca))
            accuracies.append(accuracy)
            rows = confusion.sum(axis=1, keepdims=True)
            normalized = confusion / np.where(rows == 0, 1, rows)
            normalized_sum = normalized if normalized_sum is None \
                else normalized_sum + normalized
            _write_text(os.path.join(out, f"confusion_trial{trial}.csv"),
                        _confusion_csv(confusion, normalized=False))
            print(f"trial={trial} accuracy={accuracy:.17g}")
        mean_confusion = normalized_sum / args.trials
        mean_accuracy = float(np.mean(accuracies))
        _write_text(os.path.join(out, "confusion_mean.csv"),
                    _confusion_csv(mean_confusion, normalized=True))
        _atomic(os.path.join(out, "confusion_mean.png"),
                lambda tmp: save_confusion_figure(mean_confusion, tmp,
                                                  normalized=True))
        summary = "".join(f"trial={i} accuracy={a:.17g}\n"
                          for i, a in enumerate(accuracies))
        summary += f"mean_accuracy={mean_accuracy:.17g}\n"
        _write_text(os.path.join(out, "accuracy.txt"), summary)
        print(f"mean_accuracy={mean_accuracy:.17g}")
        return 0

    # plain evaluation of a stored model on the whole dataset
    params, pca = _load_model_with_pca(args.model)
    dataset = _apply_pca(dataset, pca)
    if dataset.feature_dim != params.input_dim:
        raise ValueError(
            f"dataset feature width {dataset.feature_dim} does not match "
            f"model input width {params.input_dim}"
        )
    if dataset.num_classes != params.output_dim:
        raise ValueError(
            f"dataset has {dataset.num_classes} classes, model emits "
            f"{params.output_dim}"
        )
    accuracy, confusion = evaluate(params, dataset)
    _write_text(os.path.join(out, "confusion.csv"),
                _confusion_csv(confusion, normalized=False))
    _atomic(os.path.join(out, "confusion.png"),
            lambda tmp: save_confusion_figure(confusion, tmp))
    _write_text(os.path.join(out, "accuracy.txt"), f"accuracy={accuracy:.17g}\n")
    print(f"accuracy={accuracy:.17g}")
    return 0


def cmd_gradcheck(args) -> int:
    seed_kwargs = {} if args.seed is None else {"seed": args.seed}
    results = run_gradient_checks(tolerance=GRADCHECK_TOLERANCE,
                                  corrupt_check=args.corrupt_check, **seed_kwargs)
    all_passed = True
    for res in results:
        flag = "PASS" if res.passed else "FAIL"
        print(f"order={res.order} bptt={res.bptt.value} loss={res.loss_mode.value} "
              f"max_rel_err={res.max_rel_err:.3e} {flag}")
        all_passed &= res.passed
    print(f"gradcheck {'PASS' if all_passed else 'FAIL'} "
          f"({len(results)} checks, tolerance {GRADCHECK_TOLERANCE:g})")
    return 0 if all_passed else 1


def cmd_dos_trace(args) -> int:
    params, pca = _load_model_with_pca(args.model)
    dataset = _apply_pca(load_dataset(args.data), pca)
    matches = [s for s in dataset.sequences if s.sequence_id == args.sequence_id]
    if not matches:
        raise ValueError(f"sequence id {args.sequence_id!r} not found in dataset")
    seq = matches[0]
    _, traces = forward_sequence(seq.frames, params)
    v_norms = [float(np.linalg.norm(tr.v)) for tr in traces]
    a_norms = [float(np.linalg.norm(tr.a)) for tr in traces]
    lines = "".join(f"{t}\t{v:.17g}\t{a:.17g}\n"
                    for t, (v, a) in enumerate(zip(v_norms, a_norms)))
    _write_text(os.path.join(args.out, "dos_trace.tsv"), lines)
    _atomic(os.path.join(args.out, "dos_trace.png"),
            lambda tmp: save_dos_trace_figure(v_norms, a_norms, tmp))
    print(f"sequence={seq.sequence_id} frames={len(traces)} "
          f"peak_velocity_frame={int(np.argmax(v_norms))}")
    return 0


def cmd_synth(args) -> int:
    dataset, spikes = synth_spike_dataset(
        num_sequences=args.synth_n, num_frames=args.synth_t, dim=args.synth_d,
        num_classes=args.synth_k, spike_magnitude=args.spike_mag,
        noise_sigma=args.noise_sigma, seed=args.seed)
    _atomic(os.path.join(args.out, "synthetic.txt"),
            lambda tmp: save_dataset(dataset, tmp))
    sidecar = "".join(f"{seq.sequence_id}\t{t_star}\n"
                      for seq, t_star in zip(dataset.sequences, spikes))
    _write_text(os.path.join(args.out, "synthetic_spikes.tsv"), sidecar)
    print(f"sequences={len(dataset)} classes={dataset.num_classes} "
          f"dim={dataset.feature_dim}")
    return 0


# === parser ===


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drnn",
        description="Train and evaluate a derivative-gated recurrent classifier.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_train_flags(p):
        p.add_argument("--order", type=int, choices=(0, 1, 2), default=1,
                       help="highest state derivative feeding the gates")
        p.add_argument("--state-dim", type=int, default=64)
        p.add_argument("--loss", choices=("final", "cumulative"), default="final")
        p.add_argument("--lr", type=float, default=0.0001)
        p.add_argument("--epochs", type=int, default=50)
        p.add_argument("--pca-energy", type=float, default=None,
                       help="fit PCA on training frames keeping this variance fraction")

    p_train = sub.add_parser("train",
                             help="fit a model and write it with its loss curve")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--model", default=None,
                         help="model output path (default <out>/model.drnn)")
    p_train.add_argument("--seed", type=int, default=0)
    add_train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval",
                            help="score a model, or run split-train-eval trials")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--model", default=None)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--trials", type=int, default=1)
    p_eval.add_argument("--split-fraction", type=float, default=None)
    p_eval.add_argument("--split-seed", type=int, default=0)
    add_train_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser(
        "gradcheck", help="verify both reverse modes against finite differences")
    p_grad.add_argument("--seed", type=int, default=None,
                        help="probe instance seed (default: built-in pinned probe)")
    p_grad.add_argument("--corrupt-check", type=int, default=None,
                        help=argparse.SUPPRESS)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_trace = sub.add_parser(
        "dos-trace", help="dump state derivative norms of one sequence")
    p_trace.add_argument("--data", required=True)
    p_trace.add_argument("--model", required=True)
    p_trace.add_argument("--out", required=True)
    p_trace.add_argument("--sequence-id", required=True)
    p_trace.set_defaults(func=cmd_dos_trace)

    p_synth = sub.add_parser("synth", help="generate a synthetic spike dataset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--synth-n", type=int, default=200)
    p_synth.add_argument("--synth-t", type=int, default=20)
    p_synth.add_argument("--synth-d", type=int, default=16)
    p_synth.add_argument("--synth-k", type=int, default=4)
    p_synth.add_argument("--spike-mag", type=float, default=5.0)
    p_synth.add_argument("--noise-sigma", type=float, default=0.1)
    p_synth.set_defaults(func=cmd_synth)

    return parser


def _validate(args, parser) -> None:
    if args.command == "eval":
        if args.trials < 1:
            parser.error("--trials must be at least 1")
        if args.trials > 1 and args.split_fraction is None:
            parser.error("--split-fraction is required when --trials exceeds 1")
        if args.split_fraction is None and args.model is None:
            parser.error("--model is required when no --split-fraction is given")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate(args, parser)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())
