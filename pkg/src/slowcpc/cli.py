"""Command-line entry point: ``slowcpc <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .audio_io import Dataset, frame_labels, load_manifest, load_wav, write_wav
from .augment import NoiseCache, add_bandlimited_noise, pitch_shift, reverb
from .config import load_config
from .errors import SlowCPCError
from .eval.abx import abx_score, load_abx_items, write_abx_report
from .eval.cluster import cluster_report
from .eval.features import SUFFIX, extract_features, read_features
from .eval.probe import train_linear_probe, utterance_embedding
from .synth import SynthConfig, generate_synthetic_corpus
from .trainer import fit

log = logging.getLogger("slowcpc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slowcpc", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="cap on torch worker threads")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train a CPC model")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True, help="manifest file")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int, help="overrides the config seed")
    t.add_argument("--resume", help="checkpoint to resume from")

    e = sub.add_parser("extract", help="write per-utterance feature files")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--level", choices=("z", "c"), default="z")
    e.add_argument("--out", required=True)

    a = sub.add_parser("eval-abx", help="ABX phone discrimination")
    a.add_argument("--features", required=True, action="append")
    a.add_argument("--items", required=True)
    a.add_argument("--mode", choices=("within", "across"), default="within")
    a.add_argument("--out", help="report path prefix (default abx_<mode>)")

    pr = sub.add_parser("probe", help="linear phone or speaker probe")
    pr.add_argument("--task", choices=("phone", "speaker"), default="phone")
    pr.add_argument("--features", required=True, action="append")
    pr.add_argument("--data", required=True)
    pr.add_argument("--epochs", type=int, default=10)
    pr.add_argument("--lr", type=float, default=1e-2)
    pr.add_argument("--test-fraction", type=float, default=0.2)
    pr.add_argument("--shuffle-labels", action="store_true", help="chance-level control")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out", help="report path prefix (default probe_<task>)")

    c = sub.add_parser("cluster", help="k-means purity / NMI against frame phone labels")
    c.add_argument("--features", required=True, action="append")
    c.add_argument("--data", required=True)
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", help="report path prefix (default cluster_k<k>)")

    g = sub.add_parser("augment", help="augment a single WAV file (debugging)")
    g.add_argument("--in", dest="inp", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--pitch", type=int, help="pitch shift in 1/100 tone")
    g.add_argument("--room-scale", type=float, help="reverb room scale in [0, 100]")
    g.add_argument("--noise-dir")
    g.add_argument("--snr-db", type=float, default=10.0)
    g.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("make-synth", help="generate the synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--num-phones", type=int, default=8)
    s.add_argument("--num-speakers", type=int, default=4)
    s.add_argument("--utterances-per-speaker", type=int, default=50)
    s.add_argument("--utterance-dur", type=float, default=2.0)
    return p


def _load_stack(dirs: list[str], utt_id: str) -> np.ndarray:
    mats = [read_features(Path(d) / (utt_id + SUFFIX)) for d in dirs]
    rows = min(m.shape[0] for m in mats)
    return np.concatenate([m[:rows] for m in mats], axis=1)


def frame_dataset(dirs: list[str], dataset: Dataset):
    """Stack frame features with their phone labels; also return per-frame utterance index."""
    feats, labels, owner = [], [], []
    for i, utt in enumerate(dataset.utterances):
        if utt.alignment is None:
            raise SlowCPCError(f"utterance {utt.id} has no alignment file")
        x = _load_stack(dirs, utt.id)
        feats.append(x)
        labels.extend(frame_labels(utt.alignment, len(x)))
        owner.extend([i] * len(x))
    return np.concatenate(feats), np.array(labels), np.array(owner)


def split_utterances(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def _write_report(prefix: str, rows: dict, title: str) -> None:
    Path(prefix + ".tsv").write_text(
        "\t".join(rows) + "\n" + "\t".join(str(v) for v in rows.values()) + "\n", encoding="utf-8")
    text = [title] + [f"  {k}: {v}" for k, v in rows.items()]
    Path(prefix + ".txt").write_text("\n".join(text) + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    dataset = load_manifest(args.data)
    final = fit(cfg, dataset, args.out, resume=args.resume)
    print(final)
    return 0


def cmd_extract(args) -> int:
    extract_features(args.checkpoint, load_manifest(args.data), args.level, args.out)
    return 0


def cmd_eval_abx(args) -> int:
    items = load_abx_items(args.features, args.items)
    report = abx_score(items, args.mode)
    prefix = args.out or f"abx_{args.mode}"
    write_abx_report(report, prefix + ".cells.tsv")
    _write_report(prefix, {"mode": report.mode, "error_percent": report.error_percent,
                           "cells": len(report.cells), "items": len(items)}, "ABX")
    print(f"{report.error_percent:.4f}")
    return 0


def cmd_probe(args) -> int:
    dataset = load_manifest(args.data)
    train_u, test_u = split_utterances(len(dataset), args.test_fraction, args.seed)
    if args.task == "phone":
        feats, labels, owner = frame_dataset(args.features, dataset)
        train_idx = np.flatnonzero(np.isin(owner, train_u))
        test_idx = np.flatnonzero(np.isin(owner, test_u))
    else:
        feats = np.stack([utterance_embedding(_load_stack(args.features, u.id))
                          for u in dataset.utterances])
        labels = np.array([u.speaker for u in dataset.utterances])
        train_idx, test_idx = train_u, test_u
    if args.shuffle_labels:
        labels = np.random.default_rng(args.seed + 1).permutation(labels)
    rep = train_linear_probe(feats, labels, train_idx, test_idx, epochs=args.epochs, lr=args.lr,
                             seed=args.seed, task=args.task)
    _write_report(args.out or f"probe_{args.task}", {
        "task": rep.task, "train_accuracy": rep.train_accuracy,
        "test_accuracy": rep.test_accuracy, "num_classes": rep.num_classes}, "Linear probe")
    print(f"{rep.test_accuracy:.4f}")
    return 0


def cmd_cluster(args) -> int:
    feats, labels, _ = frame_dataset(args.features, load_manifest(args.data))
    rep = cluster_report(feats, labels, args.k, np.random.default_rng(args.seed))
    prefix = args.out or f"cluster_k{args.k}"
    _write_report(prefix, {"k": rep.k, "purity": rep.purity, "nmi": rep.nmi,
                           "frames": int(rep.contingency.sum())}, "k-means clustering")
    np.savetxt(prefix + ".contingency.tsv", rep.contingency, fmt="%d", delimiter="\t")
    print(f"{rep.purity:.6f}\t{rep.nmi:.6f}")
    return 0


def cmd_augment(args) -> int:
    rng = np.random.default_rng(args.seed)
    x = load_wav(args.inp).samples
    if args.pitch is not None:
        x = pitch_shift(x, args.pitch, rng)
    if args.room_scale is not None:
        x = reverb(x, args.room_scale, rng)
    if args.noise_dir:
        cache = NoiseCache.load(args.noise_dir)
        if not cache.clips:
            raise SlowCPCError(f"no WAV files in {args.noise_dir}")
        clip = cache.clips[int(rng.integers(len(cache.clips)))]
        if len(clip) < len(x):
            clip = np.resize(clip, len(x))
        x = add_bandlimited_noise(x, clip, args.snr_db, rng)
    write_wav(args.out, x)
    return 0


def cmd_make_synth(args) -> int:
    cfg = SynthConfig(num_phones=args.num_phones, num_speakers=args.num_speakers,
                      utterances_per_speaker=args.utterances_per_speaker,
                      utterance_dur=args.utterance_dur, seed=args.seed)
    print(generate_synthetic_corpus(cfg, args.out))
    return 0


COMMANDS = {
    "train": cmd_train,
    "extract": cmd_extract,
    "eval-abx": cmd_eval_abx,
    "probe": cmd_probe,
    "cluster": cmd_cluster,
    "augment": cmd_augment,
    "make-synth": cmd_make_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(max(1, args.threads))
    try:
        return COMMANDS[args.command](args)
    except (SlowCPCError, OSError, ValueError) as exc:
        print(f"slowcpc {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
