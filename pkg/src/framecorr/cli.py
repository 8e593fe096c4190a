"""Command-line entry point: `framecorr <subcommand> [flags]`.

Every subcommand prints its resolved configuration as JSON and writes the same
JSON next to its outputs. Exit status: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

OUT_ENV = "FRAMECORR_OUT"
RECONSTRUCTOR_METHOD = {"zero": "pnc", "framecorr": "framecorr"}


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "runs")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _dims(text: str) -> tuple[int, int, int]:
    parts = _int_list(text.replace("x", ","))
    if len(parts) != 3 or min(parts) <= 0:
        raise argparse.ArgumentTypeError(f"expected WxHxC, got {text!r}")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="framecorr", description=__doc__, formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="subcommand")

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        sp.add_argument("--seed", type=int, default=0, help="random seed")
        sp.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or ./runs)")
        return sp

    sp = add("prep", "write a manifest and a resized FCRW frame cache")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="directory holding one sub-directory of frames per video")
    src.add_argument("--synthetic", choices=["moving_square", "constant", "noise"], help="generate synthetic videos")
    sp.add_argument("--manifest", help="existing manifest for --input (default: seeded 70/15/15 split)")
    sp.add_argument("--dims", type=_dims, default=(32, 32, 3), help="frame size WxHxC")
    sp.add_argument("--counts", type=_int_list, default=[14, 3, 3], help="synthetic train,val,test video counts")
    sp.add_argument("--frames", type=int, default=10, help="frames per synthetic video")

    def data(sp):
        sp.add_argument("--data", required=True, help="manifest.csv written by prep")

    sp = add("train-ae", "train the progressive autoencoder")
    data(sp)
    sp.add_argument("--epochs", type=int, default=15)
    sp.add_argument("--B", type=int, default=10, help="number of latent segments")
    sp.add_argument("--S", type=int, default=1, help="values per segment")
    sp.add_argument("--hidden", type=int, default=256)
    sp.add_argument("--lr", type=float, default=1.0)
    sp.add_argument("--batch-size", type=int, default=1)
    sp.add_argument("--keep-all", type=float, default=0.5, help="taildrop keep-all probability")

    sp = add("train-pred", "train the latent predictor against a frozen autoencoder")
    data(sp)
    sp.add_argument("--ae", required=True, help="autoencoder checkpoint")
    sp.add_argument("--K", type=int, default=1, help="history length")
    sp.add_argument("--epochs", type=int, default=15)
    sp.add_argument("--hidden", type=int, default=64)
    sp.add_argument("--lr", type=float, default=0.25)
    sp.add_argument("--batch-size", type=int, default=1)

    sp = add("build-ladder", "encode the monolithic quality ladder for the test videos")
    data(sp)
    sp.add_argument("--steps", type=_int_list, default=None, help="quantizer steps (default 18:4,23:8,30:16)")
    sp.add_argument("--gop", type=int, default=12)
    sp.add_argument("--fps", type=float, default=30.0)

    def channel(sp):
        sp.add_argument("--preset", choices=["low", "medium", "high"], default="high", help="congestion preset")
        sp.add_argument("--rate", type=int, help="custom channel rate in bit/s (overrides --preset)")
        sp.add_argument("--burst", type=int, default=32_000, help="custom channel burst in bits")
        sp.add_argument("--latency-ms", type=float, default=0.0, help="custom channel one-way latency")

    sp = add("transmit", "send the test videos over an emulated channel and report")
    data(sp)
    sp.add_argument("--ae", required=True)
    sp.add_argument("--pred", help="predictor checkpoint (needed for --reconstructor framecorr)")
    channel(sp)
    sp.add_argument("--deadline-ms", type=_positive_float, default=6.0, help="per-frame budget")
    sp.add_argument("--video-deadline-ms", type=_positive_float, default=300.0, help="whole-video budget (monolithic)")
    sp.add_argument("--ack", choices=["feature", "frame"], default="feature", help="ACK granularity")
    sp.add_argument("--reconstructor", choices=["zero", "framecorr"], default="zero")
    sp.add_argument("--no-baseline", action="store_true", help="skip the monolithic ladder")
    sp.add_argument("--gop", type=int, default=12)

    sp = add("sweep", "force k dropped segments per frame and report MSE per k")
    data(sp)
    sp.add_argument("--ae", required=True)
    sp.add_argument("--pred", help="predictor checkpoint (needed for --reconstructor framecorr)")
    sp.add_argument("--k", type=_int_list, default=[0, 1, 2, 3, 4], help="segments dropped per frame")
    sp.add_argument("--reconstructor", choices=["zero", "framecorr"], default="zero")

    sp = add("report", "merge result CSVs")
    sp.add_argument("inputs", nargs="+", help="results.csv files")
    return p


def _resolved(args: argparse.Namespace) -> dict:
    d = {k: v for k, v in vars(args).items() if k != "verbose"}
    return json.loads(json.dumps(d, default=list))


def _echo(args: argparse.Namespace, out: Path) -> None:
    text = json.dumps(_resolved(args), indent=2, sort_keys=True)
    print(text)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{args.command}.config.json").write_text(text + "\n", encoding="utf-8")


def _splits(manifest_path: str):
    from .frame_io import load_dataset, split_dataset

    manifest, seqs = load_dataset(manifest_path)
    return split_dataset(manifest, seqs, training=True)


def cmd_prep(args, out: Path) -> None:
    from .frame_io import (
        SPLITS, DatasetManifest, ManifestEntry, load_sequence, read_manifest,
        save_sequence, synth_dataset, write_manifest,
    )

    w, h, c = args.dims
    entries = []
    if args.synthetic:
        parts = synth_dataset(args.synthetic, args.counts, args.frames, args.dims, args.seed)
        for split, seqs in zip(SPLITS, parts):
            for s in seqs:
                save_sequence(s, out / "frames" / s.source_id)
                entries.append(ManifestEntry(s.source_id, split, s.label or ""))
    else:
        root = Path(args.input)
        if args.manifest:
            entries = list(read_manifest(args.manifest).entries)
        else:
            ids = sorted(p.name for p in root.iterdir() if p.is_dir())
            order = np.random.default_rng(args.seed).permutation(len(ids))
            n_train, n_val = int(0.7 * len(ids)), int(0.15 * len(ids))
            for rank, j in enumerate(order):
                split = "train" if rank < n_train else "validation" if rank < n_train + n_val else "test"
                entries.append(ManifestEntry(ids[j], split))
            entries.sort(key=lambda e: e.source_id)
        for e in entries:
            seq = load_sequence(root / e.source_id, target=(w, h))
            if seq.dims[2] != c:
                raise ValueError(f"{e.source_id}: {seq.dims[2]} channels, expected {c}")
            save_sequence(seq, out / "frames" / e.source_id)
    write_manifest(DatasetManifest(tuple(entries)), out / "manifest.csv")
    print(f"wrote {len(entries)} videos to {out}", file=sys.stderr)


def cmd_train_ae(args, out: Path) -> None:
    from .nn import TrainConfig
    from .progressive import TaildropDistribution, train_autoencoder

    train, val, _ = _splits(args.data)
    cfg = TrainConfig(args.epochs, args.lr, batch_size=args.batch_size, seed=args.seed)
    history = []
    model = train_autoencoder(
        train, val, cfg, TaildropDistribution(args.keep_all), args.B, args.S, args.hidden, history
    )
    model.save(out / "autoencoder.fcnn")
    (out / "train-ae.history.json").write_text(json.dumps(history) + "\n", encoding="utf-8")


def cmd_train_pred(args, out: Path) -> None:
    from .nn import TrainConfig
    from .predictor import train_predictor
    from .progressive import AutoencoderModel, encode

    model = AutoencoderModel.load(args.ae)
    train, val, _ = _splits(args.data)
    cfg = TrainConfig(args.epochs, args.lr, batch_size=args.batch_size, seed=args.seed)
    history = []
    pred = train_predictor(
        [encode(model, s.frames) for s in train], args.K, cfg, model.taildrop,
        [encode(model, s.frames) for s in val], args.hidden, history,
    )
    pred.save(out / "predictor.fcnn")
    (out / "train-pred.history.json").write_text(json.dumps(history) + "\n", encoding="utf-8")


def cmd_build_ladder(args, out: Path) -> None:
    from .baseline import DEFAULT_LADDER, build_ladder, encode_monolithic

    _, _, test = _splits(args.data)
    steps = args.steps if args.steps else DEFAULT_LADDER
    result = {}
    for video in test:
        ladder = build_ladder(video, steps, args.gop, args.fps)
        result[video.source_id] = {
            "levels": [{"id": lv.level_id, "q": lv.q, "bitrate": lv.bitrate} for lv in ladder.levels],
            "ties": [list(t) for t in ladder.ties],
        }
        for lv in ladder.levels:
            path = out / "ladder" / video.source_id / f"{lv.level_id}.fcmv"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(encode_monolithic(video, lv.q, args.gop).data)
    (out / "ladder.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _experiment(args, out: Path, **extra):
    from .channel import ChannelConfig
    from .metrics import ExperimentConfig, run_experiment

    method = RECONSTRUCTOR_METHOD[args.reconstructor]
    channel = None
    if getattr(args, "rate", None) is not None:
        channel = ChannelConfig(args.rate, args.burst, args.latency_ms)
    cfg = ExperimentConfig(
        manifest=args.data, autoencoder=args.ae, predictor=args.pred, output_dir=str(out),
        channel=channel, preset=getattr(args, "preset", "high"), seed=args.seed, **extra,
        methods=(method,) if extra.get("drop_k") or getattr(args, "no_baseline", False) else (method, "monolithic"),
    )
    result = run_experiment(cfg)
    for vid, err in result.errors.items():
        print(f"error: {vid}: {err}", file=sys.stderr)
    print(f"wrote {result.csv_path} and {result.summary_path}", file=sys.stderr)
    return 0 if result.ok else 1


def cmd_transmit(args, out: Path) -> int:
    return _experiment(
        args, out, frame_deadline_ms=args.deadline_ms, video_deadline_ms=args.video_deadline_ms,
        ack_per=args.ack, gop=args.gop,
    )


def cmd_sweep(args, out: Path) -> int:
    return _experiment(args, out, drop_k=tuple(args.k))


def cmd_report(args, out: Path) -> None:
    from .metrics import merge_reports

    n = merge_reports(args.inputs, out / "merged.csv")
    print(f"merged {n} rows into {out / 'merged.csv'}", file=sys.stderr)


COMMANDS = {
    "prep": cmd_prep,
    "train-ae": cmd_train_ae,
    "train-pred": cmd_train_pred,
    "build-ladder": cmd_build_ladder,
    "transmit": cmd_transmit,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    out = Path(args.out if args.out is not None else _default_out())
    args.out = str(out)
    try:
        _echo(args, out)
        status = COMMANDS[args.command](args, out)
    except Exception as exc:
        print(f"framecorr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
