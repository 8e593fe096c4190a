"""Evaluation quantities, drop sweeps, and the experiment runner that writes CSV/JSON reports.

MSE here is frame-summed: squared pixel differences summed within a frame, then
averaged over frames. A per-pixel mean is reported alongside for readability.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .baseline import DEFAULT_LADDER, build_ladder, encode_monolithic
from .channel import ChannelConfig, Link, preset
from .frame_io import FrameSequence, load_dataset, split_dataset
from .predictor import PredictorModel, reconstruct_latents
from .progressive import AutoencoderModel, ReceivedPrefix, decode, encode
from .transport import DeadlinePolicy, TransmissionLog, send_monolithic, send_progressive

log = logging.getLogger(__name__)

CSV_FIELDS = (
    "video_id", "method", "k_dropped", "mse_framesum", "mse_perpixel",
    "avg_bytes_per_frame", "elapsed_s", "percent", "seed",
)
RECONSTRUCTORS = {"pnc": "zero_fill", "framecorr": "framecorr"}


def video_mse(original: FrameSequence, reconstructed: FrameSequence) -> float:
    a, b = np.asarray(_frames(original)), np.asarray(_frames(reconstructed))
    if a.shape != b.shape:
        raise ValueError(f"sequence shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d) / len(a))


def _frames(seq) -> np.ndarray:
    return seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq, dtype=np.float64)


def per_pixel(mse_framesum: float, seq: FrameSequence) -> float:
    _, h, w, c = _frames(seq).shape
    return mse_framesum / (h * w * c)


def is_monolithic(method: str) -> bool:
    return method.startswith("monolithic")


def percent_transmitted(log_: TransmissionLog, method: str) -> float:
    if not log_.frames:
        raise ValueError("empty transmission log")
    if is_monolithic(method):
        return 100.0 if log_.complete else 0.0
    reached = sum(1 for f in log_.frames if f.segments_delivered >= 1)
    return 100.0 * reached / len(log_.frames)


@dataclass
class VideoReport:
    video_id: str
    method: str  # "monolithic@<level>", "pnc" or "framecorr"
    mse: float | None  # None when nothing decodable arrived
    mse_perpixel: float | None
    avg_bytes_per_frame: float
    total_elapsed: float  # seconds
    percent_transmitted: float
    k_dropped: int | None = None
    drops_histogram: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.mse is not None and self.mse < 0:
            raise ValueError("mse must be non-negative")
        if is_monolithic(self.method) and self.percent_transmitted not in (0.0, 100.0):
            raise ValueError("monolithic methods are all-or-nothing")

    def row(self, seed: int) -> list[str]:
        fmt = lambda x: "" if x is None else repr(float(x))
        return [
            self.video_id, self.method, "" if self.k_dropped is None else str(self.k_dropped),
            fmt(self.mse), fmt(self.mse_perpixel), fmt(self.avg_bytes_per_frame),
            fmt(self.total_elapsed), fmt(self.percent_transmitted), str(seed),
        ]


def drop_sweep(
    video: FrameSequence,
    model: AutoencoderModel,
    reconstructor: str,
    k_list: Sequence[int],
    predictor: PredictorModel | None = None,
    from_frame: int = 0,
) -> dict[int, float]:
    """Frame-sum MSE per k, every frame rebuilt from exactly its first B-k segments.

    `from_frame` restricts the average to frames from that index on, e.g. to
    leave out the predictor's cold-start frames.
    """
    n_seg, width = model.n_segments, model.segment_width
    if reconstructor not in ("zero_fill", "framecorr"):
        raise ValueError(f"unknown reconstructor {reconstructor!r}")
    if reconstructor == "framecorr" and predictor is None:
        raise ValueError("framecorr reconstruction needs a predictor")
    bad = [k for k in k_list if not 0 <= k < n_seg]
    if bad:
        raise ValueError(f"k must lie in [0, {n_seg}), got {bad}")
    features = encode(model, video.frames)
    out = {}
    for k in k_list:
        prefixes = [ReceivedPrefix.of(f, n_seg - k) for f in features]
        latents = reconstruct_latents(prefixes, n_seg, width, predictor if reconstructor == "framecorr" else None)
        recon = decode(model, latents)
        out[k] = video_mse(video.frames[from_frame:], recon[from_frame:])
    return out


# --- experiment runner -----------------------------------------------------------


@dataclass
class ExperimentConfig:
    manifest: str
    autoencoder: str
    output_dir: str
    predictor: str | None = None
    methods: tuple[str, ...] = ("pnc", "framecorr", "monolithic")
    preset: str | None = "high"
    channel: ChannelConfig | None = None  # custom channel, overrides `preset`
    frame_deadline_ms: float = 6.0
    video_deadline_ms: float = 300.0
    ack_per: str = "feature"
    ladder: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_LADDER))
    gop: int = 12
    drop_k: tuple[int, ...] | None = None  # drop-sweep mode when set; bypasses the channel
    frames_root: str | None = None
    seed: int = 0

    def __post_init__(self):
        self.methods = tuple(self.methods)
        for m in self.methods:
            if m not in ("pnc", "framecorr", "monolithic"):
                raise ValueError(f"unknown method {m!r}")
        needed = [self.manifest, self.autoencoder]
        if "framecorr" in self.methods:
            if self.predictor is None:
                raise ValueError("the framecorr method needs a predictor checkpoint")
            needed.append(self.predictor)
        for p in needed:
            if not Path(p).is_file():
                raise FileNotFoundError(f"{p}: no such file")
        if self.channel is None and self.preset is None:
            raise ValueError("give a channel preset or a custom channel")
        if self.channel is None:
            preset(self.preset)
        if self.ack_per not in ("feature", "frame"):
            raise ValueError(f"ack_per must be 'feature' or 'frame', got {self.ack_per!r}")
        DeadlinePolicy("per_frame", self.frame_deadline_ms)
        DeadlinePolicy("per_video", self.video_deadline_ms)
        if self.drop_k is not None:
            self.drop_k = tuple(int(k) for k in self.drop_k)
        if not isinstance(self.seed, int):
            raise ValueError("seed must be a fixed integer")

    @property
    def channel_config(self) -> ChannelConfig:
        return self.channel if self.channel is not None else preset(self.preset)

    def to_json(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["drop_k"] = None if self.drop_k is None else list(self.drop_k)
        d["channel"] = asdict(self.channel_config)
        return d


@dataclass
class ExperimentResult:
    reports: list[VideoReport]
    errors: dict[str, str]
    csv_path: Path
    summary_path: Path

    @property
    def ok(self) -> bool:
        return not self.errors


def _progressive_report(video, model, predictor, method, cfg) -> VideoReport:
    recon, tlog = send_progressive(
        video, model, Link(cfg.channel_config),
        DeadlinePolicy("per_frame", cfg.frame_deadline_ms),
        RECONSTRUCTORS[method], predictor, cfg.ack_per,
    )
    mse = video_mse(video, recon)
    delivered = sum(f.segments_delivered for f in tlog.frames)
    return VideoReport(
        video.source_id, method, mse, per_pixel(mse, video),
        4.0 * model.segment_width * delivered / len(video),
        tlog.total_elapsed_s, percent_transmitted(tlog, method),
        drops_histogram=tlog.drops_histogram(model.n_segments),
    )


def _monolithic_reports(video, cfg) -> list[VideoReport]:
    ladder = build_ladder(video, cfg.ladder, cfg.gop)
    out = []
    for lv in ladder.levels:
        stream = encode_monolithic(video, lv.q, cfg.gop)
        method = f"monolithic@{lv.level_id}"
        frames, tlog = send_monolithic(
            stream, Link(cfg.channel_config), DeadlinePolicy("per_video", cfg.video_deadline_ms)
        )
        mse = None if frames is None else video_mse(video, frames)
        out.append(VideoReport(
            video.source_id, method, mse, None if mse is None else per_pixel(mse, video),
            len(stream) / len(video), tlog.total_elapsed_s, percent_transmitted(tlog, method),
        ))
    return out


def _sweep_reports(video, model, predictor, cfg) -> list[VideoReport]:
    out = []
    for method in cfg.methods:
        if is_monolithic(method):
            continue
        mses = drop_sweep(video, model, RECONSTRUCTORS[method], cfg.drop_k, predictor)
        for k, mse in mses.items():
            out.append(VideoReport(
                video.source_id, method, mse, per_pixel(mse, video),
                4.0 * model.segment_width * (model.n_segments - k), 0.0, 100.0, k_dropped=k,
            ))
    return out


def _summary(cfg: ExperimentConfig, reports: list[VideoReport], errors: dict[str, str]) -> dict:
    groups: dict[str, list[VideoReport]] = {}
    for r in reports:
        key = r.method if r.k_dropped is None else f"{r.method}/k={r.k_dropped}"
        groups.setdefault(key, []).append(r)
    agg = {}
    for key, rs in sorted(groups.items()):
        mses = [r.mse for r in rs if r.mse is not None]
        hist = [sum(col) for col in zip(*[r.drops_histogram for r in rs])] if rs[0].drops_histogram else []
        agg[key] = {
            "videos": len(rs),
            "mean_mse_framesum": float(np.mean(mses)) if mses else None,
            "mean_percent": float(np.mean([r.percent_transmitted for r in rs])),
            "mean_avg_bytes_per_frame": float(np.mean([r.avg_bytes_per_frame for r in rs])),
            "drops_histogram": hist,
        }
    return {
        "config": cfg.to_json(),
        "aggregate": agg,
        "videos": [asdict(r) for r in reports],
        "errors": errors,
    }


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every test video x method, writing results.csv and summary.json.

    A failure on one video is recorded under `errors` and the sweep continues.
    Rows are ordered by (video_id, method, k).
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = AutoencoderModel.load(cfg.autoencoder)
    predictor = PredictorModel.load(cfg.predictor) if cfg.predictor else None
    manifest, seqs = load_dataset(cfg.manifest, cfg.frames_root)
    _, _, test = split_dataset(manifest, seqs)
    reports: list[VideoReport] = []
    errors: dict[str, str] = {}
    for video in sorted(test, key=lambda s: s.source_id):
        try:
            if video.frames.shape[1:] != model.frame_shape:
                raise ValueError(f"frames {video.frames.shape[1:]} do not match the model's {model.frame_shape}")
            if cfg.drop_k is not None:
                reports += _sweep_reports(video, model, predictor, cfg)
                continue
            for method in cfg.methods:
                if method == "monolithic":
                    reports += _monolithic_reports(video, cfg)
                else:
                    reports.append(_progressive_report(video, model, predictor, method, cfg))
        except Exception as exc:
            log.error("video %s failed: %s", video.source_id, exc)
            errors[video.source_id] = f"{type(exc).__name__}: {exc}"
    reports.sort(key=lambda r: (r.video_id, r.method, -1 if r.k_dropped is None else r.k_dropped))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in reports:
        writer.writerow(r.row(cfg.seed))
    csv_path = out_dir / "results.csv"
    csv_path.write_text(buf.getvalue(), encoding="utf-8")
    summary_path = out_dir / "summary.json"
    summary_path.write_text(
        json.dumps(_summary(cfg, reports, errors), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return ExperimentResult(reports, errors, csv_path, summary_path)


def merge_reports(csv_paths: Sequence[str | Path], out_path: str | Path) -> int:
    """Concatenate result CSVs (same schema) ordered by (video_id, method, k); returns the row count."""
    rows = []
    for p in csv_paths:
        with open(p, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != CSV_FIELDS:
                raise ValueError(f"{p}: not a results CSV")
            rows += list(reader)
    rows.sort(key=lambda r: (r[0], r[1], int(r[2]) if r[2] else -1))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    writer.writerows(rows)
    Path(out_path).write_text(buf.getvalue(), encoding="utf-8")
    return len(rows)
