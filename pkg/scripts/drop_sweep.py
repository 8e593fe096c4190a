"""Train on synthetic moving squares and print MSE per number of dropped segments.

Reproduces the degradation pattern: frame-sum MSE rises as more tail segments
are dropped, and the temporal predictor's fill beats zero fill on still video.
"""

import argparse

import numpy as np

from framecorr.frame_io import FrameSequence, synth_dataset, synth_sequence
from framecorr.metrics import drop_sweep
from framecorr.nn import TrainConfig
from framecorr.predictor import train_predictor
from framecorr.progressive import encode, train_autoencoder


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--k", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = p.parse_args()

    train, val, test = synth_dataset("moving_square", (32, 8, 8), 16, (16, 16, 1), seed=args.seed)
    model = train_autoencoder(train, val, TrainConfig(epochs=args.epochs, seed=args.seed))
    per_video = [drop_sweep(v, model, "zero_fill", args.k) for v in test]
    print("zero fill, moving squares")
    for k in args.k:
        print(f"  k={k}  mse={np.mean([m[k] for m in per_video]):.3f}")

    frame = synth_sequence("moving_square", 1, (16, 16, 1), 1000).frames
    still = FrameSequence(np.repeat(frame, 12, axis=0), source_id="still")
    predictor = train_predictor(
        [encode(model, still.frames)], 1, TrainConfig(epochs=300, learning_rate=0.25, seed=args.seed)
    )
    zero = drop_sweep(still, model, "zero_fill", args.k, from_frame=1)
    fc = drop_sweep(still, model, "framecorr", args.k, predictor, from_frame=1)
    print("still video (frames 1..), zero fill vs framecorr")
    for k in args.k:
        print(f"  k={k}  zero={zero[k]:.4f}  framecorr={fc[k]:.4f}")


if __name__ == "__main__":
    main()
