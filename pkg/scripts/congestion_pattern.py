"""All-or-nothing vs progressive delivery under the three congestion presets.

For each quality level and preset, prints whether the monolithic encoding
arrives within the whole-video budget (100%) or not (0%), next to the share of
frames the progressive sender reaches under a per-frame budget.
"""

import argparse

import numpy as np

from framecorr.baseline import DEFAULT_LADDER, encode_monolithic
from framecorr.channel import CONGESTION_ORDER, Link, preset
from framecorr.frame_io import synth_sequence
from framecorr.metrics import percent_transmitted
from framecorr.progressive import init_autoencoder
from framecorr.transport import DeadlinePolicy, send_monolithic, send_progressive


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--kind", default="noise", choices=["moving_square", "constant", "noise"])
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--size", type=int, default=64, help="square frame side in pixels")
    p.add_argument("--video-deadline-ms", type=float, default=300.0)
    p.add_argument("--frame-deadline-ms", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    dims = (args.size, args.size, 3)
    video = synth_sequence(args.kind, args.frames, dims, args.seed)
    print(f"{'level':>8} {'q':>3} {'kbit':>8}  " + "  ".join(f"{n:>6}" for n in CONGESTION_ORDER))
    for level, q in sorted(DEFAULT_LADDER.items(), key=lambda kv: kv[1]):
        stream = encode_monolithic(video, q)
        cells = []
        for name in CONGESTION_ORDER:
            _, log = send_monolithic(stream, Link(preset(name)), DeadlinePolicy("per_video", args.video_deadline_ms))
            cells.append(f"{percent_transmitted(log, 'monolithic'):5.0f}%")
        print(f"{level:>8} {q:>3} {stream.bits / 1000:8.1f}  " + "  ".join(cells))

    # untrained weights are enough here: delivery does not depend on what the latents encode
    model = init_autoencoder(dims, rng=np.random.default_rng(args.seed))
    print("progressive, per-feature ACKs")
    for name in CONGESTION_ORDER:
        _, log = send_progressive(video, model, Link(preset(name)), DeadlinePolicy(budget_ms=args.frame_deadline_ms))
        print(f"  {name:>6}: {percent_transmitted(log, 'pnc'):.0f}% frames reached, "
              f"drop histogram {log.drops_histogram(model.n_segments)}")


if __name__ == "__main__":
    main()
