"""Regenerate the bundled synthetic recording in src/coopaim/data/ind_fixture.

Twenty vehicle tracks driven along the default network's paths with a small
lateral wobble, written in the inD column layout. Deterministic.
"""
import csv
import math
import sys
from pathlib import Path

import numpy as np

from coopaim.road_net import build_four_way

FRAME_RATE = 25.0
DURATION = 120.0
OFFSET = (52.0, -31.5)  # local frame origin of the "recording"


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = build_four_way()
    rng = np.random.default_rng(7)
    ids = sorted(net.paths)
    rows = []
    for k in range(20):
        path = net.paths[ids[k % len(ids)]]
        speed = float(rng.uniform(6.0, 11.0)) if k != 5 else 15.2  # one speeder gets clamped
        start = float(rng.uniform(0.0, 4.0)) + 5.5 * k
        s0, s1 = path.entry_s_raw - 45.0, path.exit_s_raw + 25.0
        n = int((s1 - s0) / speed * FRAME_RATE)
        first = int(round(start * FRAME_RATE))
        phase = rng.uniform(0, 2 * math.pi)
        for i in range(n):
            s = s0 + speed * i / FRAME_RATE
            x, y = path.point(s)
            h = path.heading(s)
            lat = 0.4 * math.sin(phase + 0.3 * i / FRAME_RATE)
            x, y = x - lat * math.sin(h), y + lat * math.cos(h)
            rows.append([1, k, first + i, round(x + OFFSET[0], 3), round(y + OFFSET[1], 3),
                         round(math.degrees(h) % 360.0, 3), 1.9, 4.6,
                         round(speed * math.cos(h), 3), round(speed * math.sin(h), 3), "car"])
    rows.sort(key=lambda r: (r[2], r[1]))
    with open(out / "tracks.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["recordingId", "trackId", "frame", "x", "y", "heading", "width", "length",
                    "xVelocity", "yVelocity", "class"])
        w.writerows(rows)
    with open(out / "recordingMeta.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["recordingId", "frameRate", "duration", "numVehicles", "xOffset", "yOffset"])
        w.writerow([1, FRAME_RATE, DURATION, 20, OFFSET[0], OFFSET[1]])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/coopaim/data/ind_fixture")
