#!/usr/bin/env python3
"""Writes detection/truth label files with a prescribed TP/FP/FN outcome.

Truths sit on a 20 px lattice inside one 640 px crop; true positives are the
same boxes nudged by half a pixel (IoU ~0.8), false positives sit on the
lattice corners where they overlap nothing.
"""
import pathlib
import sys

REGIONS = {
    "delhi_airshed": (317, 421, 632),
    "lucknow_airshed": (221, 206, 275),
    "west_bengal": (64, 83, 142),
    "ahmedabad": (18, 47, 131),
}
CROP = 640.0


def quad(cx, cy, w, h):
    pts = [(cx - w / 2, cy - h / 2), (cx + w / 2, cy - h / 2), (cx + w / 2, cy + h / 2), (cx - w / 2, cy + h / 2)]
    return " ".join(f"{x / CROP:.6f} {y / CROP:.6f}" for x, y in pts)


def main(out_dir):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, (tp, fp, fn) in REGIONS.items():
        truths, dets = [], []
        for i in range(tp + fn):
            cx, cy = 20 * (i % 32) + 10, 20 * (i // 32) + 10
            truths.append(f"{i % 3} {quad(cx, cy, 10, 8)}")
            if i < tp:
                conf = 0.95 - 0.6 * i / (tp + fp)
                dets.append(f"{i % 3} {quad(cx + 0.5, cy, 10, 8)} {conf:.4f}")
        for i in range(fp):
            cx, cy = 20 * (i % 31) + 20, 20 * (i // 31) + 20
            conf = 0.9 - 0.6 * i / (tp + fp)
            dets.append(f"{i % 3} {quad(cx, cy, 10, 8)} {conf:.4f}")
        (out / f"{name}.truth.txt").write_text("\n".join(truths) + "\n")
        (out / f"{name}.dets.txt").write_text("\n".join(dets) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/eval")
