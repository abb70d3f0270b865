#!/usr/bin/env python3
"""Two horizontally adjacent 640 px crops (64 px overlap) at zoom 17; every
kiln sits in the shared strip, so each appears once per crop."""
import json
import math
import pathlib
import sys

CROP, OVERLAP, ZOOM = 640, 64, 17
ORIGIN = (8_905_000.0, 3_250_000.0)  # Mercator, near 80E 28N
KILNS = [(608, 100, 0.0, 2), (605, 250, 0.5, 1), (610, 400, -0.3, 2), (607, 550, 1.2, 0)]


def quad(cx, cy, w, h, theta):
    c, s = math.cos(theta), math.sin(theta)
    pts = [(cx + c * dx - s * dy, cy + s * dx + c * dy)
           for dx, dy in ((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2))]
    return " ".join(f"{x / CROP:.6f} {y / CROP:.6f}" for x, y in pts)


def main(out_dir):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mpp = 2 * math.pi * 6378137 / (256 * 2 ** ZOOM)
    stride = CROP - OVERLAP
    crops = []
    for k, shift in enumerate((0, stride)):
        lines = [f"{cls} {quad(cx - shift, cy, 30, 12, th)} {0.9 - 0.1 * k - 0.01 * i:.4f}"
                 for i, (cx, cy, th, cls) in enumerate(KILNS)]
        (out / f"crop{k}.txt").write_text("\n".join(lines) + "\n")
        crops.append({"id": f"crop{k}", "origin": [ORIGIN[0] + shift * mpp, ORIGIN[1]], "labels": f"crop{k}.txt"})
    doc = {"zoom": ZOOM, "size_px": CROP, "crops": crops}
    (out / "crops.json").write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/merge")
