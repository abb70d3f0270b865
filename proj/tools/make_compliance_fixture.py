#!/usr/bin/env python3
"""Writes the 20-kiln compliance fixture: kilns, state polygons and one
GeoJSON file per feature category, with violations planted at known
distances (see the table in tests/test_compliance.cpp)."""
import json
import math
import pathlib
import sys

R_MEAN = 6371008.8
R_MERC = 6378137.0


def north(p, d):
    return (p[0], p[1] + math.degrees(d / R_MEAN))


def east(p, d):
    return (p[0] + math.degrees(d / (R_MEAN * math.cos(math.radians(p[1])))), p[1])


def merc(p):
    return (R_MERC * math.radians(p[0]), R_MERC * math.log(math.tan(math.pi / 4 + math.radians(p[1]) / 2)))


def unmerc(x, y):
    return (math.degrees(x / R_MERC), math.degrees(2 * math.atan(math.exp(y / R_MERC)) - math.pi / 2))


def kiln(kid, at, state, cls, theta, validation="pending"):
    cx, cy = merc(at)
    w, h = 120.0, 60.0
    c, s = math.cos(theta), math.sin(theta)
    ring = []
    for lx, ly in [(-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2), (-w / 2, -h / 2)]:
        ring.append(list(unmerc(cx + c * lx - s * ly, cy + s * lx + c * ly)))
    return {
        "type": "Feature",
        "geometry": {"type": "Polygon", "coordinates": [ring]},
        "properties": {"id": kid, "class": cls, "confidence": 0.9, "state": state, "validation_state": validation,
                       "theta": theta, "w_m": w, "h_m": h, "cx_m": cx, "cy_m": cy, "crop_id": "", "model_run": "fixture",
                       "created_at": "", "updated_at": ""},
    }


def point(fid, at, **props):
    return {"type": "Feature", "geometry": {"type": "Point", "coordinates": list(at)}, "properties": {"id": fid, **props}}


def ew_line(fid, at, half_deg, **props):
    coords = [[at[0] - half_deg, at[1]], [at[0] + half_deg, at[1]]]
    return {"type": "Feature", "geometry": {"type": "LineString", "coordinates": coords}, "properties": {"id": fid, **props}}


def square(fid, center, half_deg, **props):
    x, y = center
    ring = [[x - half_deg, y - half_deg], [x + half_deg, y - half_deg], [x + half_deg, y + half_deg],
            [x - half_deg, y + half_deg], [x - half_deg, y - half_deg]]
    return {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [ring]}, "properties": {"id": fid, **props}}


def collection(features):
    return json.dumps({"type": "FeatureCollection", "features": features}, indent=1) + "\n"


def main(out_dir):
    out = pathlib.Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    classes = ["CFCBK", "FCBK", "Zigzag"]
    up = [(80.0 + 0.1 * i, 26.5) for i in range(10)]
    bihar = [(85.0 + 0.1 * i, 25.5) for i in range(10)]
    up[3] = east(up[2], 700.0)       # U3-U4 700 m apart, UP inter-kiln rule 800
    bihar[3] = east(bihar[2], 1200.0)  # B3-B4 1200 m apart, Bihar rule 1000

    kilns = [kiln(f"U{i + 1}", p, "Uttar Pradesh", classes[i % 3], 0.1 * i) for i, p in enumerate(up)]
    kilns += [kiln(f"B{i + 1}", p, "Bihar", classes[i % 3], -0.1 * i, "discarded" if i == 9 else "pending")
              for i, p in enumerate(bihar)]
    (out / "kilns.geojson").write_text(collection(kilns))

    states = [square("UP", (80.5, 26.5), 1.0, name="Uttar Pradesh"), square("BR", (85.5, 25.5), 1.0, name="Bihar")]
    (out / "states.geojson").write_text(collection(states))

    f = {
        "habitation": [
            point("hab-u1", north(up[0], 999.0), fclass="residential"),
            point("hab-u2", north(up[1], 1001.0), fclass="residential"),
            point("hab-b5", north(bihar[4], 700.0), fclass="residential"),
            point("hab-b10", north(bihar[9], 10.0), fclass="residential"),
            # Filtered out by the landuse class.
            point("ind-u10", north(up[9], 10.0), fclass="industrial"),
        ],
        "national_highway": [ew_line("nh-u5", north(up[4], 250.0), 0.02, ref="NH19")],
        "state_highway": [ew_line("sh-u5", north(up[4], 250.0), 0.02, ref="NH19")],
        "nature_reserve": [square("nr-u6", up[5], 0.01, fclass="nature_reserve"),
                           square("nr-b9", bihar[8], 0.01, fclass="nature_reserve")],
        "school": [point("sch-u6", north(up[5], 500.0), type="school"),
                   point("sch-b8", north(bihar[7], 790.0), type="school")],
        "religious": [point("rel-u7", north(up[6], 1500.0), type="temple")],
        "orchard": [point("orc-u7", north(up[6], 700.0), fclass="orchard")],
        "hospital": [point("hos-u8", north(up[7], 900.0), type="hospital")],
        "river": [ew_line("riv-u9", north(up[8], 100.0), 0.01, fclass="river"),
                  ew_line("riv-b1", north(bihar[0], 400.0), 0.01, fclass="river")],
        "wetland": [square("wet-b2", north(bihar[1], 450.0 + 0.001 * 111195.0), 0.001, fclass="wetland")],
        "district_highway": [ew_line("mdr-b6", north(bihar[5], 50.0), 0.01, ref="MDR7")],
        "railway": [ew_line("rail-b7", north(bihar[6], 150.0), 0.01, fclass="rail")],
    }
    for name, feats in f.items():
        (out / "features" / f"{name}.geojson").write_text(collection(feats))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/compliance")
