"""Writes manifest_small.csv and the expected labels_small_b8.csv.

Labels are computed here independently of the C++ code: azimuth =
atan2(dx, dy) * 180 / pi wrapped to [0, 360), bin = floor(azimuth / 45).
Numbers use the shortest round-trip form without a trailing ".0".
"""
import math

ROWS = [
    ("b0_sat", "b0", "sat", 0, 0, 0, "ok"),
    ("b0_d0", "b0", "drone", 0, 100, 50, "ok"),
    ("b0_d1", "b0", "drone", 70.71, 70.71, 50, "ok"),
    ("b0_d2", "b0", "drone", 100, -0.5, 50, "ok"),
    ("b0_d3", "b0", "drone", None, None, None, "failed"),
    ("b0_d4", "b0", "drone", -30, -95.4, 48, "ok"),
    ("b0_d5", "b0", "drone", 0, 0, 120, "ok"),
    ("b1_sat", "b1", "sat", 1000, 0, 0, "ok"),
    ("b1_d0", "b1", "drone", 950, 0, 50, "ok"),
    ("b1_d1", "b1", "drone", 1012.5, -3.25, 40, "ok"),
    ("b1_d2", "b1", "drone", 999.9, 87, 60, "ok"),
    ("b1_d3", "b1", "drone", None, None, None, "failed"),
]


def fmt(v):
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def main():
    with open("manifest_small.csv", "w") as f:
        f.write("view_id,building_id,kind,x,y,z,status\n")
        for r in ROWS:
            xyz = ",".join("" if v is None else fmt(v) for v in r[3:6])
            f.write(f"{r[0]},{r[1]},{r[2]},{xyz},{r[6]}\n")
    sat = {r[1]: r for r in ROWS if r[2] == "sat"}
    with open("labels_small_b8.csv", "w") as f:
        f.write("view_id,building_id,azimuth_deg,bin,masked\n")
        for r in ROWS:
            if r[2] != "drone":
                continue
            s = sat[r[1]]
            if r[6] != "ok":
                f.write(f"{r[0]},{r[1]},,,1\n")
                continue
            dx, dy = r[3] - s[3], r[4] - s[4]
            if dx * dx + dy * dy < 1e-12:
                f.write(f"{r[0]},{r[1]},,,1\n")
                continue
            a = math.fmod(math.atan2(dx, dy) * 180.0 / math.pi, 360.0)
            if a < 0:
                a += 360.0
            f.write(f"{r[0]},{r[1]},{fmt(a)},{int(math.floor(a / 45.0))},0\n")


if __name__ == "__main__":
    main()
