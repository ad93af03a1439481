"""Regenerates oracles.json with 50-digit mpmath arithmetic.

Inputs are drawn as doubles and carried over exactly (mpf(float) is exact), so
the only rounding in the expected values is the final conversion to text.
"""

import json
import random

import mpmath as mp

mp.mp.dps = 50
rng = random.Random(20240611)


def s(x):
    return mp.nstr(x, 25, strip_zeros=False)


def direction(pitch, yaw):
    p, y = mp.mpf(pitch), mp.mpf(yaw)
    return [-mp.cos(p) * mp.sin(y), -mp.sin(p), -mp.cos(p) * mp.cos(y)]


directions = [(0.3, -0.7)] + [(rng.uniform(-1.5, 1.5), rng.uniform(-3.1, 3.1)) for _ in range(20)]
direction_cases = [{"pitch": p, "yaw": y, "vector": [s(c) for c in direction(p, y)]} for p, y in directions]


def angle(a, b):
    a = [mp.mpf(v) for v in a]
    b = [mp.mpf(v) for v in b]
    na = mp.sqrt(sum(v * v for v in a))
    nb = mp.sqrt(sum(v * v for v in b))
    d = sum(x * y for x, y in zip(a, b)) / (na * nb)
    return mp.acos(max(min(d, 1), -1))


pairs = []
for _ in range(60):
    a = [rng.uniform(-5, 5) for _ in range(3)]
    b = [rng.uniform(-5, 5) for _ in range(3)]
    pairs.append((a, b))
for eps in [1e-3, 1e-5, 1e-7]:
    a = [rng.uniform(-1, 1) for _ in range(3)]
    pairs.append((a, [v + rng.uniform(-eps, eps) for v in a]))
    pairs.append((a, [-v + rng.uniform(-eps, eps) for v in a]))
angle_cases = [{"a": a, "b": b, "angle": s(angle(a, b))} for a, b in pairs]

projection_cases = []
for _ in range(40):
    k = [rng.uniform(200, 900), rng.uniform(200, 900), rng.uniform(30, 120), rng.uniform(30, 120)]
    v = [rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(100, 2000)]
    fx, fy, cx, cy = (mp.mpf(c) for c in k)
    x, y, z = (mp.mpf(c) for c in v)
    projection_cases.append(
        {"intrinsics": k, "vertex": v, "pixel": [s(fx * x / z + cx), s(fy * y / z + cy)]}
    )

out = {"direction_to_vector": direction_cases, "angular_error": angle_cases, "projection": projection_cases}
with open(__file__.replace("gen_oracles.py", "oracles.json"), "w") as f:
    json.dump(out, f, indent=1)
    f.write("\n")
