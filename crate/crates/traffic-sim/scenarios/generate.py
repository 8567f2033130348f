"""Regenerates the bundled scenario files.

    python3 generate.py

Curved lanes are sampled as polylines; all coordinates are metres in a
right-handed world frame with +y north.
"""

import json
import math
from pathlib import Path

OUT = Path(__file__).parent
W = 3.5
VMAX = 13.9


def line(a, b, step=10.0):
    n = max(1, math.ceil(math.dist(a, b) / step))
    return [[a[0] + (b[0] - a[0]) * k / n, a[1] + (b[1] - a[1]) * k / n] for k in range(n + 1)]


def arc(center, radius, a0, a1, step_deg=6.0):
    n = max(2, math.ceil(abs(a1 - a0) / step_deg))
    out = []
    for k in range(n + 1):
        t = math.radians(a0 + (a1 - a0) * k / n)
        out.append([center[0] + radius * math.cos(t), center[1] + radius * math.sin(t)])
    return out


def bezier(p0, p1, p2, n=8):
    out = []
    for k in range(n + 1):
        t = k / n
        u = 1 - t
        out.append([u * u * p0[i] + 2 * u * t * p1[i] + t * t * p2[i] for i in range(2)])
    return out


def rnd(points):
    return [[round(x, 6), round(y, 6)] for x, y in points]


def lane(id_, points, successors=(), width=W):
    return {"id": id_, "points": rnd(points), "width": width, "speed_limit": VMAX, "successors": list(successors)}


def write(name, doc):
    doc = {"name": name, **doc}
    (OUT / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n")


def straight():
    write("straight", {
        "lanes": [lane("road", line([0, 0], [200, 0], 20.0))],
        "adjacency": [],
        "ego": {"spawn": {"lane": "road", "offset": 5.0, "speed": 0.0}, "route": ["road"],
                "goal": {"point": [190.0, 0.0], "radius": 4.0}},
        "traffic": [],
        "max_steps": 200,
    })


def left_turn_t():
    h = W / 2
    j = 8.0
    lanes = [
        lane("eb_west", line([-100, -h], [-j, -h]), ["eb_junction", "eb_to_stem"]),
        lane("eb_junction", line([-j, -h], [j, -h], 4.0), ["eb_east"]),
        lane("eb_east", line([j, -h], [100, -h])),
        lane("wb_east", line([100, h], [j, h]), ["wb_junction"]),
        lane("wb_junction", line([j, h], [-j, h], 4.0), ["wb_west"]),
        lane("wb_west", line([-j, h], [-100, h])),
        lane("stem_nb", line([h, -100], [h, -j]), ["turn_left", "turn_right"]),
        lane("turn_left", arc([-j, -j], j + h, 0, 90), ["wb_west"]),
        lane("turn_right", arc([j, -j], j - h, 180, 90), ["eb_east"]),
        lane("eb_to_stem", arc([-j, -j], j - h, 90, 0), ["stem_sb"]),
        lane("stem_sb", line([-h, -j], [-h, -100])),
    ]
    write("left_turn_t", {
        "lanes": lanes,
        "adjacency": [],
        "ego": {"spawn": {"lane": "stem_nb", "offset": 20.0, "speed": 0.0},
                "route": ["stem_nb", "turn_left", "wb_west"],
                "goal": {"point": [-80.0, h], "radius": 4.0}},
        "traffic": [
            {"route": ["eb_west", "eb_junction", "eb_east"], "headway_mean_s": 7.0, "headway_jitter_s": 3.0,
             "speed_range": [7.0, 11.0]},
            {"route": ["wb_east", "wb_junction", "wb_west"], "headway_mean_s": 7.0, "headway_jitter_s": 3.0,
             "speed_range": [7.0, 11.0]},
        ],
        "traffic_preroll_s": 15.0,
        "max_steps": 400,
    })


def roundabout(name, exit_arm):
    r = 20.0
    arm_len = 70.0
    delta = 25.0
    h = W / 2
    arms = {"e": 0.0, "n": 90.0, "w": 180.0, "s": 270.0}
    lanes = []
    # Ring split points: exit at arm-delta, entry at arm+delta (counter-clockwise traffic).
    cuts = sorted([(a - delta) % 360 for a in arms.values()] + [(a + delta) % 360 for a in arms.values()])
    ring_ids = []
    for k, a0 in enumerate(cuts):
        a1 = cuts[(k + 1) % len(cuts)]
        if a1 <= a0:
            a1 += 360
        ring_ids.append((f"ring_{int(a0):03d}", a0, a1))
    ring_at = {round(a0 % 360, 6): rid for rid, a0, _ in ring_ids}
    for k, (rid, a0, a1) in enumerate(ring_ids):
        nxt = ring_ids[(k + 1) % len(ring_ids)][0]
        succ = [nxt]
        for arm, aa in arms.items():
            if abs(((a1 % 360) - (aa - delta) % 360)) < 1e-9:
                succ.append(f"{arm}_exit")
        lanes.append(lane(rid, arc([0, 0], r, a0, a1), succ, width=4.0))
    for arm, aa in arms.items():
        t = math.radians(aa)
        out_dir = (math.cos(t), math.sin(t))
        left = (-out_dir[1], out_dir[0])
        # Inbound lane keeps to the right of an inbound driver, i.e. on the arm's left-hand side looking outwards.
        in_off = [-left[0] * h, -left[1] * h]
        out_off = [left[0] * h, left[1] * h]
        far, near = r + 8.0 + arm_len, r + 8.0
        in_start = [out_dir[0] * far + in_off[0], out_dir[1] * far + in_off[1]]
        in_end = [out_dir[0] * near + in_off[0], out_dir[1] * near + in_off[1]]
        lanes.append(lane(f"{arm}_in", line(in_start, in_end), [f"{arm}_entry"]))
        ea = math.radians(aa + delta)
        ring_pt = [r * math.cos(ea), r * math.sin(ea)]
        tangent = [-math.sin(ea), math.cos(ea)]
        # Control point: inbound line meets the ring tangent extended backwards.
        ctrl = intersect(in_end, [-out_dir[0], -out_dir[1]], ring_pt, tangent)
        lanes.append(lane(f"{arm}_entry", bezier(in_end, ctrl, ring_pt), [ring_at[round((aa + delta) % 360, 6)]]))
        xa = math.radians(aa - delta)
        ring_pt = [r * math.cos(xa), r * math.sin(xa)]
        tangent = [-math.sin(xa), math.cos(xa)]
        out_start = [out_dir[0] * near + out_off[0], out_dir[1] * near + out_off[1]]
        out_end = [out_dir[0] * far + out_off[0], out_dir[1] * far + out_off[1]]
        ctrl = intersect(out_start, [-out_dir[0], -out_dir[1]], ring_pt, tangent)
        lanes.append(lane(f"{arm}_exit", bezier(ring_pt, ctrl, out_start), [f"{arm}_out"]))
        lanes.append(lane(f"{arm}_out", line(out_start, out_end)))

    def ring_route(start_arm, end_arm):
        a = (arms[start_arm] + delta) % 360
        stop = (arms[end_arm] - delta) % 360
        ids = []
        while True:
            rid = ring_at[round(a, 6)]
            ids.append(rid)
            idx = [x[0] for x in ring_ids].index(rid)
            a = ring_ids[(idx + 1) % len(ring_ids)][1] % 360
            if abs(a - stop) < 1e-9:
                break
        return [f"{start_arm}_in", f"{start_arm}_entry", *ids, f"{end_arm}_exit", f"{end_arm}_out"]

    goal_dir = math.radians(arms[exit_arm])
    gl = [math.cos(goal_dir), math.sin(goal_dir)]
    gleft = [-gl[1], gl[0]]
    gd = r + 8.0 + arm_len - 10.0
    goal = [round(gl[0] * gd + gleft[0] * h, 6), round(gl[1] * gd + gleft[1] * h, 6)]
    write(name, {
        "lanes": lanes,
        "adjacency": [],
        "ego": {"spawn": {"lane": "s_in", "offset": 20.0, "speed": 0.0}, "route": ring_route("s", exit_arm),
                "goal": {"point": goal, "radius": 4.0}},
        "traffic": [
            {"route": ring_route("w", "e"), "headway_mean_s": 8.0, "headway_jitter_s": 3.0, "speed_range": [6.0, 9.0]},
            {"route": ring_route("n", "s"), "headway_mean_s": 8.0, "headway_jitter_s": 3.0, "speed_range": [6.0, 9.0]},
            {"route": ring_route("e", "w"), "headway_mean_s": 10.0, "headway_jitter_s": 3.0, "speed_range": [6.0, 9.0]},
        ],
        "traffic_preroll_s": 20.0,
        "max_steps": 500,
    })


def intersect(p, d, q, e):
    # p + t d = q - u e
    det = d[0] * (-e[1]) - d[1] * (-e[0])
    rx, ry = q[0] - p[0], q[1] - p[1]
    t = (rx * (-e[1]) - ry * (-e[0])) / det
    return [p[0] + t * d[0], p[1] + t * d[1]]


def double_merge():
    # Two eastbound lanes (right at y=0, left at y=W) with on-ramps at x=60
    # and off-ramps at x=140 on both sides.
    lanes = [
        lane("right_in", line([0, 0], [60, 0]), ["right_mid"]),
        lane("left_in", line([0, W], [60, W]), ["left_mid"]),
        lane("right_mid", line([60, 0], [140, 0]), ["right_out", "ramp_off_right"]),
        lane("left_mid", line([60, W], [140, W]), ["left_out", "ramp_off_left"]),
        lane("right_out", line([140, 0], [220, 0])),
        lane("left_out", line([140, W], [220, W])),
        lane("ramp_on_right", bezier([10, -30], [40, 0], [60, 0]), ["right_mid"]),
        lane("ramp_on_left", bezier([10, W + 30], [40, W], [60, W]), ["left_mid"]),
        lane("ramp_off_right", bezier([140, 0], [160, 0], [190, -30]), ["exit_right"]),
        lane("ramp_off_left", bezier([140, W], [160, W], [190, W + 30]), ["exit_left"]),
        lane("exit_right", line([190, -30], [210, -50])),
        lane("exit_left", line([190, W + 30], [210, W + 50])),
    ]
    write("double_merge", {
        "lanes": lanes,
        "adjacency": [{"left": "left_in", "right": "right_in"}, {"left": "left_mid", "right": "right_mid"},
                      {"left": "left_out", "right": "right_out"}],
        "ego": {"spawn": {"lane": "ramp_on_right", "offset": 5.0, "speed": 0.0},
                "route": ["ramp_on_right", "right_mid", "left_mid", "ramp_off_left", "exit_left"],
                "goal": {"point": [204.0, W + 44.0], "radius": 4.0}},
        "traffic": [
            {"route": ["left_in", "left_mid", "left_out"], "headway_mean_s": 6.0, "headway_jitter_s": 2.0,
             "speed_range": [8.0, 12.0]},
            {"route": ["right_in", "right_mid", "ramp_off_right", "exit_right"], "headway_mean_s": 7.0,
             "headway_jitter_s": 2.0, "speed_range": [8.0, 12.0]},
            {"route": ["ramp_on_left", "left_mid", "left_out"], "headway_mean_s": 9.0, "headway_jitter_s": 3.0,
             "speed_range": [7.0, 10.0]},
        ],
        "traffic_preroll_s": 15.0,
        "max_steps": 450,
    })


if __name__ == "__main__":
    straight()
    left_turn_t()
    for name, arm in [("roundabout_a", "e"), ("roundabout_b", "n"), ("roundabout_c", "w")]:
        roundabout(name, arm)
    double_merge()
