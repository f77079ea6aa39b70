"""Synthetic two-level part hierarchies and their file formats.

Objects are assembled from primitive surface patches (box faces, cylinder
walls, disks). Every patch carries a sub-part (middle) label, and every
sub-part belongs to exactly one functional part (top label). Points are
sampled uniformly by surface area. Labels are zero-based in memory and
one-based on disk.

Family schemas (top part: sub-parts)::

    chairs  seat: seat-surface, seat-rim | back: back-panel, back-rim |
            legs: leg-shaft, leg-foot | armrest: arm-post, arm-pad
    tables  tabletop: top-surface, top-rim | legs: leg-shaft, leg-foot |
            apron: apron-long, apron-short
    lamps   base: base-disk, base-rim | pole: pole-shaft, pole-collar |
            shade: shade-wall, shade-cap
    mixed   one of the above per object, label spaces concatenated in the
            order chairs, tables, lamps
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

DEFAULT_POINTS = 512
# clearance between adjacent functional parts, keeps them separable
GAP = 0.1

SCHEMAS = {
    "chairs": [
        ("seat", ["seat-surface", "seat-rim"]),
        ("back", ["back-panel", "back-rim"]),
        ("legs", ["leg-shaft", "leg-foot"]),
        ("armrest", ["arm-post", "arm-pad"]),
    ],
    "tables": [
        ("tabletop", ["top-surface", "top-rim"]),
        ("legs", ["leg-shaft", "leg-foot"]),
        ("apron", ["apron-long", "apron-short"]),
    ],
    "lamps": [
        ("base", ["base-disk", "base-rim"]),
        ("pole", ["pole-shaft", "pole-collar"]),
        ("shade", ["shade-wall", "shade-cap"]),
    ],
}
FAMILIES = ("chairs", "tables", "lamps", "mixed")
_MIXED_ORDER = ("chairs", "tables", "lamps")


def schema(family):
    """``(top_names, mid_names, mid_to_top)`` for a family."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
    fams = _MIXED_ORDER if family == "mixed" else (family,)
    tops, mids, mid_to_top = [], [], []
    for fam in fams:
        for top, subs in SCHEMAS[fam]:
            for sub in subs:
                mids.append(f"{fam}/{sub}" if family == "mixed" else sub)
                mid_to_top.append(len(tops))
            tops.append(f"{fam}/{top}" if family == "mixed" else top)
    return tops, mids, np.array(mid_to_top)


def _offsets(family):
    """Label offsets of each concrete family inside ``family``'s label space."""
    if family != "mixed":
        return {family: (0, 0)}
    out, t, m = {}, 0, 0
    for fam in _MIXED_ORDER:
        out[fam] = (t, m)
        t += len(SCHEMAS[fam])
        m += sum(len(s) for _, s in SCHEMAS[fam])
    return out


@dataclass
class LabeledCloud:
    points: np.ndarray
    top: np.ndarray
    mid: np.ndarray
    num_top: int
    num_mid: int
    family: str | None = None

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        return (
            isinstance(other, LabeledCloud)
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.top, other.top)
            and np.array_equal(self.mid, other.mid)
            and (self.num_top, self.num_mid, self.family) == (other.num_top, other.num_mid, other.family)
        )


# --------------------------------------------------------------------------
# surface patches


@dataclass
class _Patch:
    kind: str
    params: tuple
    mid: int

    @property
    def area(self):
        if self.kind == "rect":
            _, u, v = self.params
            return float(np.linalg.norm(np.cross(u, v)))
        if self.kind == "wall":
            _, r, h = self.params
            return 2 * np.pi * r * h
        _, r = self.params
        return np.pi * r * r

    def sample(self, rng, n):
        a, b = rng.random(n), rng.random(n)
        if self.kind == "rect":
            o, u, v = self.params
            return o + a[:, None] * u + b[:, None] * v
        if self.kind == "wall":
            c, r, h = self.params
            t = 2 * np.pi * a
            return c + np.stack([r * np.cos(t), r * np.sin(t), h * b], axis=1)
        c, r = self.params
        t, rad = 2 * np.pi * a, r * np.sqrt(b)
        return c + np.stack([rad * np.cos(t), rad * np.sin(t), np.zeros(n)], axis=1)


def _box(lo, size, mid_flat, mid_side):
    """Six faces of an axis-aligned box; top/bottom get ``mid_flat``."""
    lo, size = np.asarray(lo, float), np.asarray(size, float)
    ex, ey, ez = np.diag(size)
    hi = lo + size
    return [
        _Patch("rect", (lo + ez, ex, ey), mid_flat),
        _Patch("rect", (lo, ex, ey), mid_flat),
        _Patch("rect", (lo, ex, ez), mid_side),
        _Patch("rect", (hi - ex - ez, ex, ez), mid_side),
        _Patch("rect", (lo, ey, ez), mid_side),
        _Patch("rect", (hi - ey - ez, ey, ez), mid_side),
    ]


def _box_by_normal(lo, size, axis_groups):
    """Box faces labelled by face-normal axis: ``axis_groups[axis] -> mid``."""
    faces = _box(lo, size, -1, -1)
    axes = (2, 2, 1, 1, 0, 0)
    for f, ax in zip(faces, axes):
        f.mid = axis_groups[ax]
    return faces


def _leg(x, y, shaft_r, foot_r, foot_h, top_z, mid_shaft, mid_foot):
    return [
        _Patch("wall", (np.array([x, y, foot_h]), shaft_r, top_z - foot_h), mid_shaft),
        _Patch("wall", (np.array([x, y, 0.0]), foot_r, foot_h), mid_foot),
        _Patch("disk", (np.array([x, y, 0.0]), foot_r), mid_foot),
        _Patch("disk", (np.array([x, y, foot_h]), foot_r), mid_foot),
    ]


def _chair(rng):
    u = rng.uniform
    w, d, t = u(0.9, 1.1), u(0.9, 1.1), u(0.06, 0.1)
    hs = u(0.85, 0.95)
    r = u(0.03, 0.06)
    fr, fh = r * u(1.6, 2.2), u(0.05, 0.09)
    patches = _box((-w / 2, -d / 2, hs), (w, d, t), 0, 1)
    tb, hb = u(0.06, 0.1), u(0.9, 1.1)
    patches += _box_by_normal((-w / 2, -d / 2, hs + t + GAP), (w, tb, hb), {0: 3, 1: 2, 2: 3})
    inset = u(0.05, 0.1)
    for sx in (-1, 1):
        for sy in (-1, 1):
            patches += _leg(sx * (w / 2 - inset), sy * (d / 2 - inset), r, fr, fh, hs - GAP, 4, 5)
    if rng.random() < 0.5:
        ha, ra = u(0.25, 0.4), u(0.025, 0.045)
        pw, pl, pt = u(0.08, 0.14), d * u(0.6, 0.85), u(0.04, 0.07)
        for sx in (-1, 1):
            x = sx * (w / 2 - pw / 2)
            patches.append(_Patch("wall", (np.array([x, d / 4, hs + t + GAP]), ra, ha), 6))
            patches += _box((x - pw / 2, d / 2 - pl, hs + t + GAP + ha), (pw, pl, pt), 7, 7)
    return patches


def _table(rng):
    u = rng.uniform
    w, d, t = u(1.4, 2.0), u(0.7, 1.1), u(0.05, 0.1)
    h = u(0.7, 0.9)
    r = u(0.04, 0.07)
    fr, fh = r * u(1.5, 2.0), u(0.04, 0.08)
    inset = u(0.08, 0.15)
    patches = _box((-w / 2, -d / 2, h), (w, d, t), 0, 1)
    for sx in (-1, 1):
        for sy in (-1, 1):
            patches += _leg(sx * (w / 2 - inset), sy * (d / 2 - inset), r, fr, fh, h, 2, 3)
    ah, at = u(0.1, 0.16), u(0.03, 0.05)
    xi, yi = w / 2 - inset, d / 2 - inset
    for sy in (-1, 1):
        patches += _box((-xi, sy * yi - at / 2, h - ah), (2 * xi, at, ah), 4, 4)
    for sx in (-1, 1):
        patches += _box((sx * xi - at / 2, -yi, h - ah), (at, 2 * yi, ah), 5, 5)
    return patches


def _lamp(rng):
    u = rng.uniform
    br, bh = u(0.3, 0.45), u(0.05, 0.1)
    pr, ph = u(0.025, 0.045), u(1.0, 1.5)
    cr, ch = pr * u(2.0, 3.0), u(0.06, 0.1)
    sr, sh = u(0.35, 0.55), u(0.35, 0.55)
    top = bh + ph
    return [
        _Patch("disk", (np.array([0, 0, bh]), br), 0),
        _Patch("disk", (np.array([0, 0, 0.0]), br), 0),
        _Patch("wall", (np.array([0, 0, 0.0]), br, bh), 1),
        _Patch("wall", (np.array([0, 0, bh]), pr, ph), 2),
        _Patch("wall", (np.array([0, 0, top - ch]), cr, ch), 3),
        _Patch("wall", (np.array([0, 0, top]), sr, sh), 4),
        _Patch("disk", (np.array([0, 0, top + sh]), sr), 5),
    ]


_BUILDERS = {"chairs": _chair, "tables": _table, "lamps": _lamp}


def object_patches(family, rng):
    """Patches of one object with mid labels in ``family``'s label space."""
    fam = _MIXED_ORDER[rng.integers(3)] if family == "mixed" else family
    patches = _BUILDERS[fam](rng)
    _, moff = _offsets(family)[fam]
    for p in patches:
        p.mid += moff
    return fam, patches


def sample_patches(patches, num_points, rng):
    areas = np.array([p.area for p in patches])
    choice = rng.choice(len(patches), size=num_points, p=areas / areas.sum())
    points = np.empty((num_points, 3))
    mids = np.empty(num_points, dtype=np.int64)
    for k, p in enumerate(patches):
        sel = np.flatnonzero(choice == k)
        if len(sel):
            points[sel] = p.sample(rng, len(sel))
            mids[sel] = p.mid
    return points, mids


def generate_object(family, seed, num_points=DEFAULT_POINTS):
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
    if num_points < 1:
        raise ValueError("num_points must be >= 1")
    rng = np.random.default_rng(seed)
    tops, mids, mid_to_top = schema(family)
    fam, patches = object_patches(family, rng)
    points, mid = sample_patches(patches, num_points, rng)
    return LabeledCloud(points, mid_to_top[mid], mid, len(tops), len(mids), fam)


# --------------------------------------------------------------------------
# files


def write_cloud(path, cloud):
    with open(path, "w") as fh:
        fh.write(f"ptc v1 {len(cloud)} {cloud.num_top} {cloud.num_mid}\n")
        if cloud.family:
            fh.write(f"# family {cloud.family}\n")
        for (x, y, z), t, m in zip(cloud.points.tolist(), cloud.top.tolist(), cloud.mid.tolist()):
            fh.write(f"{x!r} {y!r} {z!r} {t + 1} {m + 1}\n")


class ParseError(ValueError):
    pass


def read_cloud(path):
    with open(path) as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0].strip():
        raise ParseError(f"{path}:1: missing header")
    head = lines[0].split()
    if len(head) != 5 or head[:2] != ["ptc", "v1"]:
        raise ParseError(f"{path}:1: expected header 'ptc v1 <m> <K_top> <C_true>'")
    try:
        m, k_top, c_true = (int(v) for v in head[2:])
    except ValueError:
        raise ParseError(f"{path}:1: non-integer header field") from None
    family = None
    points = np.empty((m, 3))
    top = np.empty(m, dtype=np.int64)
    mid = np.empty(m, dtype=np.int64)
    row = 0
    for lineno, line in enumerate(lines[1:], start=2):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            parts = s[1:].split()
            if len(parts) == 2 and parts[0] == "family":
                family = parts[1]
            continue
        if row >= m:
            raise ParseError(f"{path}:{lineno}: more rows than the {m} declared in the header")
        fields = s.split()
        if len(fields) != 5:
            raise ParseError(f"{path}:{lineno}: expected 'x y z top mid', got {len(fields)} fields")
        try:
            points[row] = [float(v) for v in fields[:3]]
            t, c = int(fields[3]), int(fields[4])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: malformed number") from None
        if not (1 <= t <= k_top and 1 <= c <= c_true):
            raise ParseError(f"{path}:{lineno}: label out of range")
        top[row], mid[row] = t - 1, c - 1
        row += 1
    if row != m:
        raise ParseError(f"{path}: missing row {row + 1} of {m} (header count mismatch or truncated file)")
    return LabeledCloud(points, top, mid, k_top, c_true, family)


PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
    (0, 128, 128), (220, 190, 255), (170, 110, 40), (255, 250, 200), (128, 0, 0),
    (170, 255, 195), (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
)  # fmt: skip


def export_colored(path, points, labels, palette=PALETTE):
    """ASCII PLY with label ``c`` coloured ``palette[c % len(palette)]``."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(points),) or labels.min(initial=0) < 0:
        raise ValueError("labels must be non-negative and one per point")
    with open(path, "w", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(points)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
        for (x, y, z), c in zip(points.tolist(), labels.tolist()):
            r, g, b = palette[c % len(palette)]
            fh.write(f"{x!r} {y!r} {z!r} {r} {g} {b}\n")


# --------------------------------------------------------------------------
# datasets


@dataclass
class DatasetManifest:
    family: str
    seed: int
    entries: list = field(default_factory=list)  # (path, split)
    root: str = "."

    def paths(self, split):
        return [os.path.join(self.root, p) for p, s in self.entries if s == split]

    @property
    def counts(self):
        out = {"train": 0, "test": 0}
        for _, s in self.entries:
            out[s] += 1
        return out


def object_seed(seed, index):
    return np.random.SeedSequence([seed, index])


def generate_dataset(out_dir, family, num_train, num_test, seed, num_points=DEFAULT_POINTS):
    os.makedirs(out_dir, exist_ok=True)
    man = DatasetManifest(family, seed, root=out_dir)
    for i in range(num_train + num_test):
        split = "train" if i < num_train else "test"
        name = f"{split}_{i:05d}.ptc"
        write_cloud(os.path.join(out_dir, name), generate_object(family, object_seed(seed, i), num_points))
        man.entries.append((name, split))
    write_manifest(os.path.join(out_dir, "manifest.jsonl"), man)
    return man


def write_manifest(path, manifest):
    with open(path, "w") as fh:
        header = {"family": manifest.family, "seed": manifest.seed, "counts": manifest.counts}
        fh.write(json.dumps({"header": header}) + "\n")
        for p, s in manifest.entries:
            fh.write(json.dumps({"path": p, "split": s}) + "\n")


def read_manifest(path):
    root = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records or "header" not in records[0]:
        raise ParseError(f"{path}:1: missing manifest header record")
    h = records[0]["header"]
    man = DatasetManifest(h["family"], h["seed"], root=root)
    seen = set()
    for lineno, r in enumerate(records[1:], start=2):
        if r.get("split") not in ("train", "test"):
            raise ParseError(f"{path}:{lineno}: split must be train or test")
        if r["path"] in seen:
            raise ParseError(f"{path}:{lineno}: {r['path']} listed twice")
        if not os.path.exists(os.path.join(root, r["path"])):
            raise ParseError(f"{path}:{lineno}: {r['path']} does not exist")
        seen.add(r["path"])
        man.entries.append((r["path"], r["split"]))
    return man
