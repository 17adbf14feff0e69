"""Procedural airplane-like meshes.

A stand-in for ModelNet40 when the real archive is not on disk: each mesh is
a capped tube fuselage, a swept main wing, a tailplane and a vertical fin,
with randomized proportions. Files are laid out like ModelNet
(``root/airplane/{train,test}/airplane_XXXX.off``) so the normal manifest
and loader code paths are exercised.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .meshes import TriangleMesh, format_off


def _box(center, half, shear_x=0.0):
    """Axis-aligned box; ``shear_x`` sweeps the +y half back along x."""
    sx, sy, sz = half
    corners = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    corners[:, 0] += shear_x * (corners[:, 1] / sy if sy > 0 else 0.0)
    faces = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ])
    return corners + np.asarray(center, dtype=float), faces


def _tube(length, radius, segments=16, rings=8, taper=0.35):
    """Fuselage along x, tapering toward both ends, closed with fan caps."""
    xs = np.linspace(-length / 2, length / 2, rings)
    t = np.linspace(-1.0, 1.0, rings)
    radii = radius * (1.0 - taper * t * t)
    ang = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    verts = [[x, r * np.cos(a), r * np.sin(a)] for x, r in zip(xs, radii) for a in ang]
    faces = []
    for i in range(rings - 1):
        for j in range(segments):
            a, b = i * segments + j, i * segments + (j + 1) % segments
            c, d = a + segments, b + segments
            faces += [[a, b, d], [a, d, c]]
    nose, tail = len(verts), len(verts) + 1
    verts += [[xs[-1] + 0.5 * radius, 0.0, 0.0], [xs[0], 0.0, 0.0]]
    last = (rings - 1) * segments
    for j in range(segments):
        faces.append([last + j, nose, last + (j + 1) % segments])
        faces.append([tail, j, (j + 1) % segments])
    return np.array(verts), np.array(faces)


def airplane_mesh(rng: np.random.Generator) -> TriangleMesh:
    length = rng.uniform(8.0, 12.0)
    radius = rng.uniform(0.5, 0.9)
    span = rng.uniform(0.8, 1.1) * length
    chord = rng.uniform(0.12, 0.2) * length
    sweep = rng.uniform(0.0, 0.25) * span
    wing_x = rng.uniform(-0.1, 0.15) * length
    tail_x = -0.42 * length
    parts = [
        _tube(length, radius),
        _box([wing_x, 0.0, -0.2 * radius], [chord / 2, span / 2, 0.05 * radius], -sweep / 2),
        _box([tail_x, 0.0, 0.0], [chord / 4, 0.2 * span, 0.04 * radius], -sweep / 6),
        _box([tail_x, 0.0, radius * 1.2], [chord / 3, 0.04 * radius, radius * 1.2]),
    ]
    verts, faces, base = [], [], 0
    for v, f in parts:
        verts.append(v)
        faces.append(f + base)
        base += len(v)
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


def write_airplane_dataset(root, n_models: int = 20, seed: int = 0) -> list[Path]:
    """Write ``n_models`` meshes as OFF files; first 80% under train/, rest under test/."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    n_train = int(round(0.8 * n_models))
    paths = []
    for i in range(n_models):
        split = "train" if i < n_train else "test"
        path = root / "airplane" / split / f"airplane_{i + 1:04d}.off"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(format_off(airplane_mesh(rng)))
        paths.append(path)
    return paths
