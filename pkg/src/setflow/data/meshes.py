"""ASCII OFF meshes and area-weighted surface sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OffParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    areas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        self.areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        if not self.areas.sum() > 0:
            raise ValueError("mesh has no triangle with positive area")

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())


def _records(text: str):
    """Yield ``(line_number, tokens)`` for non-empty, non-comment lines."""
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if line:
            yield no, line.split()


def parse_off(data) -> TriangleMesh:
    """Parse an ASCII OFF mesh; polygons are fan-triangulated.

    Accepts a missing ``OFF`` keyword and the ``OFF<counts>`` header with no
    line break seen in ModelNet files.
    """
    text = data.decode("ascii", errors="replace") if isinstance(data, (bytes, bytearray)) else data
    recs = _records(text)
    last_line = 0

    def next_rec(what):
        nonlocal last_line
        try:
            no, toks = next(recs)
        except StopIteration:
            raise OffParseError(f"unexpected end of file, expected {what}", last_line + 1) from None
        last_line = no
        return no, toks

    no, toks = next_rec("header")
    if toks[0].upper().startswith("OFF"):
        rest = toks[0][3:]
        toks = ([rest] if rest else []) + toks[1:]
        if not toks:
            no, toks = next_rec("counts")
    try:
        counts = [int(t) for t in toks[:3]]
    except ValueError:
        raise OffParseError(f"malformed counts {' '.join(toks)!r}", no) from None
    if len(counts) < 2 or counts[0] < 0 or counts[1] < 0:
        raise OffParseError(f"malformed counts {' '.join(toks)!r}", no)
    n_verts, n_faces = counts[0], counts[1]

    verts = np.empty((n_verts, 3))
    for i in range(n_verts):
        no, toks = next_rec(f"vertex {i}")
        try:
            verts[i] = [float(t) for t in toks[:3]]
        except ValueError:
            raise OffParseError(f"malformed vertex {' '.join(toks)!r}", no) from None
        if len(toks) < 3:
            raise OffParseError("vertex needs 3 coordinates", no)

    tris = []
    for i in range(n_faces):
        no, toks = next_rec(f"face {i}")
        try:
            k = int(toks[0])
            idx = [int(t) for t in toks[1:1 + k]]
        except ValueError:
            raise OffParseError(f"malformed face {' '.join(toks)!r}", no) from None
        if k < 3 or len(idx) < k:
            raise OffParseError(f"face needs at least 3 vertex indices, got {len(idx)}", no)
        if min(idx) < 0 or max(idx) >= n_verts:
            raise OffParseError(f"vertex index out of range [0, {n_verts})", no)
        for j in range(1, k - 1):
            tris.append((idx[0], idx[j], idx[j + 1]))
    try:
        return TriangleMesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise OffParseError(str(exc)) from None


def read_off(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        return parse_off(fh.read())


def format_off(mesh: TriangleMesh) -> str:
    """Canonical OFF text; floats use ``repr`` so re-parsing is exact."""
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.faces)} 0"]
    lines += [" ".join(repr(float(v)) for v in row) for row in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in mesh.faces]
    return "\n".join(lines) + "\n"


def sample_mesh_points(mesh: TriangleMesh, n: int, rng: np.random.Generator,
                       return_barycentric: bool = False):
    """Uniform samples on the surface: area-weighted triangle, uniform barycentric point.

    With ``return_barycentric`` also returns the triangle index and the
    ``(u, v)`` coordinates of each point, ``p = a + u (b - a) + v (c - a)``.
    """
    total = mesh.total_area
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    tri = rng.choice(len(mesh.faces), size=n, p=mesh.areas / total)
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    a, b, c = (mesh.vertices[mesh.faces[tri, k]] for k in range(3))
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    if return_barycentric:
        return pts, tri, np.stack([u, v], axis=1)
    return pts
