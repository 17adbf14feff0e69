"""Toy non-i.i.d. sets: noisy equidistant points on random circles, plus circle-fit analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RADIAL_SD = 0.1
ANGULAR_SD = 0.3


@dataclass(frozen=True)
class CircleSetSpec:
    cx: float
    cy: float
    radius: float
    phase: float
    size: int

    def __post_init__(self):
        if self.size < 3:
            raise ValueError("circle sets need at least 3 points")


class DegenerateFitError(ValueError):
    """Points are (numerically) collinear; no circle fits."""


def sample_circle_spec(N: int, rng: np.random.Generator) -> CircleSetSpec:
    cx, cy = rng.uniform(-10.0, 10.0, size=2)
    radius = rng.uniform(0.5, 3.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    return CircleSetSpec(float(cx), float(cy), float(radius), float(phase), N)


def circle_points(spec: CircleSetSpec, rng: np.random.Generator | None = None,
                  radial_sd: float = RADIAL_SD, angular_sd: float = ANGULAR_SD) -> np.ndarray:
    """Points ``c + (r + dr_i)(cos psi_i, sin psi_i)``, ``psi_i = phase + 2 pi i / N + dpsi_i``.

    ``radial_sd``/``angular_sd`` are standard deviations; with ``rng=None``
    the noise is zero.
    """
    N = spec.size
    dr = np.zeros(N) if rng is None else rng.normal(0.0, radial_sd, N)
    dpsi = np.zeros(N) if rng is None else rng.normal(0.0, angular_sd, N)
    psi = spec.phase + 2.0 * np.pi * np.arange(N) / N + dpsi
    rad = spec.radius + dr
    return np.stack([spec.cx + rad * np.cos(psi), spec.cy + rad * np.sin(psi)], axis=1)


def gen_circle_set(N: int, rng: np.random.Generator, radial_sd: float = RADIAL_SD,
                   angular_sd: float = ANGULAR_SD) -> tuple[np.ndarray, CircleSetSpec]:
    spec = sample_circle_spec(N, rng)
    return circle_points(spec, rng, radial_sd, angular_sd), spec


@dataclass
class CircleFit:
    center: np.ndarray
    radius: float
    phases: np.ndarray


def fit_circle(points) -> CircleFit:
    """Kasa algebraic fit: least squares for ``x^2 + y^2 = a x + b y + c``."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise DegenerateFitError("need at least 3 points in 2D")
    shift = pts.mean(axis=0)
    p = pts - shift
    A = np.column_stack([p, np.ones(len(p))])
    rhs = (p * p).sum(axis=1)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise DegenerateFitError("points are collinear")
    (a, b, c), *_ = np.linalg.lstsq(A, rhs, rcond=None)
    cx, cy = a / 2.0, b / 2.0
    r2 = c + cx * cx + cy * cy
    if not r2 > 0:
        raise DegenerateFitError("fit produced a non-positive squared radius")
    center = np.array([cx, cy]) + shift
    d = pts - center
    return CircleFit(center, float(np.sqrt(r2)), np.arctan2(d[:, 1], d[:, 0]))


def wrap_angle(a):
    """Map angles into [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def align_phases(phases) -> np.ndarray:
    """Subtract the set's rotational offset.

    The offset is the N-fold circular mean ``arg(sum exp(i N psi)) / N``, which
    is well defined for equidistant configurations (the plain circular mean of
    equidistant phases vanishes). Aligned equidistant phases sit at
    ``2 pi k / N``.
    """
    ps = np.asarray(phases, dtype=np.float64)
    N = len(ps)
    offset = np.angle(np.exp(1j * N * ps).sum()) / N
    return wrap_angle(ps - offset)


def between_peak_mass(aligned, N: int) -> float:
    """Fraction of aligned phases closer to a midpoint between peaks than to a peak."""
    a = np.asarray(aligned)
    spacing = 2.0 * np.pi / N
    dist = np.abs(wrap_angle(N * a) / N)  # distance to nearest multiple of spacing
    return float(np.mean(dist > spacing / 4.0))


@dataclass
class PhaseHistogram:
    edges: np.ndarray
    counts: np.ndarray
    radius_edges: np.ndarray
    radius_counts: np.ndarray
    aligned: np.ndarray
    radii: np.ndarray
    n_failed: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def phase_histogram(sets, bins: int = 36, radius_bins: int = 30,
                    radius_range: tuple[float, float] = (0.0, 4.0)) -> PhaseHistogram:
    """Fit every set, align phases, and histogram them over [-pi, pi).

    Failed fits are skipped and counted.
    """
    aligned, radii, failed = [], [], 0
    for pts in sets:
        try:
            fit = fit_circle(pts)
        except DegenerateFitError:
            failed += 1
            continue
        aligned.append(align_phases(fit.phases))
        radii.append(fit.radius)
    aligned = np.concatenate(aligned) if aligned else np.zeros(0)
    radii = np.asarray(radii)
    counts, edges = np.histogram(aligned, bins=bins, range=(-np.pi, np.pi))
    rcounts, redges = np.histogram(radii, bins=radius_bins, range=radius_range)
    return PhaseHistogram(edges, counts, redges, rcounts, aligned, radii, failed)


def find_circular_peaks(counts, edges, min_rel_height: float = 0.5, smooth: int = 1) -> np.ndarray:
    """Centers of circular local maxima of a (box-smoothed) histogram.

    A bin is a peak when it is strictly above its left neighbour, not below
    its right neighbour, and at least ``min_rel_height`` of the highest bin.
    """
    c = np.asarray(counts, dtype=np.float64)
    if smooth > 0:
        k = 2 * smooth + 1
        c = sum(np.roll(c, s) for s in range(-smooth, smooth + 1)) / k
    if c.max() <= 0:
        return np.zeros(0)
    left, right = np.roll(c, 1), np.roll(c, -1)
    is_peak = (c > left) & (c >= right) & (c >= min_rel_height * c.max())
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers[is_peak]


def peak_spacings(peaks) -> np.ndarray:
    """Circular gaps between consecutive sorted peaks (they sum to 2 pi)."""
    p = np.sort(np.asarray(peaks))
    if len(p) == 0:
        return p
    return np.diff(np.append(p, p[0] + 2.0 * np.pi))
