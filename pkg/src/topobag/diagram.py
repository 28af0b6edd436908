"""Persistence diagrams, the projected half-plane representation, and file I/O.

Diagrams follow the upper-level-set convention: a feature born at level b
dies at a lower level d, so finite points satisfy birth >= death.  Features
that never die (one per connected component of the filtered domain) are kept
in a separate list of birth levels rather than being encoded with a sentinel
float.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np


def _point_array(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return pts.reshape(0, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of points, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class PersistenceDiagram:
    """A multiset of (birth, death) pairs for one homology degree.

    ``infinite_births`` holds the birth levels of never-dying features.
    """

    points: np.ndarray
    infinite_births: np.ndarray = field(default_factory=lambda: np.empty(0))
    degree: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = _point_array(self.points)
        inf_b = np.asarray(self.infinite_births, dtype=float).reshape(-1)
        if self.degree < 0:
            raise ValueError("homology degree must be >= 0")
        if not np.all(np.isfinite(pts)):
            raise ValueError("finite points must have finite coordinates")
        if not np.all(np.isfinite(inf_b)):
            raise ValueError("births of infinite points must be finite")
        if pts.size and np.any(pts[:, 0] < pts[:, 1]):
            raise ValueError("every finite point must satisfy birth >= death")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "infinite_births", inf_b)

    @property
    def n(self) -> int:
        """Number of finite points."""
        return len(self.points)

    @property
    def n_infinite(self) -> int:
        return len(self.infinite_births)

    @property
    def births(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def deaths(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def lifetimes(self) -> np.ndarray:
        return self.points[:, 0] - self.points[:, 1]


@dataclass(frozen=True)
class PointSet:
    """Points in the closed upper half-plane, the fitting representation.

    Row i is (x1, x2) with x2 >= 0; for a projected diagram x1 is the death
    level and x2 the lifetime.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = _point_array(self.points)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point set coordinates must be finite")
        if pts.size and np.any(pts[:, 1] < 0):
            raise ValueError("every point must satisfy x2 >= 0")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return len(self.points)


def to_ppd(diagram: PersistenceDiagram) -> PointSet:
    """Project a finite diagram to the half-plane: (b, d) -> (d, b - d).

    The transform drops the diagonal onto the horizontal axis and is exactly
    invertible by :func:`from_ppd`.  Diagrams holding infinite points are
    rejected; call :func:`strip_infinite` first.
    """
    if diagram.n_infinite:
        raise ValueError(
            f"diagram has {diagram.n_infinite} infinite point(s); "
            "strip them before projecting"
        )
    pts = diagram.points
    proj = np.column_stack([pts[:, 1], pts[:, 0] - pts[:, 1]])
    return PointSet(proj)


def from_ppd(ps: PointSet, degree: int = 0, metadata: dict | None = None) -> PersistenceDiagram:
    """Invert :func:`to_ppd`: (x1, x2) -> (birth, death) = (x1 + x2, x1)."""
    pts = ps.points
    raw = np.column_stack([pts[:, 0] + pts[:, 1], pts[:, 0]])
    return PersistenceDiagram(raw, degree=degree, metadata=dict(metadata or {}))


def strip_infinite(diagram: PersistenceDiagram) -> tuple[PersistenceDiagram, int]:
    """Return the diagram without its infinite points plus the count removed."""
    removed = diagram.n_infinite
    stripped = PersistenceDiagram(
        diagram.points.copy(),
        degree=diagram.degree,
        metadata=dict(diagram.metadata),
    )
    return stripped, removed


def vertical_outliers(diagram: PersistenceDiagram, multiplier: float = 5.0) -> np.ndarray:
    """Indices of points unusually far from the diagonal.

    A point is flagged when its lifetime is at least Q3 + multiplier * (Q3 - Q1),
    the quartiles taken over all lifetimes in the diagram with the linear
    order-statistic interpolation convention.  Needs at least four finite
    points for the quartiles to be meaningful.
    """
    if diagram.n < 4:
        raise ValueError("vertical outlier detection needs at least 4 finite points")
    life = diagram.lifetimes
    q1, q3 = np.quantile(life, [0.25, 0.75], method="linear")
    threshold = q3 + multiplier * (q3 - q1)
    return np.nonzero(life >= threshold)[0]


def betti_at(diagram: PersistenceDiagram, level: float) -> int:
    """Number of features alive at the given level (birth >= level > death)."""
    pts = diagram.points
    alive = 0
    if pts.size:
        alive += int(np.sum((pts[:, 0] >= level) & (pts[:, 1] < level)))
    alive += int(np.sum(diagram.infinite_births >= level))
    return alive


# ---------------------------------------------------------------------------
# Serialization.  CSV carries points only; JSON carries the full record.

def save_csv(diagram: PersistenceDiagram, path) -> None:
    """Write ``birth,death`` rows; infinite deaths appear as the literal inf."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["birth", "death"])
        for b, d in diagram.points:
            writer.writerow([repr(float(b)), repr(float(d))])
        for b in diagram.infinite_births:
            writer.writerow([repr(float(b)), "inf"])


def load_csv(path, degree: int = 0) -> PersistenceDiagram:
    finite, infinite = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["birth", "death"]:
            raise ValueError(f"{path}: expected a 'birth,death' header")
        for row in reader:
            if not row:
                continue
            b = float(row[0])
            death_field = row[1].strip().lower()
            if death_field in ("inf", "+inf", "-inf", "infinity", "-infinity"):
                infinite.append(b)
            else:
                finite.append((b, float(row[1])))
    return PersistenceDiagram(finite, infinite_births=infinite, degree=degree)


def save_json(diagram: PersistenceDiagram, path) -> None:
    record = {
        "degree": diagram.degree,
        "points": [[float(b), float(d)] for b, d in diagram.points],
        "infinite": [[float(b)] for b in diagram.infinite_births],
    }
    if diagram.metadata:
        record["metadata"] = dict(diagram.metadata)
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path) -> PersistenceDiagram:
    with open(path) as fh:
        record = json.load(fh)
    return PersistenceDiagram(
        record.get("points", []),
        infinite_births=[row[0] for row in record.get("infinite", [])],
        degree=int(record.get("degree", 0)),
        metadata=record.get("metadata", {}),
    )
