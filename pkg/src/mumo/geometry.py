"""Rotation-invariant geometric descriptors and rigid-transform fixtures.

All descriptors are computed in 64-bit floats. Angles come from a
clamped arccos so floating-point noise can never leave the [-1, 1]
domain. Two dihedral formulas are provided: ``torsion_cross`` keeps the
cross-product numerator exactly as written in its source derivation
(no ``||r_jk||`` scaling), while ``torsion_standard`` is the textbook
atan2 form. They agree in sign everywhere and agree exactly at the
planar 0 / pi configurations; neither is asserted as "the" dihedral.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, NoConformer

DEGENERATE_NORM = 1e-9
DEFAULT_RADIUS_CUTOFF = 6.0


@dataclass
class GeomTriplet:
    edge_ij: int
    edge_jk: int
    l_ij: float
    l_jk: float
    theta: float


@dataclass
class RigidTransform:
    R: np.ndarray  # 3x3 orthonormal, det +1
    b: np.ndarray  # translation, angstroms

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        err = np.abs(self.R.T @ self.R - np.eye(3)).max()
        if err >= 1e-12:
            raise ValueError(f"R is not orthonormal (max error {err:.3e})")


def geometric_triplet(coords, i: int, j: int, k: int) -> tuple[float, float, float]:
    """Lengths and inter-bond angle for edges (i,j) and (j,k) at center j."""
    coords = np.asarray(coords, dtype=np.float64)
    u = coords[i] - coords[j]
    v = coords[k] - coords[j]
    lu = float(np.linalg.norm(u))
    lv = float(np.linalg.norm(v))
    if lu < DEGENERATE_NORM or lv < DEGENERATE_NORM:
        raise DegenerateGeometry(f"zero-length bond vector at center {j}")
    cos = np.clip(np.dot(u, v) / (lu * lv), -1.0, 1.0)
    return lu, lv, float(np.arccos(cos))


def _chain_vectors(coords, i, j, k, l):
    """Bond vectors along the chain: b1 = p_j - p_i, b2 = p_k - p_j,
    b3 = p_l - p_k, plus the two plane normals b1 x b2 and b2 x b3."""
    coords = np.asarray(coords, dtype=np.float64)
    b1 = coords[j] - coords[i]
    b2 = coords[k] - coords[j]
    b3 = coords[l] - coords[k]
    for v in (b1, b2, b3):
        if np.linalg.norm(v) < DEGENERATE_NORM:
            raise DegenerateGeometry("zero-length bond vector in four-atom chain")
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    if np.linalg.norm(n1) < DEGENERATE_NORM or np.linalg.norm(n2) < DEGENERATE_NORM:
        raise DegenerateGeometry("collinear atoms in four-atom chain")
    return b1, b2, b3, n1, n2


def torsion_cross(coords, i: int, j: int, k: int, l: int) -> float:
    """Dihedral via atan2((b1 x b2) . b3, (b1 x b2) . (b2 x b3)).

    The numerator is not scaled by ||b2||; see module docstring. Planar
    cis chains give 0, planar trans chains give pi (denominator < 0).
    """
    _, _, b3, n1, n2 = _chain_vectors(coords, i, j, k, l)
    return float(np.arctan2(np.dot(n1, b3), np.dot(n1, n2)))


def torsion_standard(coords, i: int, j: int, k: int, l: int) -> float:
    """Textbook dihedral: atan2(||b2|| b1 . (b2 x b3), (b1 x b2) . (b2 x b3))."""
    b1, b2, _, n1, n2 = _chain_vectors(coords, i, j, k, l)
    y = float(np.linalg.norm(b2)) * np.dot(b1, n2)
    return float(np.arctan2(y, np.dot(n1, n2)))


def apply_rigid_transform(coords, t: RigidTransform) -> np.ndarray:
    """p' = R p + b, applied to every row."""
    coords = np.asarray(coords, dtype=np.float64)
    return coords @ t.R.T + t.b


def compose(t1: RigidTransform, t2: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying t1 first, then t2."""
    return RigidTransform(R=t2.R @ t1.R, b=t2.R @ t1.b + t2.b)


def random_rotation(seed: int) -> RigidTransform:
    """Uniform proper rotation (normalized quaternion from seeded Gaussians)
    plus a translation drawn from [-10, 10]^3."""
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ], dtype=np.float64)
    # Re-orthonormalize so the construction error stays below 1e-12.
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    if np.linalg.det(R) < 0:
        u[:, -1] *= -1
        R = u @ vt
    b = rng.uniform(-10.0, 10.0, size=3)
    return RigidTransform(R=R, b=b)


def radius_edges(coords, bonds: set[tuple[int, int]] | None = None,
                 cutoff: float = DEFAULT_RADIUS_CUTOFF) -> list[tuple[int, int]]:
    """Non-bond pairs within ``cutoff`` angstroms, each stored once with a < b."""
    if coords is None:
        raise NoConformer("radius_edges needs a conformer")
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    existing = set()
    for a, b in bonds or ():
        existing.add((min(a, b), max(a, b)))
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    out = []
    for a in range(n):
        for b in range(a + 1, n):
            if (a, b) in existing:
                continue
            if dist[a, b] <= cutoff:
                out.append((a, b))
    return out
