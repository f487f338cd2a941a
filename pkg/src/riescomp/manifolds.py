"""Riemannian geometry kernels.

Four manifolds are supported, all embedded in a Euclidean ambient space and
represented by dense coordinate arrays:

* ``Euclidean(n)`` -- flat space, coords shape ``(n,)``
* ``Sphere(n)``    -- unit sphere in R^n, coords shape ``(n,)``
* ``SPD(d)``       -- symmetric positive definite d x d matrices with the
  affine-invariant metric, coords shape ``(d, d)``
* ``Product(parts)`` -- finite product, coords stored as one flat vector

The exponential map is exact on all of them (no retractions), so iterates of
a solver can never leave the manifold. Points and tangent vectors are
validated on construction and immutable afterwards; all operations are pure
functions and safe for concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .linalg import min_eigval, sym_expm, sym_logm, sym_sqrtm_and_invsqrtm, symmetrize

SPHERE_POINT_TOL = 1e-12
SPHERE_TANGENT_TOL = 1e-10
SPD_ASYMMETRY_TOL = 1e-8
SPD_TANGENT_SYM_TOL = 1e-12
SPD_RANDOM_EIG_FLOOR = 1e-3


class Manifold:
    """Base interface; subclasses implement the geometry on raw coords."""

    intrinsic_dim: int
    ambient_dim: int
    shape: tuple[int, ...]

    def check_point(self, coords: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def check_tangent(self, base: np.ndarray, coords: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inner(self, x: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
        raise NotImplementedError

    def exp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def project(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def egrad_to_rgrad(self, x: np.ndarray, e: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def transport(self, x: np.ndarray, v: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def distance(self, x: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def as_coords(self, a) -> np.ndarray:
        """Coerce an ambient array (flat or shaped) to the coords shape."""
        arr = np.asarray(a, dtype=float)
        if arr.shape == self.shape:
            return arr
        if arr.size == self.ambient_dim:
            return arr.reshape(self.shape)
        raise ContractViolation(
            f"expected array of {self.ambient_dim} entries with shape "
            f"{self.shape}, got shape {arr.shape}"
        )

    def flatten(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=float).reshape(-1)


@dataclass(frozen=True)
class Euclidean(Manifold):
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ContractViolation("Euclidean dimension must be >= 1")

    @property
    def intrinsic_dim(self) -> int:
        return self.n

    @property
    def ambient_dim(self) -> int:
        return self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,)

    def check_point(self, coords):
        coords = self.as_coords(coords)
        if not np.all(np.isfinite(coords)):
            raise ContractViolation("point coordinates must be finite")
        return coords

    def check_tangent(self, base, coords):
        return self.check_point(coords)

    def inner(self, x, u, v):
        return float(np.dot(u, v))

    def exp(self, x, v):
        return x + v

    def project(self, x, a):
        return self.as_coords(a)

    def egrad_to_rgrad(self, x, e):
        return self.as_coords(e)

    def transport(self, x, v, u):
        return u

    def distance(self, x, y):
        return float(np.linalg.norm(x - y))

    def random_point(self, rng):
        return rng.standard_normal(self.n)


@dataclass(frozen=True)
class Sphere(Manifold):
    """Unit sphere { x in R^n : ||x|| = 1 }."""

    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ContractViolation("Sphere needs ambient dimension >= 2")

    @property
    def intrinsic_dim(self) -> int:
        return self.n - 1

    @property
    def ambient_dim(self) -> int:
        return self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,)

    def check_point(self, coords):
        coords = self.as_coords(coords)
        nrm = np.linalg.norm(coords)
        if not np.isfinite(nrm) or abs(nrm - 1.0) > SPHERE_POINT_TOL:
            raise ContractViolation(f"sphere point has norm {nrm!r}, expected 1")
        return coords

    def check_tangent(self, base, coords):
        coords = self.as_coords(coords)
        dot = abs(float(np.dot(coords, base)))
        tol = SPHERE_TANGENT_TOL * max(1.0, float(np.linalg.norm(coords)))
        if not np.all(np.isfinite(coords)) or dot > tol:
            raise ContractViolation(
                f"sphere tangent not orthogonal to base point (<v,x> = {dot:g})"
            )
        return coords

    def inner(self, x, u, v):
        return float(np.dot(u, v))

    def exp(self, x, v):
        theta = float(np.linalg.norm(v))
        if theta == 0.0:
            return x
        y = np.cos(theta) * x + np.sin(theta) * (v / theta)
        return y / np.linalg.norm(y)

    def project(self, x, a):
        a = self.as_coords(a)
        return a - np.dot(a, x) * x

    def egrad_to_rgrad(self, x, e):
        return self.project(x, e)

    def transport(self, x, v, u):
        theta = float(np.linalg.norm(v))
        if theta == 0.0:
            return u
        w = v / theta
        c = float(np.dot(u, w))
        # w-component rotates into (cos t) w - (sin t) x; the rest is fixed.
        return u + c * ((np.cos(theta) - 1.0) * w - np.sin(theta) * x)

    def distance(self, x, y):
        return float(np.arccos(np.clip(np.dot(x, y), -1.0, 1.0)))

    def random_point(self, rng):
        a = rng.standard_normal(self.n)
        return a / np.linalg.norm(a)


@dataclass(frozen=True)
class SPD(Manifold):
    """Symmetric positive definite matrices with the affine-invariant metric.

    Complete and with globally defined Exp, so solver updates stay positive
    definite with no projection step.
    """

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ContractViolation("SPD dimension must be >= 1")

    @property
    def intrinsic_dim(self) -> int:
        return self.d * (self.d + 1) // 2

    @property
    def ambient_dim(self) -> int:
        return self.d * self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.d, self.d)

    def check_point(self, coords):
        coords = self.as_coords(coords)
        if not np.all(np.isfinite(coords)):
            raise ContractViolation("point coordinates must be finite")
        nrm = np.linalg.norm(coords)
        asym = np.linalg.norm(coords - coords.T)
        if nrm > 0 and asym / nrm > SPD_ASYMMETRY_TOL:
            raise ContractViolation(
                f"matrix is not symmetric (relative asymmetry {asym / nrm:g})"
            )
        coords = symmetrize(coords)
        lo = min_eigval(coords)
        if lo <= 0.0:
            raise ContractViolation(f"matrix is not positive definite (min eig {lo:g})")
        return coords

    def check_tangent(self, base, coords):
        coords = self.as_coords(coords)
        if not np.all(np.isfinite(coords)):
            raise ContractViolation("tangent coordinates must be finite")
        asym = np.linalg.norm(coords - coords.T)
        tol = SPD_TANGENT_SYM_TOL * max(1.0, float(np.linalg.norm(coords)))
        if asym > tol:
            raise ContractViolation(f"SPD tangent must be symmetric (||A-A^T|| = {asym:g})")
        return symmetrize(coords)

    def inner(self, x, u, v):
        # trace(X^-1 U X^-1 V) without forming the inverse explicitly
        a = np.linalg.solve(x, u)
        b = np.linalg.solve(x, v)
        return float(np.sum(a * b.T))

    def exp(self, x, v):
        if not np.any(v):
            return x
        s, si = sym_sqrtm_and_invsqrtm(x)
        w, q = np.linalg.eigh(symmetrize(si @ v @ si))
        # Gram-factor form G G^T keeps the result symmetric PD under round-off
        g = (s @ q) * np.exp(0.5 * w)
        return g @ g.T

    def project(self, x, a):
        return symmetrize(self.as_coords(a))

    def egrad_to_rgrad(self, x, e):
        return symmetrize(x @ symmetrize(self.as_coords(e)) @ x)

    def transport(self, x, v, u):
        if not np.any(v):
            return u
        s, si = sym_sqrtm_and_invsqrtm(x)
        e = s @ sym_expm(0.5 * (si @ v @ si)) @ si
        return symmetrize(e @ u @ e.T)

    def distance(self, x, y):
        _, si = sym_sqrtm_and_invsqrtm(x)
        return float(np.linalg.norm(sym_logm(si @ y @ si)))

    def random_point(self, rng):
        a = rng.standard_normal((self.d, self.d))
        return a @ a.T + SPD_RANDOM_EIG_FLOOR * np.eye(self.d)


@dataclass(frozen=True)
class Product(Manifold):
    """Finite product manifold; coords are the concatenated flat components."""

    parts: tuple[Manifold, ...]
    _slices: tuple[slice, ...] = field(init=False, repr=False, compare=False)

    def __init__(self, parts):
        parts = tuple(parts)
        if not parts:
            raise ContractViolation("Product needs at least one component")
        object.__setattr__(self, "parts", parts)
        slices, pos = [], 0
        for m in parts:
            slices.append(slice(pos, pos + m.ambient_dim))
            pos += m.ambient_dim
        object.__setattr__(self, "_slices", tuple(slices))

    @property
    def intrinsic_dim(self) -> int:
        return sum(m.intrinsic_dim for m in self.parts)

    @property
    def ambient_dim(self) -> int:
        return sum(m.ambient_dim for m in self.parts)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.ambient_dim,)

    def split(self, coords: np.ndarray) -> list[np.ndarray]:
        flat = self.as_coords(coords)
        return [m.as_coords(flat[s]) for m, s in zip(self.parts, self._slices)]

    def join(self, pieces) -> np.ndarray:
        return np.concatenate([np.asarray(p, dtype=float).reshape(-1) for p in pieces])

    def _map(self, op, *coord_args):
        split_args = [self.split(c) for c in coord_args]
        return self.join([op(m, *(sa[i] for sa in split_args)) for i, m in enumerate(self.parts)])

    def check_point(self, coords):
        return self._map(lambda m, c: m.check_point(c), coords)

    def check_tangent(self, base, coords):
        return self._map(lambda m, b, c: m.check_tangent(b, c), base, coords)

    def inner(self, x, u, v):
        xs, us, vs = self.split(x), self.split(u), self.split(v)
        return float(sum(m.inner(a, b, c) for m, a, b, c in zip(self.parts, xs, us, vs)))

    def exp(self, x, v):
        return self._map(lambda m, a, b: m.exp(a, b), x, v)

    def project(self, x, a):
        return self._map(lambda m, b, c: m.project(b, c), x, a)

    def egrad_to_rgrad(self, x, e):
        return self._map(lambda m, b, c: m.egrad_to_rgrad(b, c), x, e)

    def transport(self, x, v, u):
        return self._map(lambda m, a, b, c: m.transport(a, b, c), x, v, u)

    def distance(self, x, y):
        xs, ys = self.split(x), self.split(y)
        return float(np.sqrt(sum(m.distance(a, b) ** 2 for m, a, b in zip(self.parts, xs, ys))))

    def random_point(self, rng):
        return self.join([m.random_point(rng) for m in self.parts])


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ManifoldPoint:
    """Validated, immutable point on a manifold."""

    manifold: Manifold
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _readonly(self.manifold.check_point(self.coords)))

    def same_as(self, other: "ManifoldPoint") -> bool:
        return self.manifold == other.manifold and np.array_equal(self.coords, other.coords)


@dataclass(frozen=True)
class TangentVector:
    """Validated, immutable tangent vector at ``point``."""

    point: ManifoldPoint
    coords: np.ndarray

    def __post_init__(self):
        checked = self.point.manifold.check_tangent(self.point.coords, self.coords)
        object.__setattr__(self, "coords", _readonly(checked))

    @property
    def manifold(self) -> Manifold:
        return self.point.manifold


def _require_same_base(*vectors: TangentVector) -> ManifoldPoint:
    base = vectors[0].point
    for t in vectors[1:]:
        if not t.point.same_as(base):
            raise ContractViolation("tangent vectors are based at different points")
    return base


def inner(x: ManifoldPoint, u: TangentVector, v: TangentVector) -> float:
    """Riemannian inner product <u, v>_x."""
    base = _require_same_base(u, v)
    if not base.same_as(x):
        raise ContractViolation("tangent vectors are not based at x")
    return x.manifold.inner(x.coords, u.coords, v.coords)


def norm_sq(v: TangentVector) -> float:
    """Squared Riemannian norm of a tangent vector."""
    m = v.manifold
    return m.inner(v.point.coords, v.coords, v.coords)


def exp_map(x: ManifoldPoint, v: TangentVector) -> ManifoldPoint:
    """Geodesic endpoint Exp_x(v)."""
    if not v.point.same_as(x):
        raise ContractViolation("tangent vector is not based at x")
    return ManifoldPoint(x.manifold, x.manifold.exp(x.coords, v.coords))


def project_tangent(x: ManifoldPoint, a) -> TangentVector:
    """Orthogonal projection of an ambient vector onto T_x."""
    return TangentVector(x, x.manifold.project(x.coords, a))


def egrad_to_rgrad(x: ManifoldPoint, egrad) -> TangentVector:
    """Riemannian gradient from the Euclidean gradient of a smooth extension."""
    return TangentVector(x, x.manifold.egrad_to_rgrad(x.coords, egrad))


def parallel_transport(x: ManifoldPoint, v: TangentVector, u: TangentVector) -> TangentVector:
    """Transport ``u`` along the geodesic t -> Exp_x(t v) from t=0 to t=1."""
    _require_same_base(v, u)
    if not v.point.same_as(x):
        raise ContractViolation("tangent vectors are not based at x")
    y = exp_map(x, v)
    return TangentVector(y, x.manifold.transport(x.coords, v.coords, u.coords))


def geodesic_distance(x: ManifoldPoint, y: ManifoldPoint) -> float:
    """Length of the minimizing geodesic between x and y."""
    if x.manifold != y.manifold:
        raise ContractViolation("points live on different manifolds")
    return x.manifold.distance(x.coords, y.coords)


def scale(v: TangentVector, c: float) -> TangentVector:
    return TangentVector(v.point, c * v.coords)


def zero_tangent(x: ManifoldPoint) -> TangentVector:
    return TangentVector(x, np.zeros(x.manifold.shape))


def random_point(manifold: Manifold, rng: np.random.Generator) -> ManifoldPoint:
    """Random valid point (Gaussian-based, distribution unspecified)."""
    return ManifoldPoint(manifold, manifold.random_point(rng))


def random_tangent(x: ManifoldPoint, rng: np.random.Generator) -> TangentVector:
    """Projection of an ambient standard Gaussian onto T_x."""
    ambient = rng.standard_normal(x.manifold.ambient_dim)
    return project_tangent(x, ambient)
