"""Uniform cell-centred lattices, domain masks and fields living on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class GridError(ValueError):
    pass


class FieldValueError(ValueError):
    """Raised when an evaluator produces a non-finite value."""

    def __init__(self, index, value):
        super().__init__(f"non-finite value {value!r} at cell {tuple(int(i) for i in index)}")
        self.index = tuple(int(i) for i in index)


@dataclass(frozen=True)
class Grid:
    """Cell-centred lattice: centre of cell ``i`` is ``origin + (i + 1/2) * spacing``."""

    shape: tuple[int, ...]
    origin: tuple[float, ...]
    spacing: tuple[float, ...]

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        origin = tuple(float(o) for o in self.origin)
        spacing = tuple(float(h) for h in self.spacing)
        if not (len(shape) == len(origin) == len(spacing)) or len(shape) == 0:
            raise GridError("shape, origin and spacing must have the same positive length")
        if any(s <= 0 for s in shape):
            raise GridError(f"cell counts must be positive, got {shape}")
        if any(not (h > 0 and math.isfinite(h)) for h in spacing):
            raise GridError(f"spacings must be positive, got {spacing}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def cube(cls, cells: int, lo: float, hi: float, n: int = 3) -> "Grid":
        h = (hi - lo) / cells
        return cls((cells,) * n, (lo,) * n, (h,) * n)

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h(self) -> float:
        """Largest spacing."""
        return max(self.spacing)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + s * h for o, s, h in zip(self.origin, self.shape, self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [o + (np.arange(s) + 0.5) * h for o, s, h in zip(self.origin, self.shape, self.spacing)]

    def centers(self) -> np.ndarray:
        """Cell centres, shape ``(n, *shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def is_uniform(self) -> bool:
        return all(math.isclose(h, self.spacing[0], rel_tol=1e-12) for h in self.spacing)

    def same_lattice(self, other: "Grid") -> bool:
        """True if both grids sample the same lattice (equal spacing, aligned origins)."""
        if self.n != other.n or self.spacing != other.spacing:
            return False
        for a, b, h in zip(self.origin, other.origin, self.spacing):
            k = (a - b) / h
            if abs(k - round(k)) > 1e-9:
                return False
        return True

    def offset_in(self, other: "Grid") -> tuple[int, ...]:
        """Index of this grid's first cell inside ``other`` (same lattice assumed)."""
        return tuple(int(round((a - b) / h)) for a, b, h in zip(self.origin, other.origin, self.spacing))

    def descriptor(self) -> dict:
        return {"n": self.n, "shape": list(self.shape), "origin": list(self.origin), "spacing": list(self.spacing)}


# ---------------------------------------------------------------------------
# domains


class Domain:
    """Base class; subclasses decide membership at cell centres."""

    kind = "abstract"

    def mask(self, grid: Grid) -> np.ndarray:
        raise NotImplementedError

    def descriptor(self) -> dict:
        return {"kind": self.kind}

    bounded = True


@dataclass(frozen=True)
class Box(Domain):
    kind = "box"

    def mask(self, grid):
        return np.ones(grid.shape, dtype=bool)


@dataclass(frozen=True)
class Ball(Domain):
    center: tuple[float, ...]
    radius: float
    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise GridError("ball radius must be positive")

    def mask(self, grid):
        x = grid.centers()
        c = np.asarray(self.center).reshape((-1,) + (1,) * grid.n)
        return np.sum((x - c) ** 2, axis=0) < self.radius**2

    def descriptor(self):
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class BoxMinusBall(Domain):
    """Truncated exterior domain: the lattice box with a ball removed."""

    center: tuple[float, ...]
    radius: float
    kind = "box_minus_ball"

    def mask(self, grid):
        return ~Ball(self.center, self.radius).mask(grid)

    def descriptor(self):
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class HalfSpace(Domain):
    """Slab ``0 < x_n < H`` where ``H`` is the top of the grid."""

    kind = "halfspace"
    bounded = False

    def mask(self, grid):
        return grid.centers()[-1] > 0.0


@dataclass(frozen=True, eq=False)
class LipschitzGraph(Domain):
    """Region ``x_n > sigma(x')`` above a graph sampled on the (n-1)-lattice.

    The same boundary graph serves both the extension charts and the bent
    half-space decomposition.
    """

    sigma: np.ndarray
    lipschitz: float | None = None
    kind = "graph"
    bounded = False

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        sigma.flags.writeable = False
        object.__setattr__(self, "sigma", sigma)

    def slope(self, grid: Grid) -> float:
        """Largest sampled slope between adjacent lattice points."""
        worst = 0.0
        for ax in range(self.sigma.ndim):
            if self.sigma.shape[ax] > 1:
                d = np.abs(np.diff(self.sigma, axis=ax)) / grid.spacing[ax]
                worst = max(worst, float(d.max()))
        return worst

    def check(self, grid: Grid):
        if self.sigma.shape != grid.shape[:-1]:
            raise GridError(f"graph samples have shape {self.sigma.shape}, expected {grid.shape[:-1]}")
        if self.lipschitz is not None and self.slope(grid) > self.lipschitz * (1 + 1e-12):
            raise GridError(f"sampled slope {self.slope(grid):.6g} exceeds Lipschitz bound {self.lipschitz}")

    def bound(self, grid: Grid) -> float:
        return self.lipschitz if self.lipschitz is not None else self.slope(grid)

    def mask(self, grid):
        self.check(grid)
        return grid.centers()[-1] > self.sigma[..., None]

    def descriptor(self):
        return {"kind": self.kind, "lipschitz": self.lipschitz, "sigma": self.sigma.ravel().tolist(),
                "sigma_shape": list(self.sigma.shape)}


@dataclass(frozen=True, eq=False)
class StarShaped(Domain):
    """Domain star-shaped with respect to every point of ``B(center, star_radius)``.

    With ``radial=None`` the domain is the ball ``B(center, radius)``; otherwise
    ``radial(e)`` gives the boundary distance from ``center`` along unit
    directions ``e`` of shape ``(n, m)``.
    """

    center: tuple[float, ...]
    star_radius: float
    radius: float | None = None
    radial: Callable[[np.ndarray], np.ndarray] | None = None
    kind = "star"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.radial is None and self.radius is None:
            raise GridError("star-shaped piece needs a radius or a radial function")
        if self.radius is not None and self.star_radius >= self.radius:
            raise GridError("star ball must lie strictly inside the domain")

    @property
    def is_ball(self) -> bool:
        return self.radial is None

    def mask(self, grid):
        x = grid.centers()
        c = np.asarray(self.center).reshape((-1,) + (1,) * grid.n)
        d = x - c
        r = np.sqrt(np.sum(d**2, axis=0))
        if self.is_ball:
            return r < self.radius
        e = d.reshape(grid.n, -1) / np.maximum(r.reshape(-1), 1e-300)
        rho = np.asarray(self.radial(e)).reshape(grid.shape)
        return r < rho

    def descriptor(self):
        out = {"kind": self.kind, "center": list(self.center), "star_radius": self.star_radius}
        if self.is_ball:
            out["radius"] = self.radius
        return out

    def spot_check(self, grid: Grid, samples: int = 200, seed: int = 0) -> None:
        """Probabilistic star-shape check: segments from star-ball points to mask cells stay inside."""
        rng = np.random.default_rng(seed)
        mask = self.mask(grid)
        cells = np.argwhere(mask)
        if len(cells) == 0:
            raise GridError("star-shaped piece has an empty mask")
        centres = grid.centers()
        pick = cells[rng.integers(0, len(cells), samples)]
        y = np.stack([centres[(k, *pick.T)] for k in range(grid.n)])
        u = rng.normal(size=(grid.n, samples))
        u /= np.linalg.norm(u, axis=0)
        z = np.asarray(self.center)[:, None] + u * self.star_radius * rng.uniform(0, 1, samples) ** (1 / grid.n)
        lo = np.asarray(grid.origin)[:, None]
        hs = np.asarray(grid.spacing)[:, None]
        for t in np.linspace(0.0, 1.0, 9)[1:-1]:
            p = z + t * (y - z)
            idx = np.floor((p - lo) / hs).astype(int)
            for ax in range(grid.n):
                np.clip(idx[ax], 0, grid.shape[ax] - 1, out=idx[ax])
            inside = mask[tuple(idx)]
            # a segment point may land in a boundary cell whose centre is outside; allow one cell of slack
            if not inside.all():
                bad = np.flatnonzero(~inside)
                near = np.linalg.norm(p[:, bad] - np.asarray(self.center)[:, None], axis=0)
                lim = self.radius if self.is_ball else np.inf
                if np.any(near < lim - 1.5 * grid.h):
                    raise GridError("star-shape spot check failed: segment leaves the domain")


@dataclass(frozen=True, eq=False)
class StarUnion(Domain):
    pieces: tuple[StarShaped, ...]
    kind = "star_union"

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if not self.pieces:
            raise GridError("empty union")

    def piece_masks(self, grid: Grid) -> list[np.ndarray]:
        return [p.mask(grid) for p in self.pieces]

    def mask(self, grid):
        return np.logical_or.reduce(self.piece_masks(grid))

    def check(self, grid: Grid):
        masks = self.piece_masks(grid)
        for k in range(len(masks) - 1):
            rest = np.logical_or.reduce(masks[k + 1:])
            if not np.any(masks[k] & rest):
                raise GridError(f"piece {k} does not overlap the union of its successors")

    def descriptor(self):
        return {"kind": self.kind, "pieces": [p.descriptor() for p in self.pieces]}


@dataclass(frozen=True, eq=False)
class MaskDomain(Domain):
    """Domain given only by an explicit mask (e.g. read back from a file)."""

    explicit: np.ndarray
    label: dict = field(default_factory=dict)
    kind = "mask"

    def mask(self, grid):
        if self.explicit.shape != grid.shape:
            raise GridError("explicit mask does not match the grid")
        return self.explicit.copy()

    def descriptor(self):
        return dict(self.label) if self.label else {"kind": self.kind}


def domain_from_descriptor(desc: dict, mask: np.ndarray | None = None) -> Domain:
    kind = desc.get("kind")
    if kind == "box":
        return Box()
    if kind == "ball":
        return Ball(tuple(desc["center"]), float(desc["radius"]))
    if kind == "box_minus_ball":
        return BoxMinusBall(tuple(desc["center"]), float(desc["radius"]))
    if kind == "halfspace":
        return HalfSpace()
    if kind == "graph":
        sigma = np.asarray(desc["sigma"], dtype=float).reshape(desc["sigma_shape"])
        return LipschitzGraph(sigma, desc.get("lipschitz"))
    if kind == "star" and "radius" in desc:
        return StarShaped(tuple(desc["center"]), float(desc["star_radius"]), float(desc["radius"]))
    if kind == "star_union" and all("radius" in p for p in desc["pieces"]):
        return StarUnion(tuple(domain_from_descriptor(p) for p in desc["pieces"]))
    if mask is None:
        raise GridError(f"cannot rebuild domain of kind {kind!r} without a mask")
    return MaskDomain(mask, desc)


# ---------------------------------------------------------------------------
# fields


class _Field:
    components: int

    def __init__(self, grid: Grid, domain: Domain, data: np.ndarray, mask: np.ndarray | None = None):
        if mask is None:
            mask = domain.mask(grid)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != grid.shape:
            raise GridError("mask shape does not match the grid")
        data = np.array(data, dtype=float)
        expect = self._data_shape(grid)
        if data.shape != expect:
            raise GridError(f"data shape {data.shape} != expected {expect}")
        data[..., ~mask] = 0.0
        if not np.all(np.isfinite(data)):
            bad = np.argwhere(~np.isfinite(data))[0]
            raise FieldValueError(bad[-grid.n:], data[tuple(bad)])
        data.flags.writeable = False
        mask.flags.writeable = False
        self.grid = grid
        self.domain = domain
        self.mask = mask
        self.data = data

    def _data_shape(self, grid):
        raise NotImplementedError

    def values(self) -> np.ndarray:
        """Mask values in scan order, component-major for vectors."""
        if self.components == 1:
            return self.data[self.mask]
        return np.stack([c[self.mask] for c in self.data])

    def with_data(self, data):
        return type(self)(self.grid, self.domain, data, self.mask)

    def __add__(self, other):
        return self.with_data(self.data + other.data)

    def __sub__(self, other):
        return self.with_data(self.data - other.data)

    def __mul__(self, c):
        return self.with_data(self.data * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_data(-self.data)

    def l2(self) -> float:
        return float(np.sqrt(np.sum(self.data**2) * self.grid.cell_volume))

    def magnitude(self) -> np.ndarray:
        if self.components == 1:
            return np.abs(self.data)
        return np.sqrt(np.sum(self.data**2, axis=0))


class ScalarField(_Field):
    components = 1

    def _data_shape(self, grid):
        return grid.shape

    def __repr__(self):
        return f"ScalarField(shape={self.grid.shape}, cells={int(self.mask.sum())})"


class VectorField(_Field):
    @property
    def components(self):
        return self.grid.n

    def _data_shape(self, grid):
        return (grid.n,) + grid.shape

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.domain, self.data[i], self.mask)

    @classmethod
    def stack(cls, parts: Sequence[ScalarField]) -> "VectorField":
        first = parts[0]
        return cls(first.grid, first.domain, np.stack([p.data for p in parts]), first.mask)

    def __repr__(self):
        return f"VectorField(shape={self.grid.shape}, cells={int(self.mask.sum())})"


def _evaluate(grid, mask, f, components):
    pts = grid.centers()[(slice(None),) + (mask,)] if mask.any() else np.zeros((grid.n, 0))
    out = np.asarray(f(*pts), dtype=float)
    if components == 1:
        out = np.broadcast_to(out, (pts.shape[1],))
    else:
        out = np.broadcast_to(np.stack([np.broadcast_to(np.asarray(c, float), (pts.shape[1],)) for c in out]),
                              (components, pts.shape[1]))
    bad = ~np.isfinite(out)
    if bad.any():
        j = np.flatnonzero(bad.reshape(-1, pts.shape[1]).any(axis=0))[0]
        raise FieldValueError(np.argwhere(mask)[j], out.reshape(-1, pts.shape[1])[:, j])
    return out


def build_field(grid: Grid, domain: Domain, f: Callable[..., np.ndarray]) -> ScalarField:
    """Sample ``f(x_1, ..., x_n)`` (vectorised over mask cells) into a scalar field."""
    mask = domain.mask(grid)
    data = np.zeros(grid.shape)
    data[mask] = _evaluate(grid, mask, f, 1)
    return ScalarField(grid, domain, data, mask)


def build_vector_field(grid: Grid, domain: Domain, f: Callable[..., Sequence[np.ndarray]]) -> VectorField:
    mask = domain.mask(grid)
    data = np.zeros((grid.n,) + grid.shape)
    vals = _evaluate(grid, mask, f, grid.n)
    for i in range(grid.n):
        data[i][mask] = vals[i]
    return VectorField(grid, domain, data, mask)


def zero_extend(f: _Field, target: Domain, grid: Grid | None = None):
    """Extend ``f`` by zero onto ``target`` (optionally on a larger grid of the same lattice)."""
    grid = f.grid if grid is None else grid
    if not f.grid.same_lattice(grid):
        raise GridError("zero_extend needs grids on the same lattice")
    off = f.grid.offset_in(grid)
    if any(o < 0 or o + s > g for o, s, g in zip(off, f.grid.shape, grid.shape)):
        raise GridError("source grid does not fit inside the target grid")
    window = tuple(slice(o, o + s) for o, s in zip(off, f.grid.shape))
    tmask = target.mask(grid)
    if not np.all(tmask[window][f.mask]):
        raise GridError("target domain does not contain the source domain")
    lead = (slice(None),) if f.components > 1 else ()
    data = np.zeros(((grid.n,) if f.components > 1 else ()) + grid.shape)
    data[lead + window] = f.data
    return type(f)(grid, target, data, tmask)


def restrict(f: _Field, domain: Domain):
    """Restrict ``f`` to a subdomain on the same grid (values outside are dropped)."""
    return type(f)(f.grid, domain, f.data, domain.mask(f.grid) & f.mask)
