"""Branched planar domains and their masked uniform grids.

A domain is a junction region (disc of radius L by default, or a user
polygon inside it) glued to m >= 2 straight-axis branches whose widths may
vary along the axis.  The mask realizes the zero-flux boundary through
closed cell faces; a face is open iff both adjacent cells are interior.

Cell centers are placed symmetrically about the origin, ((2i - n + 1) h/2),
so a geometry that is mirror-symmetric in exact arithmetic produces a
bitwise mirror-symmetric mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

__all__ = [
    "ConstantWidth",
    "TanhWidth",
    "TableWidth",
    "BranchSpec",
    "DomainSpec",
    "ExtendedChannelSpec",
    "MaskedGrid",
    "GeometryError",
    "SpecValidationError",
    "build_domain",
    "branch_coordinates",
    "skeleton_distance",
    "write_grid_file",
    "read_grid_file",
]

JUNCTION_TAG = -1
EXTERIOR_TAG = -2


class GeometryError(RuntimeError):
    pass


class SpecValidationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# width profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantWidth:
    w: float

    def __post_init__(self):
        if self.w <= 0:
            raise SpecValidationError(f"width must be positive: {self.w}")

    def width(self, s):
        return np.full(np.shape(np.asarray(s, dtype=float)), self.w)

    def bounds(self, s_max: float) -> tuple[float, float]:
        return self.w, self.w

    def limit(self) -> float:
        return self.w


@dataclass(frozen=True)
class TanhWidth:
    """w(s) = w_inf + (w0 - w_inf) (1 - tanh(s/ell)) / 2; asymptotically straight."""

    w0: float
    w_inf: float
    ell: float

    def __post_init__(self):
        if min(self.w0, self.w_inf) <= 0 or self.ell <= 0:
            raise SpecValidationError("tanh width needs positive w0, w_inf, ell")

    def width(self, s):
        s = np.asarray(s, dtype=float)
        return self.w_inf + (self.w0 - self.w_inf) * (1.0 - np.tanh(s / self.ell)) / 2.0

    def bounds(self, s_max: float) -> tuple[float, float]:
        lo, hi = sorted((self.w0, self.w_inf))
        return lo, hi

    def limit(self) -> float:
        return self.w_inf


@dataclass(frozen=True)
class TableWidth:
    """Piecewise-linear width table; clamped to the end values outside."""

    s: tuple
    w: tuple

    def __post_init__(self):
        if len(self.s) != len(self.w) or len(self.s) < 2:
            raise SpecValidationError("width table needs matching s/w lists, length >= 2")
        if any(b <= a for a, b in zip(self.s, self.s[1:])):
            raise SpecValidationError("width table abscissae must increase")
        if min(self.w) <= 0:
            raise SpecValidationError("width table values must be positive")

    def width(self, s):
        return np.interp(np.asarray(s, dtype=float), self.s, self.w)

    def bounds(self, s_max: float) -> tuple[float, float]:
        return float(min(self.w)), float(max(self.w))

    def limit(self) -> float:
        return float(self.w[-1])


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BranchSpec:
    """Straight-axis branch: points shift + s*direction + tau*normal, s > 0."""

    direction: tuple[float, float]
    width: ConstantWidth | TanhWidth | TableWidth
    shift: tuple[float, float] = (0.0, 0.0)
    length: float = 40.0  # truncation S_max of the simulation window

    def __post_init__(self):
        ex, ey = self.direction
        norm = math.hypot(ex, ey)
        if norm == 0:
            raise SpecValidationError("branch direction must be nonzero")
        if abs(norm - 1.0) > 1e-12:
            object.__setattr__(self, "direction", (ex / norm, ey / norm))
        if self.length <= 0:
            raise SpecValidationError("branch length must be positive")
        wmin, wmax = self.width.bounds(self.length)
        if not 0 < wmin <= wmax < math.inf:
            raise SpecValidationError("branch widths must be positive and bounded")

    @property
    def normal(self) -> tuple[float, float]:
        ex, ey = self.direction
        return (-ey, ex)

    def local_coords(self, x, y):
        """(s, tau) of global points relative to this branch axis."""
        ex, ey = self.direction
        dx = np.asarray(x, dtype=float) - self.shift[0]
        dy = np.asarray(y, dtype=float) - self.shift[1]
        s = dx * ex + dy * ey
        tau = dx * (-ey) + dy * ex
        return s, tau

    def to_global(self, s, tau):
        ex, ey = self.direction
        s = np.asarray(s, dtype=float)
        tau = np.asarray(tau, dtype=float)
        return self.shift[0] + s * ex - tau * ey, self.shift[1] + s * ey + tau * ex

    def contains(self, x, y, capped: bool = True):
        s, tau = self.local_coords(x, y)
        inside = (s > 0) & (np.abs(tau) < self.width.width(s) / 2.0)
        if capped:
            inside &= s < self.length
        return inside


@dataclass(frozen=True)
class DomainSpec:
    """Junction region plus m >= 2 branches.

    The junction region is a closed polygon inside the ball of radius L;
    the default is the convex hull of the branch mouths (the cross-sections
    where each branch leaves the ball).  With mirror_x the polygon test is
    symmetrized under x -> -x so a mirror-symmetric spec yields a bitwise
    mirror-symmetric mask.
    """

    junction_radius: float
    branches: tuple[BranchSpec, ...]
    junction_polygon: Optional[tuple[tuple[float, float], ...]] = None
    mirror_x: bool = False

    def __post_init__(self):
        if self.junction_radius <= 0:
            raise SpecValidationError("junction radius must be positive")
        if len(self.branches) < 2:
            raise SpecValidationError("a branched domain needs m >= 2 branches")
        object.__setattr__(self, "branches", tuple(self.branches))
        L = self.junction_radius
        for i, b in enumerate(self.branches):
            if math.hypot(*b.shift) > L:
                raise SpecValidationError(f"branch {i} shift lies outside the junction ball")
        if self.junction_polygon is None:
            object.__setattr__(self, "junction_polygon", self._mouth_hull())
        for vx, vy in self.junction_polygon:
            if math.hypot(vx, vy) > L + 1e-9:
                raise SpecValidationError("junction polygon must lie inside the ball of radius L")

    def _mouth_hull(self) -> tuple[tuple[float, float], ...]:
        pts = []
        for i, b in enumerate(self.branches):
            sm = self.mouth_exit_coordinate(i)
            w2 = float(b.width.width(sm)) / 2.0
            for t in (-w2, w2):
                gx, gy = b.to_global(sm, t)
                pts.append((float(gx), float(gy)))
        pts = np.array(pts)
        from scipy.spatial import ConvexHull

        hull = ConvexHull(pts)
        return tuple((float(pts[v, 0]), float(pts[v, 1])) for v in hull.vertices)

    def in_junction(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = _in_polygon(x, y, self.junction_polygon)
        if self.mirror_x:
            inside |= _in_polygon(-x, y, self.junction_polygon)
        return inside

    def min_width(self) -> float:
        return min(b.width.bounds(b.length)[0] for b in self.branches)

    def mouth_coordinate(self, i: int) -> float:
        """Axial s where branch i's axis crosses the junction sphere."""
        b = self.branches[i]
        L = self.junction_radius
        se = b.shift[0] * b.direction[0] + b.shift[1] * b.direction[1]
        disc = se * se + L * L - (b.shift[0] ** 2 + b.shift[1] ** 2)
        return -se + math.sqrt(disc)

    def mouth_exit_coordinate(self, i: int) -> float:
        """Axial s where the branch cross-section corners leave the ball."""
        b = self.branches[i]
        L = self.junction_radius
        s = self.mouth_coordinate(i)
        for _ in range(60):
            w2 = float(b.width.width(s)) / 2.0
            if w2 >= L:
                return self.mouth_coordinate(i)  # too wide: fall back to the axis crossing
            se = b.shift[0] * b.direction[0] + b.shift[1] * b.direction[1]
            r2 = L * L - w2 * w2
            disc = se * se + r2 - (b.shift[0] ** 2 + b.shift[1] ** 2)
            if disc <= 0:
                return self.mouth_coordinate(i)
            s_new = -se + math.sqrt(disc)
            if abs(s_new - s) < 1e-12:
                return s_new
            s = s_new
        return s


def _in_polygon(x, y, poly):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    inside = np.zeros(x.shape, dtype=bool)
    n = len(poly)
    for k in range(n):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % n]
        cond = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (x2 - x1) * (y - y1) / (y2 - y1) + x1
        inside ^= cond & (x < xint)
    return inside


@dataclass(frozen=True)
class ExtendedChannelSpec:
    """A branch extended to s < 0, used by the auxiliary-weight construction.

    The extension profile defaults to the natural continuation of the base
    profile (constant / tanh formulas are defined for all s; tables clamp),
    which matches the base width at s = 0 by construction.
    """

    base: BranchSpec
    extension: Optional[ConstantWidth | TanhWidth | TableWidth] = None
    extension_length: float = 20.0

    def __post_init__(self):
        if self.extension is not None:
            w0_base = float(self.base.width.width(0.0))
            w0_ext = float(self.extension.width(0.0))
            if abs(w0_base - w0_ext) > 1e-9:
                raise SpecValidationError(
                    f"extension width {w0_ext:g} does not match base width {w0_base:g} at s=0"
                )
        if self.extension_length <= 0:
            raise SpecValidationError("extension length must be positive")

    def width(self, s):
        s = np.asarray(s, dtype=float)
        if self.extension is None:
            return self.base.width.width(s)
        return np.where(s >= 0, self.base.width.width(s), self.extension.width(s))

    @property
    def s_range(self) -> tuple[float, float]:
        return -self.extension_length, self.base.length


# ---------------------------------------------------------------------------
# masked grid
# ---------------------------------------------------------------------------


@dataclass
class MaskedGrid:
    """Uniform Cartesian discretization of the domain with an interior mask.

    Arrays are indexed [j, i] for (y, x).  Immutable after construction;
    concurrent reads are safe.
    """

    spec: DomainSpec
    h: float
    xs: np.ndarray
    ys: np.ndarray
    mask: np.ndarray          # interior cells
    tag: np.ndarray           # branch index, JUNCTION_TAG or EXTERIOR_TAG
    s: np.ndarray             # axial coordinate (nan off-branch)
    tau: np.ndarray           # transverse coordinate (nan off-branch)
    open_e: np.ndarray = field(repr=False, default=None)  # face (j,i)-(j,i+1)
    open_n: np.ndarray = field(repr=False, default=None)  # face (j,i)-(j+1,i)

    def __post_init__(self):
        if self.open_e is None:
            self.open_e = self.mask[:, :-1] & self.mask[:, 1:]
        if self.open_n is None:
            self.open_n = self.mask[:-1, :] & self.mask[1:, :]
        jj, ii = np.nonzero(self.mask)
        self._cells = (jj, ii)
        index = -np.ones(self.mask.shape, dtype=np.int64)
        index[jj, ii] = np.arange(jj.size)
        self._index = index

    @property
    def n_cells(self) -> int:
        return self._cells[0].size

    @property
    def cells(self) -> tuple[np.ndarray, np.ndarray]:
        return self._cells

    @property
    def index(self) -> np.ndarray:
        return self._index

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        jj, ii = self._cells
        return self.xs[ii], self.ys[jj]

    def cell_tags(self) -> np.ndarray:
        jj, ii = self._cells
        return self.tag[jj, ii]

    def cell_s(self) -> np.ndarray:
        jj, ii = self._cells
        return self.s[jj, ii]

    def cell_tau(self) -> np.ndarray:
        jj, ii = self._cells
        return self.tau[jj, ii]

    def to_grid_array(self, values: np.ndarray, fill=np.nan) -> np.ndarray:
        out = np.full(self.mask.shape, fill, dtype=float)
        jj, ii = self._cells
        out[jj, ii] = values
        return out

    def from_grid_array(self, arr: np.ndarray) -> np.ndarray:
        jj, ii = self._cells
        return np.ascontiguousarray(arr[jj, ii], dtype=float)

    def interior_area(self) -> float:
        return self.n_cells * self.h * self.h


def _symmetric_axis(extent: float, h: float) -> np.ndarray:
    n = 2 * int(math.ceil(extent / h + 1.0))
    i = np.arange(n)
    return (2.0 * i - (n - 1)) * (h / 2.0)


def build_domain(spec: DomainSpec, h: float) -> MaskedGrid:
    """Mesh the domain with spacing h; validates connectivity and disjointness.

    Requires h <= (min branch width)/6 so every channel is at least six cells
    wide.  Raises SpecValidationError for overlapping branches outside the
    junction ball and GeometryError for a disconnected mask.
    """
    if h <= 0:
        raise SpecValidationError("grid spacing h must be positive")
    wmin = spec.min_width()
    if h > wmin / 6.0 + 1e-12:
        raise SpecValidationError(
            f"h={h:g} too coarse: need h <= min width/6 = {wmin / 6.0:g}"
        )
    L = spec.junction_radius
    extent_x = extent_y = L
    for b in spec.branches:
        _, wmax = b.width.bounds(b.length)
        for s_probe in (0.0, b.length):
            w2 = float(b.width.width(s_probe)) / 2.0
            for t in (-w2, w2):
                gx, gy = b.to_global(s_probe, t)
                extent_x = max(extent_x, abs(float(gx)))
                extent_y = max(extent_y, abs(float(gy)))
        extent_x += 0.0  # corners above cover straight axes; pad below
    xs = _symmetric_axis(extent_x + 2 * h, h)
    ys = _symmetric_axis(extent_y + 2 * h, h)
    X, Y = np.meshgrid(xs, ys)

    in_junction = spec.in_junction(X, Y)
    n_branches = len(spec.branches)
    member = np.zeros((n_branches,) + X.shape, dtype=bool)
    s_all = np.full((n_branches,) + X.shape, -np.inf)
    tau_all = np.zeros((n_branches,) + X.shape)
    for i, b in enumerate(spec.branches):
        s_i, tau_i = b.local_coords(X, Y)
        inside = (s_i > 0) & (s_i < b.length) & (np.abs(tau_i) < b.width.width(s_i) / 2.0)
        member[i] = inside
        s_all[i][inside] = s_i[inside]
        tau_all[i][inside] = tau_i[inside]

    counts = member.sum(axis=0)
    outside_ball = X * X + Y * Y >= L * L
    overlap = (counts >= 2) & outside_ball
    if np.any(overlap):
        j, i = np.nonzero(overlap)
        hits = [k for k in range(n_branches) if member[k, j[0], i[0]]]
        raise SpecValidationError(
            f"branches {hits} overlap outside the junction ball, e.g. near "
            f"({xs[i[0]]:.3f}, {ys[j[0]]:.3f})"
        )

    mask = in_junction | (counts > 0)
    tag = np.full(X.shape, EXTERIOR_TAG, dtype=np.int64)
    tag[mask] = JUNCTION_TAG
    # inside the ball several cones may cover a cell: deepest axial wins
    in_branch = (counts > 0) & ~in_junction
    winner = np.argmax(s_all, axis=0)
    tag[in_branch] = winner[in_branch]
    s_arr = np.full(X.shape, np.nan)
    tau_arr = np.full(X.shape, np.nan)
    jx, ix = np.nonzero(in_branch)
    s_arr[jx, ix] = s_all[winner[jx, ix], jx, ix]
    tau_arr[jx, ix] = tau_all[winner[jx, ix], jx, ix]

    labels, n_comp = ndimage.label(mask, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    if n_comp == 0:
        raise GeometryError("empty mask")
    if n_comp > 1:
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, range(1, n_comp + 1))
        main = 1 + int(np.argmax(sizes))
        stray = np.unique(tag[(labels > 0) & (labels != main)])
        names = [("junction" if t == JUNCTION_TAG else f"branch {t}") for t in stray if t >= -1]
        raise GeometryError(
            f"mask is disconnected ({n_comp} components); stray parts touch: {names}"
        )

    # per-branch connectivity outside the ball
    for i in range(n_branches):
        part = member[i] & outside_ball
        if not part.any():
            raise GeometryError(f"branch {i} has no cells outside the junction ball")
        _, nc = ndimage.label(part, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
        if nc > 1:
            raise GeometryError(f"branch {i} is disconnected outside the junction ball")

    return MaskedGrid(spec=spec, h=h, xs=xs, ys=ys, mask=mask, tag=tag, s=s_arr, tau=tau_arr)


# ---------------------------------------------------------------------------
# coordinates and skeleton distance
# ---------------------------------------------------------------------------


def branch_coordinates(spec: DomainSpec, point) -> Optional[tuple[int, float, float]]:
    """(branch index, s, tau) of a point, or None for junction/exterior points.

    Points inside the junction ball report None even when a branch cone
    covers them; outside the ball membership is unique by validation.
    """
    x, y = float(point[0]), float(point[1])
    if x * x + y * y < spec.junction_radius ** 2:
        return None
    for i, b in enumerate(spec.branches):
        if bool(b.contains(x, y)):
            s, tau = b.local_coords(x, y)
            return i, float(s), float(tau)
    return None


def _classify(spec: DomainSpec, point):
    x, y = float(point[0]), float(point[1])
    r = math.hypot(x, y)
    if r < spec.junction_radius or spec.in_junction(x, y):
        if r <= spec.junction_radius:
            return ("junction", r)
    bc = branch_coordinates(spec, point)
    if bc is None:
        raise GeometryError(f"point {point} is exterior to the domain")
    return ("branch", bc)


def skeleton_distance(spec: DomainSpec, a, b) -> float:
    """Approximate geodesic distance along branch axes through the junction.

    Exact (|s_a - s_b|) for two points on the same straight branch axis;
    across branches it routes mouth -> center -> mouth, overestimating the
    true geodesic by at most the junction detour.
    """
    ka = _classify(spec, a)
    kb = _classify(spec, b)
    L = spec.junction_radius
    if ka[0] == "junction" and kb[0] == "junction":
        return math.hypot(a[0] - b[0], a[1] - b[1])
    if ka[0] == "junction":
        ka, kb = kb, ka
        a, b = b, a
    ia, sa, _ = ka[1]
    sma = spec.mouth_coordinate(ia)
    if kb[0] == "junction":
        return max(sa - sma, 0.0) + L + kb[1]
    ib, sb, _ = kb[1]
    if ia == ib:
        return abs(sa - sb)
    smb = spec.mouth_coordinate(ib)
    return max(sa - sma, 0.0) + max(sb - smb, 0.0) + 2.0 * L


def axial_distance_field(grid: MaskedGrid, branch: int, xi: float) -> np.ndarray:
    """Skeleton distance from every interior cell to the axial section
    {s = xi} of a branch; the workhorse behind certification bands."""
    spec = grid.spec
    L = spec.junction_radius
    sm_t = spec.mouth_coordinate(branch)
    tags = grid.cell_tags()
    s = grid.cell_s()
    cx, cy = grid.cell_centers()
    out = np.empty(tags.shape, dtype=float)

    same = tags == branch
    out[same] = np.abs(s[same] - xi)
    target_leg = max(xi - sm_t, 0.0) + L

    junction = tags == JUNCTION_TAG
    out[junction] = np.hypot(cx[junction], cy[junction]) + target_leg

    for i in range(len(spec.branches)):
        if i == branch:
            continue
        other = tags == i
        if not other.any():
            continue
        sm = spec.mouth_coordinate(i)
        out[other] = np.maximum(s[other] - sm, 0.0) + L + target_leg
    return out


def junction_distance_field(grid: MaskedGrid) -> np.ndarray:
    """Skeleton distance from every interior cell to the junction center."""
    spec = grid.spec
    L = spec.junction_radius
    tags = grid.cell_tags()
    s = grid.cell_s()
    cx, cy = grid.cell_centers()
    out = np.hypot(cx, cy)
    for i in range(len(spec.branches)):
        mine = tags == i
        if mine.any():
            sm = spec.mouth_coordinate(i)
            out[mine] = np.maximum(s[mine] - sm, 0.0) + L
    return out


# ---------------------------------------------------------------------------
# portable grid file
# ---------------------------------------------------------------------------


def write_grid_file(path, grid: MaskedGrid, values: np.ndarray | None = None) -> None:
    """Plain-text header + row-major 0/1 mask payload, optionally followed by
    a full-precision values payload (bitwise round-trippable)."""
    ny, nx = grid.mask.shape
    lines = [
        "# branchfront grid v1",
        f"nx {nx}",
        f"ny {ny}",
        f"h {grid.h!r}",
        f"x0 {grid.xs[0]!r}",
        f"y0 {grid.ys[0]!r}",
        "mask",
    ]
    for j in range(ny):
        lines.append("".join("1" if grid.mask[j, i] else "0" for i in range(nx)))
    if values is not None:
        lines.append("values")
        full = grid.to_grid_array(values)
        for j in range(ny):
            lines.append(" ".join(repr(v) for v in full[j]))
    lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


def read_grid_file(path):
    """Returns (header dict, mask array, values array or None)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# branchfront grid"):
        raise GeometryError(f"{path}: not a branchfront grid file")
    header = {}
    k = 1
    while lines[k] != "mask":
        key, val = lines[k].split(maxsplit=1)
        header[key] = val
        k += 1
    nx, ny = int(header["nx"]), int(header["ny"])
    k += 1
    mask = np.zeros((ny, nx), dtype=bool)
    for j in range(ny):
        mask[j] = np.frombuffer(lines[k + j].encode(), dtype=np.uint8) == ord("1")
    k += ny
    values = None
    if k < len(lines) and lines[k] == "values":
        values = np.empty((ny, nx), dtype=float)
        for j in range(ny):
            values[j] = np.array(lines[k + 1 + j].split(), dtype=float)
    header["h"] = float(header["h"])
    header["x0"] = float(header["x0"])
    header["y0"] = float(header["y0"])
    return header, mask, values
