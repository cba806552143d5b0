"""Structured triangular meshes on the unit square, snapped coarse layouts,
and piecewise-constant wave-speed fields."""

import math
from dataclasses import dataclass, field

import numpy as np

SIDES = ("south", "east", "north", "west")
MESH_RULES = ("pollution_free", "points_per_wavelength", "explicit")


class DegenerateLayoutError(ValueError):
    """Snapping collapsed two coarse gridlines onto the same fine gridline."""


def ceil_snapped(x):
    # guards against float fuzz in expressions like 100**1.5
    return int(math.ceil(round(float(x), 9)))


def round_half_up(x):
    return int(math.floor(float(x) + 0.5))


class FineMesh:
    """m x m cell triangulation of the unit square, SW-NE cell diagonals.

    Nodes sit on the tensor grid xs x ys with id(ix, iy) = iy*(m+1)+ix.
    Cell (cx, cy) is split into the lower triangle (SW, SE, NE) and the upper
    triangle (SW, NE, NW), both positively oriented; their element ids are
    2*(cy*m+cx) and 2*(cy*m+cx)+1.  Gridlines are uniform (spacing h=1/m)
    unless explicit coordinates are supplied, which happens when a snapped
    coarse layout is re-meshed for a nested coarse solve.  Immutable after
    construction.
    """

    def __init__(self, m, xs=None, ys=None):
        m = int(m)
        if m < 1:
            raise ValueError("mesh needs at least one cell per side")
        self.m = m
        self.xs = np.linspace(0.0, 1.0, m + 1) if xs is None else np.asarray(xs, dtype=float)
        self.ys = np.linspace(0.0, 1.0, m + 1) if ys is None else np.asarray(ys, dtype=float)
        for g in (self.xs, self.ys):
            if len(g) != m + 1 or g[0] != 0.0 or g[-1] != 1.0 or np.any(np.diff(g) <= 0):
                raise ValueError("gridlines must increase from 0 to 1 with m+1 entries")
        self.h = float(max(np.max(np.diff(self.xs)), np.max(np.diff(self.ys))))

        gx, gy = np.meshgrid(self.xs, self.ys, indexing="xy")
        self.nodes = np.column_stack([gx.ravel(), gy.ravel()])

        cc = np.arange(m * m)
        nsw = (cc // m) * (m + 1) + (cc % m)
        self.elements = np.empty((2 * m * m, 3), dtype=np.int64)
        self.elements[0::2] = np.stack([nsw, nsw + 1, nsw + m + 2], axis=1)
        self.elements[1::2] = np.stack([nsw, nsw + m + 2, nsw + m + 1], axis=1)

        ix = np.arange(m + 1)
        edge = np.arange(m)
        self.boundary_nodes = np.unique(np.concatenate([
            ix,                                # south row
            m * (m + 1) + ix,                  # north row
            ix * (m + 1),                      # west column
            ix * (m + 1) + m,                  # east column
        ]))
        # edges ordered counterclockwise: south, east, north, west
        n0 = np.concatenate([edge,
                             edge * (m + 1) + m,
                             m * (m + 1) + edge + 1,
                             (edge + 1) * (m + 1)])
        n1 = np.concatenate([edge + 1,
                             (edge + 1) * (m + 1) + m,
                             m * (m + 1) + edge,
                             edge * (m + 1)])
        self.boundary_edge_nodes = np.column_stack([n0, n1])
        self.boundary_edge_sides = np.repeat(np.arange(4), m)
        self.boundary_edge_elements = np.concatenate([
            2 * edge,                          # lower triangle of cell (i, 0)
            2 * (edge * m + m - 1),            # lower triangle of cell (m-1, j)
            2 * ((m - 1) * m + edge) + 1,      # upper triangle of cell (i, m-1)
            2 * (edge * m) + 1,                # upper triangle of cell (0, j)
        ])

    @property
    def n(self):
        return (self.m + 1) ** 2

    @property
    def is_uniform(self):
        return bool(np.allclose(np.diff(self.xs), 1.0 / self.m)
                    and np.allclose(np.diff(self.ys), 1.0 / self.m))

    def node_id(self, ix, iy):
        return iy * (self.m + 1) + ix

    def cell_elements(self, cx, cy):
        base = 2 * (cy * self.m + cx)
        return base, base + 1

    def element_areas(self):
        p0 = self.nodes[self.elements[:, 0]]
        p1 = self.nodes[self.elements[:, 1]]
        p2 = self.nodes[self.elements[:, 2]]
        return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                      - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))

    def element_centroids(self):
        return self.nodes[self.elements].mean(axis=1)

    def __repr__(self):
        return f"FineMesh(m={self.m}, n={self.n})"


def cells_for_rule(k, rule, m=None):
    """Cells per side for a mesh rule: h ~ k^-3/2, 10 points/wavelength, or explicit."""
    if rule not in MESH_RULES:
        raise ValueError(f"unknown mesh rule {rule!r}")
    if rule == "explicit":
        if m is None or int(m) < 1:
            raise ValueError("explicit rule needs m >= 1")
        return int(m)
    if k <= 0:
        raise ValueError("wavenumber must be positive")
    if rule == "pollution_free":
        return ceil_snapped(k ** 1.5)
    return ceil_snapped(5.0 * k / math.pi)


def build_fine_mesh(k, rule="pollution_free", m=None):
    return FineMesh(cells_for_rule(k, rule, m=m))


@dataclass
class CoarseLayout:
    """M x M coarse cells snapped to fine gridlines, nested in a FineMesh."""

    M: int
    breaks_x: np.ndarray  # fine gridline indices, length M+1
    breaks_y: np.ndarray
    mesh: FineMesh
    _coarse_mesh: FineMesh = field(default=None, repr=False, compare=False)

    @property
    def widths_x(self):
        return np.diff(self.breaks_x)

    @property
    def widths_y(self):
        return np.diff(self.breaks_y)

    @property
    def g_min(self):
        return int(min(self.widths_x.min(), self.widths_y.min()))

    @property
    def cell_bounds(self):
        """(M^2, 4) array of (x_lo, x_hi, y_lo, y_hi) fine-cell indices; id = cj*M+ci."""
        ci, cj = np.meshgrid(np.arange(self.M), np.arange(self.M), indexing="xy")
        ci = ci.ravel()
        cj = cj.ravel()
        return np.column_stack([self.breaks_x[ci], self.breaks_x[ci + 1],
                                self.breaks_y[cj], self.breaks_y[cj + 1]])

    def as_mesh(self):
        """The coarse triangulation as a mesh of its own (gridlines snapped)."""
        if self._coarse_mesh is None:
            self._coarse_mesh = FineMesh(self.M,
                                         xs=self.mesh.xs[self.breaks_x],
                                         ys=self.mesh.ys[self.breaks_y])
        return self._coarse_mesh

    @property
    def coarse_nodes(self):
        return self.as_mesh().nodes

    @property
    def coarse_elements(self):
        return self.as_mesh().elements


def snap_breakpoints(m, M, anchors=()):
    """Nearest-gridline snapping of the uniform breakpoints p*m/M, p=0..M.

    Anchor gridlines become breakpoints; the remaining breakpoints are then
    re-distributed uniformly within each anchor segment (cell counts per
    segment by largest remainder), which keeps the cells quasi-uniform.
    """
    if anchors:
        for a in anchors:
            if not 0 < int(a) < m:
                raise ValueError(f"anchor gridline {a} not interior to the mesh")
        bounds = sorted({0, m, *(int(a) for a in anchors)})
        lengths = np.diff(bounds)
        if M < len(lengths):
            raise DegenerateLayoutError(
                f"{len(lengths)} anchor segments need at least that many coarse cells")
        raw = lengths * M / m
        counts = np.maximum(1, np.floor(raw).astype(int))
        while counts.sum() > M:
            i = int(np.argmax(np.where(counts > 1, counts - raw, -np.inf)))
            counts[i] -= 1
        while counts.sum() < M:
            counts[int(np.argmax(raw - counts))] += 1
        breaks = [0]
        for s, L, c in zip(bounds[:-1], lengths, counts):
            breaks.extend(s + round_half_up(p * L / c) for p in range(1, c))
            breaks.append(s + int(L))
        breaks = np.asarray(breaks, dtype=np.int64)
    else:
        breaks = np.array([round_half_up(p * m / M) for p in range(M + 1)],
                          dtype=np.int64)
        breaks[0] = 0
        breaks[-1] = m
    if np.any(np.diff(breaks) <= 0):
        raise DegenerateLayoutError(
            f"snapping m={m} to M={M} collapsed coarse gridlines: {breaks.tolist()}")
    return breaks


def layout_from_blocks(mesh, M, anchors_x=(), anchors_y=()):
    """Coarse layout with an explicit number of cells per side."""
    M = int(M)
    if M < 1:
        raise ValueError("need at least one coarse cell per side")
    if M > mesh.m:
        raise ValueError(f"coarse grid finer than fine grid (M={M} > m={mesh.m})")
    return CoarseLayout(M,
                        snap_breakpoints(mesh.m, M, anchors_x),
                        snap_breakpoints(mesh.m, M, anchors_y),
                        mesh)


def build_coarse_layout(mesh, k, alpha, anchors_x=(), anchors_y=()):
    """Coarse layout with M = ceil(k^alpha) cells per side, snapped to fine lines.

    Optional anchor gridlines (fine indices) are forced to be coarse
    breakpoints, used to make the coarse grid resolve a wave-speed interface.
    """
    if k <= 0:
        raise ValueError("wavenumber must be positive")
    return layout_from_blocks(mesh, ceil_snapped(k ** alpha), anchors_x, anchors_y)


@dataclass(frozen=True)
class WaveSpeedField:
    """Per-element wave speed c > 0; square scenarios carry the snapped square."""

    values: np.ndarray
    scenario: str
    c_star: float
    square: tuple = None  # physical (x0, x1, y0, y1) of the inner square

    def sample_on(self, mesh):
        """Re-evaluate the field on another mesh by element-centroid membership."""
        if self.square is None:
            return WaveSpeedField(np.ones(len(mesh.elements)), self.scenario, self.c_star)
        return WaveSpeedField(_square_values(mesh, self.square, self.c_star),
                              self.scenario, self.c_star, self.square)

    @property
    def is_constant(self):
        return self.square is None or self.c_star == 1.0


def _square_values(mesh, square, c_star):
    x0, x1, y0, y1 = square
    cen = mesh.element_centroids()
    inside = (cen[:, 0] > x0) & (cen[:, 0] < x1) & (cen[:, 1] > y0) & (cen[:, 1] < y1)
    return np.where(inside, c_star, 1.0)


def snapped_square_indices(mesh, offset=0):
    """Gridline indices of the side-1/3 centered square, snapped to the fine
    grid and optionally shifted north-west by `offset` fine cells."""
    lo = int(np.argmin(np.abs(mesh.xs - 1.0 / 3.0)))
    hi = int(np.argmin(np.abs(mesh.xs - 2.0 / 3.0)))
    off = int(offset)
    if off < 0:
        raise ValueError("offset must be nonnegative")
    ix0, ix1 = lo - off, hi - off   # west shift
    iy0, iy1 = lo + off, hi + off   # north shift
    if ix0 < 0 or iy1 > mesh.m:
        raise ValueError(f"offset {off} pushes the inner square outside the domain")
    return (ix0, ix1, iy0, iy1)


def build_wavespeed(mesh, scenario, c_star=1.0, offset=0):
    """Wave-speed field: constant 1, or c_star on a snapped inner square."""
    scenario = scenario.replace("-", "_")
    if scenario == "constant":
        return WaveSpeedField(np.ones(len(mesh.elements)), scenario, 1.0)
    if scenario not in ("centered_square", "shifted_square"):
        raise ValueError(f"unknown wave-speed scenario {scenario!r}")
    if c_star <= 0:
        raise ValueError("inner-square speed must be positive")
    if scenario == "centered_square" and offset != 0:
        raise ValueError("centered-square scenario takes no offset; use shifted-square")
    ix0, ix1, iy0, iy1 = snapped_square_indices(mesh, offset)
    square = (mesh.xs[ix0], mesh.xs[ix1], mesh.ys[iy0], mesh.ys[iy1])
    return WaveSpeedField(_square_values(mesh, square, c_star), scenario, c_star, square)


def dump_mesh(mesh, fobj):
    """Plain-text debug dump: `nodes` block of "index x y" lines, then
    `elements` block of "index n0 n1 n2" lines."""
    fobj.write("nodes\n")
    for i, (x, y) in enumerate(mesh.nodes):
        fobj.write(f"{i} {x:.17g} {y:.17g}\n")
    fobj.write("elements\n")
    for e, (a, b, c) in enumerate(mesh.elements):
        fobj.write(f"{e} {a} {b} {c}\n")
