"""Structured triangulations of axis-aligned rectangles."""

from dataclasses import dataclass

import numpy as np

DIRICHLET = "D"
SLIP = "S"
SIDES = ("left", "right", "bottom", "top")
SIDE_NORMALS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
}


class MeshError(ValueError):
    pass


def _normalize_tag(tag):
    t = str(tag).strip().lower()
    if t in ("d", "dirichlet"):
        return DIRICHLET
    if t in ("s", "slip"):
        return SLIP
    raise MeshError(f"unknown boundary tag {tag!r} (expected Dirichlet or Slip)")


@dataclass(frozen=True)
class BoundarySpec:
    left: str = DIRICHLET
    right: str = DIRICHLET
    bottom: str = SLIP
    top: str = DIRICHLET

    def __post_init__(self):
        for side in SIDES:
            object.__setattr__(self, side, _normalize_tag(getattr(self, side)))

    def tag(self, side):
        return getattr(self, side)

    def validate(self):
        tags = {self.tag(s) for s in SIDES}
        if DIRICHLET not in tags:
            raise MeshError("boundary spec needs at least one Dirichlet side (|Gamma_D| > 0)")
        if SLIP not in tags:
            raise MeshError("boundary spec needs at least one Slip side")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with tagged boundary edges.

    ``boundary_edges`` holds vertex pairs oriented counterclockwise along the
    outer boundary; ``edge_tags``, ``edge_normals`` and ``edge_sides`` are
    aligned with it.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: tuple
    edge_normals: np.ndarray
    edge_sides: tuple
    Lx: float
    Ly: float

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self):
        return float(np.sum(self.signed_areas()))

    def edge_lengths(self):
        d = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def h_max(self):
        p = self.vertices[self.triangles]
        lens = [np.hypot(*(p[:, (i + 1) % 3] - p[:, i]).T) for i in range(3)]
        return float(np.max(lens))

    def tagged_length(self, tag):
        mask = np.array([t == tag for t in self.edge_tags])
        return float(self.edge_lengths()[mask].sum())


def build_rect_mesh(nx, ny, Lx=1.0, Ly=1.0, spec=None, strict=True):
    """Uniform ``nx`` x ``ny`` grid of ``[0,Lx]x[0,Ly]``, each cell split along
    its lower-left to upper-right diagonal."""
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be >= 1")
    if not (Lx > 0 and Ly > 0):
        raise MeshError("Lx and Ly must be positive")
    spec = BoundarySpec() if spec is None else spec
    if strict:
        spec.validate()
    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            v00, v10, v11, v01 = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    triangles = np.array(tris, dtype=np.int64)

    edges, sides = [], []
    for i in range(nx):
        edges.append((vid(i, 0), vid(i + 1, 0)))
        sides.append("bottom")
    for j in range(ny):
        edges.append((vid(nx, j), vid(nx, j + 1)))
        sides.append("right")
    for i in range(nx, 0, -1):
        edges.append((vid(i, ny), vid(i - 1, ny)))
        sides.append("top")
    for j in range(ny, 0, -1):
        edges.append((vid(0, j), vid(0, j - 1)))
        sides.append("left")
    return Mesh(
        vertices=vertices,
        triangles=triangles,
        boundary_edges=np.array(edges, dtype=np.int64),
        edge_tags=tuple(spec.tag(s) for s in sides),
        edge_normals=np.array([SIDE_NORMALS[s] for s in sides]),
        edge_sides=tuple(sides),
        Lx=float(Lx),
        Ly=float(Ly),
    )


def refine_uniform(m):
    """Split every triangle into four congruent children via edge midpoints."""
    vertices = list(m.vertices)
    midpoint = {}

    def mid(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in midpoint:
            midpoint[key] = len(vertices)
            vertices.append(0.5 * (m.vertices[a] + m.vertices[b]))
        return midpoint[key]

    tris = []
    for a, b, c in m.triangles:
        a, b, c = int(a), int(b), int(c)
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        tris.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])

    edges, tags, normals, sides = [], [], [], []
    for (a, b), tag, nrm, side in zip(m.boundary_edges, m.edge_tags, m.edge_normals, m.edge_sides):
        c = mid(int(a), int(b))
        edges.extend([(int(a), c), (c, int(b))])
        tags.extend([tag, tag])
        normals.extend([nrm, nrm])
        sides.extend([side, side])
    return Mesh(
        vertices=np.array(vertices),
        triangles=np.array(tris, dtype=np.int64),
        boundary_edges=np.array(edges, dtype=np.int64),
        edge_tags=tuple(tags),
        edge_normals=np.array(normals),
        edge_sides=tuple(sides),
        Lx=m.Lx,
        Ly=m.Ly,
    )


def owning_triangles(m):
    """Map each boundary edge to the indices of triangles containing it."""
    owners = {}
    for t, tri in enumerate(m.triangles):
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            owners.setdefault((min(a, b), max(a, b)), []).append(t)
    return [owners.get((min(a, b), max(a, b)), []) for a, b in m.boundary_edges]


def write_vtk(m, path, point_data=None, title="stokes-hvi mesh"):
    """Legacy ASCII VTK 3.0 unstructured grid of the triangulation.

    ``point_data`` maps names to arrays over vertices, shape ``(nv,)`` for
    scalars or ``(nv, 2)`` for vectors (padded with a zero z-component).
    """
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {m.n_vertices} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in m.vertices]
    lines.append(f"CELLS {m.n_triangles} {4 * m.n_triangles}")
    lines += [f"3 {a} {b} {c}" for a, b, c in m.triangles]
    lines.append(f"CELL_TYPES {m.n_triangles}")
    lines += ["5"] * m.n_triangles
    if point_data:
        lines.append(f"POINT_DATA {m.n_vertices}")
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [f"{v:.17g}" for v in arr]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{a:.17g} {b:.17g} 0" for a, b in arr[:, :2]]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
