"""Read, validate, and write skeleton meshes and smoothed output surfaces.

Input skeletons are watertight oriented triangulations, either linear
(3 vertex indices per element) or quadratic (6 indices, Gmsh type-9 node
order: corners 1,2,3 then mid-edge nodes on (1,2), (2,3), (3,1)).
Supported inputs: OFF, OBJ (triangles only), and a Gmsh v2 ASCII subset
with element types 2 and 9.  Smoothed surfaces are written either as
legacy-ASCII VTK unstructured grids (flat facets at node resolution) or
as a lossless JSON chart archive.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshParseError(ValueError):
    """Malformed mesh file."""


class MeshValidationError(ValueError):
    """Mesh violates a structural invariant; offending elements attached."""

    def __init__(self, message, elements=None):
        super().__init__(message)
        self.elements = list(elements) if elements is not None else []


class SkeletonMesh:
    """A watertight oriented triangulation (the input skeleton surface).

    Parameters
    ----------
    vertices : array_like
        (n, 3) float coordinates.
    triangles : array_like
        (m, 3) int vertex indices for linear elements, or (m, 6) for
        quadratic elements (3 corners, then mid-edge nodes opposite the
        corner pairs (1,2), (2,3), (3,1)).
    validate : bool
        Run structural validation (watertight, consistently oriented,
        non-degenerate) on construction.
    mode : str
        "strict" requires a conforming mesh; "relaxed" additionally
        accepts hanging mid-edge vertices produced by partial 4-way
        refinement, as long as every parent edge is still fully matched
        by the opposite side.
    """

    def __init__(self, vertices, triangles, validate=True, mode="strict"):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshParseError("vertices must be an (n, 3) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] not in (3, 6):
            raise MeshParseError("triangles must be (m, 3) or (m, 6)")
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise MeshParseError("triangle index out of range")
        if validate:
            self.validate(mode=mode)

    @property
    def is_quadratic(self):
        return self.triangles.shape[1] == 6

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def corners(self):
        """(m, 3) corner indices (identity for linear meshes)."""
        return self.triangles[:, :3]

    def bbox_diagonal(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def corner_points(self):
        """(m, 3, 3) corner coordinates."""
        return self.vertices[self.corners]

    def areas(self):
        """Flat areas of the corner triangles."""
        p = self.corner_points()
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(n, axis=1)

    def directed_edges(self):
        """(3m, 2) corner edges in traversal order (1->2, 2->3, 3->1)."""
        c = self.corners
        return np.concatenate([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]])

    def flipped(self):
        """Copy with reversed orientation (and matching mid-node order)."""
        t = self.triangles.copy()
        t[:, [1, 2]] = t[:, [2, 1]]
        if self.is_quadratic:
            # edges (1,2),(2,3),(3,1) become (1,3),(3,2),(2,1)
            t[:, [3, 4, 5]] = self.triangles[:, [5, 4, 3]]
        return SkeletonMesh(self.vertices, t, validate=False)

    def validate(self, mode="strict"):
        degenerate = np.nonzero(
            self.areas() <= 1e-14 * self.bbox_diagonal() ** 2)[0]
        if len(degenerate):
            raise MeshValidationError(
                f"degenerate triangles (area below tolerance): "
                f"{degenerate.tolist()[:20]}", degenerate)
        edges = self.directed_edges()
        m = self.n_triangles
        owner = np.tile(np.arange(m), 3)
        seen = {}
        bad = set()
        unmatched = {}
        for (a, b), tri in zip(map(tuple, edges), owner):
            if (a, b) in seen:
                bad.add(tri)
                bad.add(seen[(a, b)])
            seen[(a, b)] = tri
            if (b, a) in unmatched:
                unmatched.pop((b, a))
            else:
                unmatched[(a, b)] = tri
        if bad:
            raise MeshValidationError(
                "inconsistent orientation: directed edge repeated in "
                f"triangles {sorted(bad)[:20]}", sorted(bad))
        if unmatched and mode == "relaxed":
            unmatched = self._match_hanging(unmatched)
        if unmatched:
            tris = sorted(set(unmatched.values()))
            raise MeshValidationError(
                f"mesh is not watertight: {len(unmatched)} unmatched edges, "
                f"e.g. in triangles {tris[:20]}", tris)
        if self.is_quadratic:
            self._validate_quadratic_conformity()
        return self

    def _match_hanging(self, unmatched):
        """Cancel edge (a,b) against the split pair (b,m),(m,a) recursively."""
        scale = max(self.bbox_diagonal(), 1.0)
        coord_key = {tuple(np.round(v / scale, 12)): i
                     for i, v in enumerate(self.vertices)}

        def resolvable(a, b, depth=0):
            if depth > 8:
                return False
            mid = 0.5 * (self.vertices[a] + self.vertices[b]) / scale
            m = coord_key.get(tuple(np.round(mid, 12)))
            if m is None:
                return False
            for half in ((b, m), (m, a)):
                if half in unmatched:
                    unmatched.pop(half)
                elif not resolvable(*half, depth + 1):
                    return False
            return True

        for edge in sorted(unmatched, key=lambda e: -self._edge_len(e)):
            if edge in unmatched and resolvable(*edge):
                unmatched.pop(edge)
        return unmatched

    def _edge_len(self, edge):
        return float(np.linalg.norm(self.vertices[edge[0]] - self.vertices[edge[1]]))

    def _validate_quadratic_conformity(self):
        mid = {}
        bad = []
        for t, tri in enumerate(self.triangles):
            for (i, j, k) in ((0, 1, 3), (1, 2, 4), (2, 0, 5)):
                key = (min(tri[i], tri[j]), max(tri[i], tri[j]))
                if key in mid and mid[key] != tri[k]:
                    bad.append(t)
                mid[key] = tri[k]
        if bad:
            raise MeshValidationError(
                f"quadratic mid-edge nodes disagree across shared edges: "
                f"triangles {bad[:20]}", bad)


def check_orientation(mesh):
    """Signed volume enclosed by the mesh (positive iff normals point out).

    Uses the divergence theorem with F = x/3; exact for linear elements
    and integrated with a degree-4-exact rule for quadratic ones.
    """
    if not mesh.is_quadratic:
        p = mesh.corner_points()
        return float(np.einsum("ij,ij->", np.cross(p[:, 0], p[:, 1]), p[:, 2]) / 6.0)
    from .simplex_basis import rule
    from .skeleton import TriangleGeometry
    geo = TriangleGeometry(mesh)
    r = rule(2)  # exactness >= 4 integrates x . (T_u x T_v) exactly
    pts, tu, tv = geo.map_points(r.nodes)
    nrm = np.cross(tu, tv)
    return float(np.einsum("k,mk->", r.weights,
                           np.einsum("mki,mki->mk", pts, nrm)) / 3.0)


def read_mesh(path, fmt=None, validate=True):
    """Read a skeleton mesh from OFF, OBJ, or Gmsh v2 (.msh).

    The format is inferred from the suffix unless given explicitly
    ("off", "obj", "msh").
    """
    path = Path(path)
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    text = path.read_text()
    if fmt == "off":
        verts, tris = _parse_off(text)
    elif fmt == "obj":
        verts, tris = _parse_obj(text)
    elif fmt in ("msh", "gmsh"):
        verts, tris = _parse_msh(text)
    else:
        raise MeshParseError(f"unsupported mesh format: {fmt!r}")
    return SkeletonMesh(verts, tris, validate=validate)


def _data_lines(text):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def _parse_off(text):
    lines = _data_lines(text)
    try:
        header = next(lines)
        if header.upper() != "OFF":
            raise MeshParseError("missing OFF header")
        nv, nf, _ = (int(t) for t in next(lines).split()[:3])
        verts = np.array([[float(t) for t in next(lines).split()[:3]]
                          for _ in range(nv)])
        tris = []
        for _ in range(nf):
            toks = next(lines).split()
            cnt = int(toks[0])
            if cnt != 3:
                raise MeshParseError(f"OFF face with {cnt} vertices; "
                                     "only triangles are supported")
            tris.append([int(t) for t in toks[1:4]])
    except StopIteration:
        raise MeshParseError("truncated OFF file") from None
    return verts, np.array(tris, dtype=np.int64)


def _parse_obj(text):
    verts, tris = [], []
    for ln, line in enumerate(text.splitlines(), 1):
        toks = line.split()
        if not toks or toks[0].startswith("#"):
            continue
        if toks[0] == "v":
            verts.append([float(t) for t in toks[1:4]])
        elif toks[0] == "f":
            idx = [int(t.split("/")[0]) for t in toks[1:]]
            if len(idx) != 3:
                raise MeshParseError(
                    f"line {ln}: face with {len(idx)} vertices; OBJ quads and "
                    "polygons are rejected (split them upstream, which changes "
                    "the element size field)")
            tris.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    if not verts or not tris:
        raise MeshParseError("OBJ file contains no triangles")
    return np.array(verts), np.array(tris, dtype=np.int64)


def _parse_msh(text):
    lines = text.splitlines()
    try:
        inode = lines.index("$Nodes")
        ielem = lines.index("$Elements")
    except ValueError:
        raise MeshParseError("missing $Nodes or $Elements section") from None
    nn = int(lines[inode + 1])
    ids = np.empty(nn, dtype=np.int64)
    verts = np.empty((nn, 3))
    for i in range(nn):
        toks = lines[inode + 2 + i].split()
        ids[i] = int(toks[0])
        verts[i] = [float(t) for t in toks[1:4]]
    remap = {int(g): i for i, g in enumerate(ids)}
    ne = int(lines[ielem + 1])
    tris = []
    etypes = set()
    for i in range(ne):
        toks = lines[ielem + 2 + i].split()
        etype = int(toks[1])
        ntags = int(toks[2])
        conn = [remap[int(t)] for t in toks[3 + ntags:]]
        if etype == 2:
            etypes.add(3)
            tris.append(conn[:3])
        elif etype == 9:
            etypes.add(6)
            tris.append(conn[:6])
        elif etype in (1, 15):
            continue  # points and lines carry no surface
        else:
            raise MeshParseError(f"unsupported Gmsh element type {etype}")
    if len(etypes) > 1:
        raise MeshParseError("mixed linear and quadratic triangles")
    if not tris:
        raise MeshParseError("no surface triangles in file")
    return verts, np.array(tris, dtype=np.int64)


@dataclass
class HighOrderSurface:
    """A piecewise-polynomial surface: one degree-p chart per skeleton triangle.

    points holds the chart samples at the order-p node set; coeffs holds the
    orthonormal-basis coefficients of each coordinate, per patch.
    """

    order: int
    nodes: np.ndarray                  # (n_p, 2) parameters on T0
    points: np.ndarray                 # (m, n_p, 3)
    coeffs: np.ndarray                 # (m, n_p, 3)
    normals: np.ndarray = None         # (m, n_p, 3), optional
    area_elements: np.ndarray = None   # (m, n_p), optional
    first_derivs: np.ndarray = None    # (m, n_p, 2, 3): x_u, x_v, optional
    metadata: dict = field(default_factory=dict)

    @property
    def n_patches(self):
        return self.points.shape[0]


def write_surface(surface, path, fmt=None):
    """Write a surface as legacy-ASCII VTK ("vtk") or JSON archive ("json")."""
    path = Path(path)
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    if fmt == "vtk":
        _write_vtk(surface, path)
    elif fmt == "json":
        path.write_text(json.dumps(_surface_to_dict(surface)))
    else:
        raise ValueError(f"unsupported surface format: {fmt!r}")


def _facet_cells(nodes):
    if len(nodes) == 3:
        return np.array([[0, 1, 2]])
    from scipy.spatial import Delaunay
    return Delaunay(nodes).simplices


def _write_vtk(surface, path):
    pts = surface.points.reshape(-1, 3)
    local = _facet_cells(surface.nodes)
    n_p = surface.points.shape[1]
    cells = (local[None, :, :] + n_p * np.arange(surface.n_patches)[:, None, None]
             ).reshape(-1, 3)
    with open(path, "w") as fp:
        fp.write("# vtk DataFile Version 2.0\n")
        fp.write("smoothed high-order surface (flat facets at node resolution)\n")
        fp.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fp.write(f"POINTS {len(pts)} double\n")
        for p in pts:
            fp.write(f"{p[0]:.16e} {p[1]:.16e} {p[2]:.16e}\n")
        fp.write(f"CELLS {len(cells)} {4 * len(cells)}\n")
        for c in cells:
            fp.write(f"3 {c[0]} {c[1]} {c[2]}\n")
        fp.write(f"CELL_TYPES {len(cells)}\n")
        fp.write("\n".join(["5"] * len(cells)) + "\n")


def _surface_to_dict(surface):
    d = {
        "format_version": 1,
        "order": surface.order,
        "nodes": surface.nodes.tolist(),
        "points": surface.points.tolist(),
        "coeffs": surface.coeffs.tolist(),
        "metadata": surface.metadata,
    }
    for name in ("normals", "area_elements", "first_derivs"):
        val = getattr(surface, name)
        if val is not None:
            d[name] = val.tolist()
    return d


def read_surface(path):
    """Read a JSON chart archive written by write_surface."""
    d = json.loads(Path(path).read_text())
    if d.get("format_version") != 1:
        raise ValueError(f"unknown archive format_version {d.get('format_version')}")
    kwargs = {}
    for name in ("normals", "area_elements", "first_derivs"):
        if name in d:
            kwargs[name] = np.array(d[name])
    return HighOrderSurface(
        order=d["order"], nodes=np.array(d["nodes"]), points=np.array(d["points"]),
        coeffs=np.array(d["coeffs"]), metadata=d.get("metadata", {}), **kwargs)
