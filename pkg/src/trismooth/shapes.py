"""Synthetic watertight test geometries.

Used by the test suite and the benchmark command; all generators return
outward-oriented SkeletonMesh objects.
"""

import numpy as np

from .mesh_io import SkeletonMesh, check_orientation


def _weld(vertices, triangles, decimals=9):
    scale = max(np.abs(vertices).max(), 1.0)
    key = np.round(vertices / scale, decimals)
    _, first, inverse = np.unique(key, axis=0, return_index=True,
                                  return_inverse=True)
    verts = vertices[first]
    tris = inverse[np.asarray(triangles)]
    return verts, tris


def _oriented(vertices, triangles):
    mesh = SkeletonMesh(vertices, triangles, validate=False)
    if check_orientation(mesh) < 0:
        mesh = mesh.flipped()
    mesh.validate()
    return mesh


def tetrahedron():
    v = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, -1.0],
                  [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
    t = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return _oriented(v, t)


def icosahedron(radius=1.0):
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
                  [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
                  [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]],
                 dtype=float)
    v *= radius / np.linalg.norm(v[0])
    t = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                  [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                  [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                  [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    return _oriented(v, t)


def icosphere(subdivisions=2, radius=1.0):
    """Regular sphere triangulation with 20 * 4^subdivisions triangles."""
    mesh = icosahedron(radius)
    verts = list(mesh.vertices)
    tris = mesh.triangles
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                p = 0.5 * (verts[a] + verts[b])
                p *= radius / np.linalg.norm(p)
                cache[key] = len(verts)
                verts.append(p)
            return cache[key]

        new_tris = []
        for (a, b, c) in tris:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_tris += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        tris = np.array(new_tris)
    return _oriented(np.array(verts), tris)


def hull_sphere(n_vertices=210, radius=1.0, seed=7):
    """Irregular sphere triangulation via the hull of quasi-uniform points.

    Produces 2 * n_vertices - 4 triangles of mildly varying size, similar
    to what general-purpose meshers emit.
    """
    from scipy.spatial import ConvexHull
    rng = np.random.default_rng(seed)
    i = np.arange(n_vertices)
    ga = np.pi * (3.0 - np.sqrt(5.0))
    z = 1.0 - 2.0 * (i + 0.5) / n_vertices
    r = np.sqrt(1.0 - z * z)
    pts = np.stack([r * np.cos(ga * i), r * np.sin(ga * i), z], axis=1)
    pts += rng.normal(0, 0.15 / np.sqrt(n_vertices), pts.shape)
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    hull = ConvexHull(pts * radius)
    tris = hull.simplices.copy()
    # qhull orients facets arbitrarily; flip each one outward
    p = hull.points[tris]
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    inward = np.einsum("ij,ij->i", nrm, p.mean(axis=1)) < 0
    tris[inward] = tris[inward][:, [0, 2, 1]]
    return _oriented(hull.points, tris)


def _grid_face(corner, eu, ev, nu, nv):
    """Vertices and triangles of a structured rectangle patch."""
    iu, iv = np.meshgrid(np.arange(nu + 1), np.arange(nv + 1), indexing="ij")
    verts = (corner[None, :] + iu.reshape(-1, 1) / nu * eu[None, :]
             + iv.reshape(-1, 1) / nv * ev[None, :])
    tris = []
    for i in range(nu):
        for j in range(nv):
            a = i * (nv + 1) + j
            b = (i + 1) * (nv + 1) + j
            tris += [[a, b, b + 1], [a, b + 1, a + 1]]
    return verts, np.array(tris)


def box(extents=(1.0, 1.0, 1.0), divisions=(1, 1, 1), origin=(0.0, 0.0, 0.0)):
    """Axis-aligned box with structured faces; 4*(nx*ny+ny*nz+nz*nx) triangles."""
    ex, ey, ez = extents
    nx, ny, nz = divisions
    o = np.asarray(origin, dtype=float)
    x = np.array([ex, 0, 0]); y = np.array([0, ey, 0]); z = np.array([0, 0, ez])
    faces = [
        (o, y, x, ny, nx),              # z = 0, outward -z
        (o + z, x, y, nx, ny),          # z = ez, outward +z
        (o, x, z, nx, nz),              # y = 0, outward -y
        (o + y, z, x, nz, nx),          # y = ey, outward +y
        (o, z, y, nz, ny),              # x = 0, outward -x
        (o + x, y, z, ny, nz),          # x = ex, outward +x
    ]
    all_v, all_t = [], []
    off = 0
    for corner, eu, ev, nu, nv in faces:
        v, t = _grid_face(corner, eu, ev, nu, nv)
        all_v.append(v)
        all_t.append(t + off)
        off += len(v)
    verts, tris = _weld(np.vstack(all_v), np.vstack(all_t))
    return _oriented(verts, tris)


def unit_cube():
    return box()


def rounded_cube(side=10.0, radius=1.0, n=22):
    """Cube with rounded edges/corners, tiled as a deformed cube-sphere.

    The surface is the offset of the inner box at distance ``radius``;
    cube-sphere grid directions are projected onto it, giving 12*n*n
    triangles of similar size.
    """
    mesh = box(divisions=(n, n, n))
    center = np.full(3, 0.5)
    d = mesh.vertices - center
    d /= np.linalg.norm(d, axis=1)[:, None]
    half = side / 2.0 - radius
    lo, hi = np.full(3, 1e-9), np.full(3, 10.0 * side)

    def offset_dist(dirs):
        t_lo = np.full(len(dirs), 1e-9)
        t_hi = np.full(len(dirs), 2.0 * side)
        for _ in range(80):
            t = 0.5 * (t_lo + t_hi)
            p = t[:, None] * dirs
            q = np.clip(p, -half, half)
            outside = np.linalg.norm(p - q, axis=1) > radius
            t_hi = np.where(outside, t, t_hi)
            t_lo = np.where(outside, t_lo, t)
        return 0.5 * (t_lo + t_hi)

    del lo, hi
    t = offset_dist(d)
    verts = center * 0 + d * t[:, None] + side / 2.0
    return _oriented(verts, mesh.triangles)


def thin_prism(side=4.0, thickness=0.6, refine=0):
    """Coarse triangular prism (~50 elements at refine=0).

    Thin relative to its element size, which makes the smoothed indicator
    wash out at the default kernel width.
    """
    k = 4 * (refine + 1)
    tri = np.array([[0.0, 0.0], [side, 0.0], [side / 2, side * np.sqrt(3) / 2]])

    def cap_mesh():
        verts, tris = [], []
        rows = [[]]
        for i in range(k + 1):
            for j in range(k - i + 1):
                b = np.array([1 - i / k - j / k, j / k, i / k])
                verts.append(b @ tri)
        idx = lambda i, j: sum(k + 1 - m for m in range(i)) + j
        for i in range(k):
            for j in range(k - i):
                tris.append([idx(i, j), idx(i, j + 1), idx(i + 1, j)])
                if j < k - i - 1:
                    tris.append([idx(i, j + 1), idx(i + 1, j + 1), idx(i + 1, j)])
        return np.array(verts), np.array(tris)

    cv, ct = cap_mesh()
    nz = max(1, refine + 1)
    bottom = np.column_stack([cv, np.zeros(len(cv))])
    top = np.column_stack([cv, np.full(len(cv), thickness)])
    verts = [bottom, top]
    tris = [ct[:, ::-1], ct + len(cv)]
    off = 2 * len(cv)
    # three side strips
    edges = []
    for c0, c1 in ((0, 1), (1, 2), (2, 0)):
        b0, b1 = tri[c0], tri[c1]
        pts2d = np.array([b0 + (b1 - b0) * s / k for s in range(k + 1)])
        v, t = _grid_face(np.array([0.0, 0.0, 0.0]), np.array([1.0, 0, 0]),
                          np.array([0, 0.0, 1.0]), k, nz)
        v = np.column_stack([
            np.repeat(pts2d[:, 0], nz + 1), np.repeat(pts2d[:, 1], nz + 1),
            np.tile(np.linspace(0, thickness, nz + 1), k + 1)])
        verts.append(v)
        tris.append(t + off)
        off += len(v)
    vv, tt = _weld(np.vstack(verts), np.vstack(tris))
    return _oriented(vv, tt)


def quadratic_sphere(subdivisions=1, radius=1.0):
    """Quadratic (6-node) sphere mesh with mid-edge nodes on the sphere."""
    lin = icosphere(subdivisions, radius)
    verts = list(lin.vertices)
    cache = {}

    def midnode(a, b):
        key = (min(a, b), max(a, b))
        if key not in cache:
            p = 0.5 * (verts[a] + verts[b])
            p *= radius / np.linalg.norm(p)
            cache[key] = len(verts)
            verts.append(p)
        return cache[key]

    tris6 = []
    for (a, b, c) in lin.triangles:
        tris6.append([a, b, c, midnode(a, b), midnode(b, c), midnode(c, a)])
    return SkeletonMesh(np.array(verts), np.array(tris6))


def quadratic_torus(n_major=12, n_minor=8, R=2.0, r=0.7):
    """Quadratic torus; exact torus points at all 6 nodes of each patch."""
    nu, nv = 2 * n_major, 2 * n_minor

    def point(iu, iv):
        a = 2 * np.pi * iu / nu
        b = 2 * np.pi * iv / nv
        return np.array([(R + r * np.cos(b)) * np.cos(a),
                         (R + r * np.cos(b)) * np.sin(a),
                         r * np.sin(b)])

    verts = np.array([point(i, j) for i in range(nu) for j in range(nv)])
    vid = lambda i, j: (i % nu) * nv + (j % nv)
    tris6 = []
    for i in range(0, nu, 2):
        for j in range(0, nv, 2):
            c = [(i, j), (i + 2, j), (i + 2, j + 2)]
            for corners in ([(i, j), (i + 2, j), (i + 2, j + 2)],
                            [(i, j), (i + 2, j + 2), (i, j + 2)]):
                (a0, a1), (b0, b1), (c0, c1) = corners
                m01 = ((a0 + b0) // 2, (a1 + b1) // 2)
                m12 = ((b0 + c0) // 2, (b1 + c1) // 2)
                m20 = ((c0 + a0) // 2, (c1 + a1) // 2)
                tris6.append([vid(*corners[0]), vid(*corners[1]),
                              vid(*corners[2]), vid(*m01), vid(*m12),
                              vid(*m20)])
    mesh = SkeletonMesh(verts, np.array(tris6), validate=False)
    if check_orientation(mesh) < 0:
        mesh = mesh.flipped()
    mesh.validate()
    return mesh
