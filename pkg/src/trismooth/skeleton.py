"""Per-triangle parametrization and the continuous pseudonormal field.

Each skeleton triangle j is a map T^j(u, v) from the standard simplex T0:
affine for linear elements, the 6-node quadratic Lagrange map otherwise.
The mapping direction used to reach the smoothed surface is the
pseudonormal field: angle-weighted averages of the incident unit normals
at each vertex, blended linearly over every triangle, which makes the
field continuous across edges (plain triangle normals are not).
"""

import logging

import numpy as np

logger = logging.getLogger(__name__)


def _quadratic_shape(u, v):
    """6-node Lagrange shape functions and derivatives at (u, v) arrays."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    l1 = 1.0 - u - v
    n = np.stack([l1 * (2 * l1 - 1), u * (2 * u - 1), v * (2 * v - 1),
                  4 * l1 * u, 4 * u * v, 4 * v * l1], axis=-1)
    du = np.stack([1 - 4 * l1, 4 * u - 1, np.zeros_like(u),
                   4 * (l1 - u), 4 * v, -4 * v], axis=-1)
    dv = np.stack([1 - 4 * l1, np.zeros_like(u), 4 * v - 1,
                   -4 * u, 4 * u, 4 * (l1 - v)], axis=-1)
    return n, du, dv


# constant second derivatives of the 6 quadratic shape functions
_QUAD_DUU = np.array([4.0, 4.0, 0.0, -8.0, 0.0, 0.0])
_QUAD_DUV = np.array([4.0, 0.0, 0.0, -4.0, 4.0, -4.0])
_QUAD_DVV = np.array([4.0, 0.0, 4.0, 0.0, 0.0, -8.0])


class TriangleGeometry:
    """Vectorized chart data for every triangle of a skeleton mesh."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.node_points = mesh.vertices[mesh.triangles]   # (m, 3 or 6, 3)
        if not mesh.is_quadratic:
            p = self.node_points
            self.t_u = p[:, 1] - p[:, 0]
            self.t_v = p[:, 2] - p[:, 0]

    def map_points(self, uv):
        """Map parameters (k, 2) through every chart.

        Returns (points, t_u, t_v), each of shape (m, k, 3).
        """
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        u, v = uv[:, 0], uv[:, 1]
        p = self.node_points
        if not self.mesh.is_quadratic:
            pts = (p[:, None, 0]
                   + u[None, :, None] * self.t_u[:, None]
                   + v[None, :, None] * self.t_v[:, None])
            k = len(u)
            return (pts, np.broadcast_to(self.t_u[:, None], pts.shape),
                    np.broadcast_to(self.t_v[:, None], pts.shape))
        n, du, dv = _quadratic_shape(u, v)
        pts = np.einsum("kn,mni->mki", n, p)
        return pts, np.einsum("kn,mni->mki", du, p), np.einsum("kn,mni->mki", dv, p)

    def second_partials(self):
        """Constant (T_uu, T_uv, T_vv) per triangle, each (m, 3)."""
        m = self.mesh.n_triangles
        if not self.mesh.is_quadratic:
            z = np.zeros((m, 3))
            return z, z.copy(), z.copy()
        p = self.node_points
        return (np.einsum("n,mni->mi", _QUAD_DUU, p),
                np.einsum("n,mni->mi", _QUAD_DUV, p),
                np.einsum("n,mni->mi", _QUAD_DVV, p))

    def corner_tangents(self):
        """Parametric tangents (t_u, t_v) at the 3 corners, each (m, 3, 3)."""
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        _, tu, tv = self.map_points(corners)
        return tu, tv

    def centroids(self):
        """Chart image of the barycenter of T0, shape (m, 3)."""
        pts, _, _ = self.map_points(np.array([[1 / 3, 1 / 3]]))
        return pts[:, 0]

    def diameters(self):
        """Diameter of the smallest ball enclosing each element's nodes."""
        if not self.mesh.is_quadratic:
            return _triangle_ball_diameters(self.node_points)
        return np.array([_miniball_diameter(p) for p in self.node_points])

    def flat_normals(self):
        """Unit normals and doubled areas of the corner triangles."""
        p = self.node_points
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        norms = np.linalg.norm(n, axis=1)
        return n / norms[:, None], norms


def _triangle_ball_diameters(p):
    d23 = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    d13 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    d12 = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    sides = np.sort(np.stack([d23, d13, d12], axis=1), axis=1)
    longest = sides[:, 2]
    obtuse = longest ** 2 >= sides[:, 0] ** 2 + sides[:, 1] ** 2
    area = 0.5 * np.linalg.norm(
        np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    circum = d12 * d13 * d23 / (2.0 * np.maximum(area, 1e-300))
    return np.where(obtuse, longest, circum)


def _ball_from_support(pts):
    """Exact smallest ball with all of pts (1..4 points) on its boundary."""
    pts = np.asarray(pts)
    k = len(pts)
    if k == 0:
        return np.zeros(3), -1.0
    if k == 1:
        return pts[0], 0.0
    if k == 2:
        c = 0.5 * (pts[0] + pts[1])
        return c, np.linalg.norm(pts[0] - c)
    # circumcenter of 3 or 4 points via the linear system |x-p_i| = |x-p_0|
    a = 2.0 * (pts[1:] - pts[0])
    b = np.einsum("ij,ij->i", pts[1:], pts[1:]) - pts[0] @ pts[0]
    if k == 3:
        nrm = np.cross(pts[1] - pts[0], pts[2] - pts[0])
        a = np.vstack([a, nrm])
        b = np.append(b, nrm @ pts[0])
    try:
        c = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        return pts.mean(axis=0), max(np.linalg.norm(pts - pts.mean(axis=0),
                                                    axis=1))
    return c, np.linalg.norm(pts[0] - c)


def _welzl(pts, support):
    if len(pts) == 0 or len(support) == 4:
        return _ball_from_support(np.array(support) if support else [])
    p = pts[0]
    c, r = _welzl(pts[1:], support)
    if np.linalg.norm(p - c) <= r * (1 + 1e-12):
        return c, r
    return _welzl(pts[1:], support + [p])


def _miniball_diameter(pts):
    c, r = _welzl(list(pts), [])
    return 2.0 * r


def vertex_angle(mesh, triangle, vertex):
    """Interior angle of one triangle at one of its corner vertices.

    For quadratic elements this is the angle between the parametric edge
    tangents at the corner.
    """
    tri = mesh.triangles[triangle]
    corners = list(tri[:3])
    if vertex not in corners:
        raise ValueError(f"vertex {vertex} is not a corner of triangle {triangle}")
    local = corners.index(vertex)
    geo = TriangleGeometry(mesh)
    tu, tv = geo.corner_tangents()
    tu, tv = tu[triangle], tv[triangle]
    if local == 0:
        d1, d2 = tu[0], tv[0]
    elif local == 1:
        d1, d2 = -tu[1], tv[1] - tu[1]
    else:
        d1, d2 = -tv[2], tu[2] - tv[2]
    cosang = d1 @ d2 / (np.linalg.norm(d1) * np.linalg.norm(d2))
    return float(np.arccos(np.clip(cosang, -1.0, 1.0)))


class PseudonormalField:
    """Angle-weighted vertex pseudonormals, blended linearly per triangle.

    The per-vertex vector is sum(theta_T * unit_normal_T) / sum(theta_T)
    over incident triangles; it is left unnormalized.  The blend over a
    triangle agrees along shared edges with the neighbor's blend, so the
    field is continuous on the whole skeleton.
    """

    def __init__(self, mesh, geometry=None):
        self.mesh = mesh
        geo = geometry if geometry is not None else TriangleGeometry(mesh)
        self.geometry = geo
        m = mesh.n_triangles
        tu, tv = geo.corner_tangents()
        nrm = np.cross(tu, tv)
        nrm /= np.linalg.norm(nrm, axis=2)[:, :, None]
        # interior angles at the three corners
        e1, e2, e3 = (np.stack([tu[:, 0], tv[:, 0]], axis=1),
                      np.stack([-tu[:, 1], tv[:, 1] - tu[:, 1]], axis=1),
                      np.stack([-tv[:, 2], tu[:, 2] - tv[:, 2]], axis=1))
        angles = np.empty((m, 3))
        for c, pair in enumerate((e1, e2, e3)):
            d1, d2 = pair[:, 0], pair[:, 1]
            ca = np.einsum("ij,ij->i", d1, d2) / (
                np.linalg.norm(d1, axis=1) * np.linalg.norm(d2, axis=1))
            angles[:, c] = np.arccos(np.clip(ca, -1.0, 1.0))
        corners = mesh.corners
        wsum = np.zeros(mesh.n_vertices)
        vsum = np.zeros((mesh.n_vertices, 3))
        np.add.at(wsum, corners.ravel(), angles.ravel())
        np.add.at(vsum, corners.ravel(),
                  nrm.reshape(-1, 3) * angles.ravel()[:, None])
        used = wsum > 0
        self.vertex_values = np.zeros_like(vsum)
        self.vertex_values[used] = vsum[used] / wsum[used, None]
        self.total_angle = wsum
        small = used & (np.linalg.norm(self.vertex_values, axis=1) < 0.1)
        if np.any(small):
            logger.warning(
                "%d vertex pseudonormals have norm < 0.1 (nearly canceling "
                "normals; extreme fold in the skeleton)", int(small.sum()))
        self.corner_values = self.vertex_values[corners]   # (m, 3, 3)

    def vertex_pseudonormal(self, vertex):
        if self.total_angle[vertex] == 0:
            raise ValueError(f"vertex {vertex} has no incident triangles")
        return self.vertex_values[vertex]

    def at(self, uv):
        """Blend at parameters (k, 2) for every triangle: (m, k, 3)."""
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        h1 = self.corner_values[:, None, 0]
        h2 = self.corner_values[:, None, 1]
        h3 = self.corner_values[:, None, 2]
        u = uv[None, :, 0, None]
        v = uv[None, :, 1, None]
        return h1 + u * (h2 - h1) + v * (h3 - h1)

    def partials(self):
        """Constant blend derivatives (H_u, H_v) per triangle, each (m, 3)."""
        return (self.corner_values[:, 1] - self.corner_values[:, 0],
                self.corner_values[:, 2] - self.corner_values[:, 0])


def vertex_pseudonormal(mesh, vertex):
    """Angle-weighted pseudonormal at one vertex (unnormalized)."""
    return PseudonormalField(mesh).vertex_pseudonormal(vertex)


def pseudonormal_at(mesh, triangle, u, v):
    """Blended pseudonormal of one triangle at (u, v)."""
    field = mesh._pseudonormal_cache if hasattr(mesh, "_pseudonormal_cache") \
        else PseudonormalField(mesh)
    return field.at(np.array([[u, v]]))[triangle, 0]
