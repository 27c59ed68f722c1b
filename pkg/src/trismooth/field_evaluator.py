"""Evaluate the smoothed volume indicator and its derivatives anywhere.

The indicator is a discrete boundary sum over quadrature sources placed
on the skeleton: each target x receives

    Phi(x) = sum_s w_s psi(x, y_s, n_s, sigma(x)),

where psi is the mollified dipole kernel.  Two paths are provided: a
direct O(N M) sum (the reference), and a tree path that sums sources
beyond ``near_factor * sigma(x)`` through Cartesian multipole expansions
of the plain harmonic dipole, which is what psi becomes out there.  The
near field always uses the full kernel, so the only fast-path error is
multipole truncation, controlled by ``tol``.
"""

import numpy as np

from . import _treecode as tc
from .simplex_basis import rule
from .skeleton import TriangleGeometry

DEFAULT_LEAF_SIZE = 160
DEFAULT_THETA = 0.45
DEFAULT_P_MAX = 20
TOL_FLOOR = 1e-12


class SourceSet:
    """Flattened quadrature sources on the skeleton surface."""

    def __init__(self, points, normals, weights, triangle_index, sigma_j):
        self.points = np.ascontiguousarray(points)
        self.normals = np.ascontiguousarray(normals)
        self.weights = np.ascontiguousarray(weights)
        self.triangle_index = np.asarray(triangle_index)
        self.sigma_j = np.asarray(sigma_j)

    @property
    def n_sources(self):
        return len(self.weights)

    def total_weight(self):
        return float(self.weights.sum())


def build_sources(mesh, rule_q, sigma_field=None, geometry=None):
    """Quadrature sources of one rule order over every skeleton triangle.

    rule_q may be an integer order or a SimplexRule.  The combined weight
    of each source is w_k * |T_u x T_v|, so weights sum to the skeleton
    area exactly for linear elements.
    """
    if isinstance(rule_q, int):
        rule_q = rule(rule_q)
    geo = geometry if geometry is not None else TriangleGeometry(mesh)
    pts, tu, tv = geo.map_points(rule_q.nodes)
    nrm = np.cross(tu, tv)
    jac = np.linalg.norm(nrm, axis=2)
    nrm = nrm / jac[:, :, None]
    w = rule_q.weights[None, :] * jac
    m, k = w.shape
    tri_index = np.repeat(np.arange(m), k)
    sigma_j = (sigma_field.sigma_j[tri_index] if sigma_field is not None
               else np.zeros(m * k))
    return SourceSet(pts.reshape(-1, 3), nrm.reshape(-1, 3), w.reshape(-1),
                     tri_index, sigma_j)


class OctreeIndex:
    """Adaptive octree over source points with per-box multipole moments.

    Sources are permuted so every box owns a contiguous range; moments are
    Cartesian dipole-moment tensors about each box center, scaled by the
    box radius for conditioning.
    """

    def __init__(self, points, leaf_size=DEFAULT_LEAF_SIZE):
        points = np.asarray(points)
        n = len(points)
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        center = 0.5 * (lo + hi)
        half = 0.5 * float((hi - lo).max()) * 1.000001 + 1e-300
        centers, halves, starts, ends, children, leaf = [], [], [], [], [], []
        perm = np.empty(n, dtype=np.int64)
        offset = 0

        def split(idx, c, h, depth):
            nonlocal offset
            b = len(centers)
            centers.append(c)
            halves.append(h)
            starts.append(offset)
            children.append([-1] * 8)
            if len(idx) <= leaf_size or depth >= 24:
                perm[offset:offset + len(idx)] = idx
                offset += len(idx)
                ends.append(offset)
                leaf.append(True)
                return b
            leaf.append(False)
            ends.append(-1)
            p = points[idx]
            oct_id = ((p[:, 0] > c[0]).astype(np.int8)
                      + 2 * (p[:, 1] > c[1]).astype(np.int8)
                      + 4 * (p[:, 2] > c[2]).astype(np.int8))
            for o in range(8):
                sub = idx[oct_id == o]
                if len(sub) == 0:
                    continue
                oc = c + (h / 2) * np.array([(o & 1) * 2 - 1,
                                             ((o >> 1) & 1) * 2 - 1,
                                             ((o >> 2) & 1) * 2 - 1])
                children[b][o] = split(sub, oc, h / 2, depth + 1)
            ends[b] = offset
            return b

        import sys
        old_limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old_limit, 10000))
        try:
            split(np.arange(n, dtype=np.int64), center.astype(float), half, 0)
        finally:
            sys.setrecursionlimit(old_limit)
        self.permutation = perm
        self.centers = np.array(centers)
        self.halves = np.array(halves)
        self.starts = np.array(starts, dtype=np.int64)
        self.ends = np.array(ends, dtype=np.int64)
        self.children = np.array(children, dtype=np.int64)
        self.is_leaf = np.array(leaf)
        pp = points[perm]
        self.radii = np.zeros(len(centers))
        for b in range(len(centers)):
            sl = pp[self.starts[b]:self.ends[b]]
            if len(sl):
                self.radii[b] = np.sqrt(
                    ((sl - self.centers[b]) ** 2).sum(axis=1).max())
        self.scales = np.maximum(self.radii, 1e-30)

    @property
    def n_boxes(self):
        return len(self.centers)


_TABLE_CACHE = {}


def _tables(p_max, tt_max):
    if (p_max, tt_max) not in _TABLE_CACHE:
        order, idx, deg, expo, em1, em2, pred, pred_ax, n3_off = \
            tc.multiindex_tables(tt_max)
        mh_t = tc.moment_transform_tables(p_max, order, idx)
        m2l_t = tc.m2l_tables(p_max, tt_max, order, idx)
        _TABLE_CACHE[(p_max, tt_max)] = (deg, expo, em1, em2, pred, pred_ax,
                                         n3_off, mh_t, m2l_t)
    return _TABLE_CACHE[(p_max, tt_max)]


class FieldEvaluator:
    """Reusable evaluator bound to one source set and width field.

    Parameters
    ----------
    sources : SourceSet
    sigma_field : SigmaField
    mode : "fast" or "direct"
    tol : float
        Fast-path multipole tolerance (relative to max(1, |Phi|)).
    near_factor : float
        Near-field radius in units of sigma(x); default 8.
    """

    def __init__(self, sources, sigma_field, mode="fast", tol=1e-9,
                 near_factor=8.0, leaf_size=DEFAULT_LEAF_SIZE,
                 theta=DEFAULT_THETA, p_max=DEFAULT_P_MAX, safety=32.0):
        if tol < TOL_FLOOR:
            raise ValueError(
                f"tolerance {tol:g} below the double-precision floor "
                f"{TOL_FLOOR:g} achievable at the configured multipole order")
        self.sources = sources
        self.sigma_field = sigma_field
        self.mode = mode
        self.tol = float(tol)
        self.near_factor = float(near_factor)
        self.theta = float(theta)
        self.p_max = int(p_max)
        self.tt_max = int(p_max) + 2
        self.safety = float(safety)
        self.tree = None
        self._tree_data = None
        if mode == "fast":
            self._build_tree(leaf_size)

    def _build_tree(self, leaf_size):
        tree = OctreeIndex(self.sources.points, leaf_size)
        self.tree = tree
        perm = tree.permutation
        pts = np.ascontiguousarray(self.sources.points[perm])
        nrm = np.ascontiguousarray(self.sources.normals[perm])
        w = np.ascontiguousarray(self.sources.weights[perm])
        tables = _tables(self.p_max, self.tt_max)
        deg, expo, em1, em2, pred, pred_ax, n3_off, mh_t, m2l_t = tables
        lm = int(n3_off[self.p_max])
        mhat = np.zeros((tree.n_boxes, int(n3_off[self.p_max + 1])))
        tc._box_moments(tree.starts, tree.ends, tree.centers, tree.scales,
                        pts, nrm, w, pred[:lm], pred_ax[:lm], *mh_t, mhat)
        cw = np.concatenate([[0.0], np.cumsum(np.abs(w))])
        wabs = cw[tree.ends] - cw[tree.starts]
        self._tree_data = (pts, nrm, w, mhat, wabs, deg, expo, em1, em2,
                           pred, pred_ax, n3_off, m2l_t)

    def evaluate(self, targets, active=None, tol=None):
        """(Phi, grad Phi) at targets (k, 3).

        active restricts work to an index subset (other rows return
        zeros); tol overrides the fast-path tolerance for this call only.
        """
        targets = np.ascontiguousarray(np.atleast_2d(targets), dtype=float)
        if active is not None:
            sub = np.ascontiguousarray(targets[active])
            phi_s, grad_s = self.evaluate(sub, tol=tol)
            phi = np.zeros(len(targets))
            grad = np.zeros((len(targets), 3))
            phi[active] = phi_s
            grad[active] = grad_s
            return phi, grad
        sig_t, gsig_t = self.sigma_field.evaluate(targets)
        phi = np.zeros(len(targets))
        grad = np.zeros((len(targets), 3))
        if self.mode == "direct":
            tc._direct_eval(targets, sig_t, gsig_t, self.sources.points,
                            self.sources.normals, self.sources.weights,
                            phi, grad)
            return phi, grad
        tree = self.tree
        cl_start, cl_count, cl_tid = self._bucket(targets)
        (pts, nrm, w, mhat, wabs, deg, expo, em1, em2, pred, pred_ax,
         n3_off, m2l_t) = self._tree_data
        tc._cluster_eval(targets, sig_t, gsig_t, cl_start, cl_count, cl_tid,
                         self.near_factor,
                         tree.centers, tree.radii, tree.scales, tree.starts,
                         tree.ends, tree.children, tree.is_leaf,
                         pts, nrm, w, mhat, wabs,
                         deg, expo, em1, em2, pred, pred_ax, n3_off, *m2l_t,
                         self.theta, (tol or self.tol) / self.safety,
                         self.tt_max, phi, grad)
        return phi, grad

    def _bucket(self, targets):
        """Group targets by the source-tree box their descent ends in."""
        tree = self.tree
        box = np.zeros(len(targets), dtype=np.int64)
        for _ in range(32):
            c = tree.centers[box]
            octant = ((targets[:, 0] > c[:, 0]).astype(np.int64)
                      + 2 * (targets[:, 1] > c[:, 1]).astype(np.int64)
                      + 4 * (targets[:, 2] > c[:, 2]).astype(np.int64))
            child = tree.children[box, octant]
            movable = (~tree.is_leaf[box]) & (child >= 0)
            if not movable.any():
                break
            box = np.where(movable, child, box)
        order = np.argsort(box, kind="stable")
        sorted_box = box[order]
        boundaries = np.nonzero(np.diff(sorted_box))[0] + 1
        starts = np.concatenate([[0], boundaries])
        ends = np.concatenate([boundaries, [len(box)]])
        return (starts.astype(np.int64), (ends - starts).astype(np.int64),
                order.astype(np.int64))

    def hessian(self, targets):
        """(Phi, grad, Hessian) by direct summation (series-guarded)."""
        targets = np.ascontiguousarray(np.atleast_2d(targets), dtype=float)
        sig_t, gsig_t, hsig_t = self.sigma_field.evaluate(targets, hessian=True)
        phi = np.empty(len(targets))
        grad = np.empty((len(targets), 3))
        hess = np.empty((len(targets), 3, 3))
        tc._direct_hessian(targets, sig_t, gsig_t, hsig_t, self.sources.points,
                           self.sources.normals, self.sources.weights,
                           phi, grad, hess)
        return phi, grad, hess


def eval_direct(sources, targets, sigma_field):
    """Reference O(N M) evaluation of (Phi, grad Phi)."""
    ev = FieldEvaluator(sources, sigma_field, mode="direct")
    return ev.evaluate(targets)


def eval_fast(sources, targets, sigma_field, tol=1e-9, **kwargs):
    """Tree-accelerated evaluation matching eval_direct to tol."""
    ev = FieldEvaluator(sources, sigma_field, mode="fast", tol=tol, **kwargs)
    return ev.evaluate(targets)
