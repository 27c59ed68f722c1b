"""Target-dependent mollifier width sigma(x) and its derivatives.

sigma(x) is a Gaussian-weighted average of per-triangle widths
sigma_j = D_j / lambda taken over centroids within a cutoff radius:

    sigma(x) = sum_j sigma_j w_j(x) / sum_j w_j(x),
    w_j(x)   = exp(-|x - c_j|^2 / (2 sigma0^2)).

Weights farther than 8.5 sigma0 are below 1.7e-16 relative to the nearest
one and are dropped, which makes evaluation a local grid lookup.  The
exponents are shifted by the minimal squared distance before
exponentiation so the quotient never underflows prematurely; far from all
centroids the quotient limits to the nearest centroid's width, which is
returned directly with zero gradient.
"""

import numpy as np
from numba import njit

from .skeleton import TriangleGeometry

CUTOFF_FACTOR = 8.5


class SigmaField:
    """Smooth per-target mollifier width over a skeleton mesh.

    Parameters
    ----------
    mesh : SkeletonMesh
    lam : float
        Width divisor: sigma_j = D_j / lam.  Default 2.5.
    sigma0 : float or "auto"
        Blending length scale; "auto" uses sqrt(5) * max_j D_j.
    """

    def __init__(self, mesh, lam=2.5, sigma0="auto", geometry=None):
        if mesh.n_triangles == 0:
            raise ValueError("cannot build a width field over an empty mesh")
        if lam <= 0:
            raise ValueError("lambda must be positive")
        geo = geometry if geometry is not None else TriangleGeometry(mesh)
        self.lam = float(lam)
        self.centroids = geo.centroids()
        self.diameters = geo.diameters()
        self.sigma_j = self.diameters / self.lam
        self.sigma0 = float(np.sqrt(5.0) * self.diameters.max()
                            if sigma0 == "auto" else sigma0)
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        self.cutoff = CUTOFF_FACTOR * self.sigma0
        self._build_grid()

    def _build_grid(self):
        lo = self.centroids.min(axis=0)
        hi = self.centroids.max(axis=0)
        cell = self.cutoff
        dims = np.minimum(np.maximum(((hi - lo) / cell).astype(np.int64) + 1, 1),
                          128)
        cell_sizes = np.maximum((hi - lo) / dims, cell)
        self._grid_lo = lo
        self._grid_dims = dims.astype(np.int64)
        self._cell_size = cell_sizes
        idx = np.minimum(((self.centroids - lo) / cell_sizes).astype(np.int64),
                         dims - 1)
        flat = (idx[:, 0] * dims[1] + idx[:, 1]) * dims[2] + idx[:, 2]
        order = np.argsort(flat, kind="stable")
        self._order = order
        self._sorted_centroids = np.ascontiguousarray(self.centroids[order])
        self._sorted_sigma = np.ascontiguousarray(self.sigma_j[order])
        ncell = int(dims[0] * dims[1] * dims[2])
        counts = np.bincount(flat, minlength=ncell)
        self._cell_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    @property
    def sigma_min(self):
        return float(self.sigma_j.min())

    @property
    def sigma_max(self):
        return float(self.sigma_j.max())

    def evaluate(self, targets, hessian=False):
        """sigma, grad sigma (and optionally the 3x3 Hessian) at targets.

        targets has shape (k, 3); returns (sigma (k,), grad (k, 3)) or
        (sigma, grad, hess (k, 3, 3)).
        """
        targets = np.ascontiguousarray(np.atleast_2d(targets), dtype=float)
        sig, grad, hess6 = _sigma_eval(
            targets, self._sorted_centroids, self._sorted_sigma,
            self._cell_start, self._grid_lo, self._cell_size, self._grid_dims,
            self.sigma0, self.cutoff, hessian)
        if not hessian:
            return sig, grad
        hess = np.empty((len(targets), 3, 3))
        hess[:, 0, 0] = hess6[:, 0]
        hess[:, 1, 1] = hess6[:, 1]
        hess[:, 2, 2] = hess6[:, 2]
        hess[:, 0, 1] = hess[:, 1, 0] = hess6[:, 3]
        hess[:, 0, 2] = hess[:, 2, 0] = hess6[:, 4]
        hess[:, 1, 2] = hess[:, 2, 1] = hess6[:, 5]
        return sig, grad, hess


def sigma_at(field, x):
    """Width and gradient at a single point: (sigma, grad)."""
    sig, grad = field.evaluate(np.asarray(x, dtype=float).reshape(1, 3))
    return float(sig[0]), grad[0]


@njit(cache=True)
def _cell_range(x, lo, cell, dims, radius):
    i0 = np.empty(3, np.int64)
    i1 = np.empty(3, np.int64)
    for d in range(3):
        a = int(np.floor((x[d] - radius - lo[d]) / cell[d]))
        b = int(np.floor((x[d] + radius - lo[d]) / cell[d]))
        i0[d] = min(max(a, 0), dims[d] - 1)
        i1[d] = min(max(b, 0), dims[d] - 1)
    return i0, i1


@njit(cache=True)
def _sigma_eval(targets, cents, sigj, cell_start, lo, cell, dims, sigma0,
                cutoff, want_hess):
    nt = targets.shape[0]
    sig = np.empty(nt)
    grad = np.zeros((nt, 3))
    hess6 = np.zeros((nt, 6))
    inv2s2 = 1.0 / (2.0 * sigma0 * sigma0)
    inv_s2 = 1.0 / (sigma0 * sigma0)
    rc2 = cutoff * cutoff
    for t in range(nt):
        x = targets[t]
        i0, i1 = _cell_range(x, lo, cell, dims, cutoff)
        # pass 1: minimal squared distance inside the cutoff
        dmin2 = 1e300
        for ix in range(i0[0], i1[0] + 1):
            for iy in range(i0[1], i1[1] + 1):
                for iz in range(i0[2], i1[2] + 1):
                    c = (ix * dims[1] + iy) * dims[2] + iz
                    for s in range(cell_start[c], cell_start[c + 1]):
                        dx = x[0] - cents[s, 0]
                        dy = x[1] - cents[s, 1]
                        dz = x[2] - cents[s, 2]
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 < dmin2:
                            dmin2 = d2
        if dmin2 > rc2:
            # all weights underflow: limit of the quotient is the nearest
            # centroid's width; search outward for it
            best = -1
            bestd = 1e300
            radius = cutoff
            while best < 0:
                radius *= 2.0
                i0, i1 = _cell_range(x, lo, cell, dims, radius)
                for ix in range(i0[0], i1[0] + 1):
                    for iy in range(i0[1], i1[1] + 1):
                        for iz in range(i0[2], i1[2] + 1):
                            c = (ix * dims[1] + iy) * dims[2] + iz
                            for s in range(cell_start[c], cell_start[c + 1]):
                                dx = x[0] - cents[s, 0]
                                dy = x[1] - cents[s, 1]
                                dz = x[2] - cents[s, 2]
                                d2 = dx * dx + dy * dy + dz * dz
                                if d2 < bestd:
                                    bestd = d2
                                    best = s
                if radius > 1e12 * (cutoff + 1.0):
                    break
            sig[t] = sigj[best] if best >= 0 else sigj[0]
            continue
        # pass 2: shifted-weight sums
        wsum = 0.0
        nsum = 0.0
        gw0 = 0.0; gw1 = 0.0; gw2 = 0.0           # sum w_j (x - c_j)
        gn0 = 0.0; gn1 = 0.0; gn2 = 0.0           # sum sigma_j w_j (x - c_j)
        h_xx = 0.0; h_yy = 0.0; h_zz = 0.0
        h_xy = 0.0; h_xz = 0.0; h_yz = 0.0
        hn_xx = 0.0; hn_yy = 0.0; hn_zz = 0.0
        hn_xy = 0.0; hn_xz = 0.0; hn_yz = 0.0
        for ix in range(i0[0], i1[0] + 1):
            for iy in range(i0[1], i1[1] + 1):
                for iz in range(i0[2], i1[2] + 1):
                    c = (ix * dims[1] + iy) * dims[2] + iz
                    for s in range(cell_start[c], cell_start[c + 1]):
                        dx = x[0] - cents[s, 0]
                        dy = x[1] - cents[s, 1]
                        dz = x[2] - cents[s, 2]
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 > rc2:
                            continue
                        w = np.exp(-(d2 - dmin2) * inv2s2)
                        wsum += w
                        nsum += sigj[s] * w
                        gw0 += w * dx; gw1 += w * dy; gw2 += w * dz
                        sw = sigj[s] * w
                        gn0 += sw * dx; gn1 += sw * dy; gn2 += sw * dz
                        if want_hess:
                            h_xx += w * dx * dx; h_yy += w * dy * dy
                            h_zz += w * dz * dz; h_xy += w * dx * dy
                            h_xz += w * dx * dz; h_yz += w * dy * dz
                            hn_xx += sw * dx * dx; hn_yy += sw * dy * dy
                            hn_zz += sw * dz * dz; hn_xy += sw * dx * dy
                            hn_xz += sw * dx * dz; hn_yz += sw * dy * dz
        s_val = nsum / wsum
        sig[t] = s_val
        # grad = -(1/(W s0^2)) sum (sigma_j - sigma) w_j (x - c_j)
        g0 = -(gn0 - s_val * gw0) * inv_s2 / wsum
        g1 = -(gn1 - s_val * gw1) * inv_s2 / wsum
        g2 = -(gn2 - s_val * gw2) * inv_s2 / wsum
        grad[t, 0] = g0; grad[t, 1] = g1; grad[t, 2] = g2
        if want_hess:
            # hess = (1/W) [ sum (sigma_j - sigma) hess w_j
            #               - grad ox gradW - gradW ox grad ]
            # with hess w_j = w_j ((x-c_j)(x-c_j)^T / s0^4 - I / s0^2)
            q_xx = (hn_xx - s_val * h_xx) * inv_s2 * inv_s2 \
                - (nsum - s_val * wsum) * inv_s2
            q_yy = (hn_yy - s_val * h_yy) * inv_s2 * inv_s2 \
                - (nsum - s_val * wsum) * inv_s2
            q_zz = (hn_zz - s_val * h_zz) * inv_s2 * inv_s2 \
                - (nsum - s_val * wsum) * inv_s2
            q_xy = (hn_xy - s_val * h_xy) * inv_s2 * inv_s2
            q_xz = (hn_xz - s_val * h_xz) * inv_s2 * inv_s2
            q_yz = (hn_yz - s_val * h_yz) * inv_s2 * inv_s2
            gw_0 = -gw0 * inv_s2; gw_1 = -gw1 * inv_s2; gw_2 = -gw2 * inv_s2
            hess6[t, 0] = (q_xx - 2.0 * g0 * gw_0) / wsum
            hess6[t, 1] = (q_yy - 2.0 * g1 * gw_1) / wsum
            hess6[t, 2] = (q_zz - 2.0 * g2 * gw_2) / wsum
            hess6[t, 3] = (q_xy - g0 * gw_1 - g1 * gw_0) / wsum
            hess6[t, 4] = (q_xz - g0 * gw_2 - g2 * gw_0) / wsum
            hess6[t, 5] = (q_yz - g1 * gw_2 - g2 * gw_1) / wsum
    return sig, grad, hess6
