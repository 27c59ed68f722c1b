"""Quadrature rules and orthonormal polynomials on the standard simplex.

The reference domain throughout is T0 = {(u, v) : u >= 0, v >= 0, u + v <= 1}.
Gaussian-like rules with n = (q+1)(q+2)/2 nodes are shipped as static text
tables for orders 1..16; each integrates all polynomials up to a tabulated
exactness degree q' >= q and doubles as a stable interpolation node set.
"""

import functools
from dataclasses import dataclass, field
from importlib import resources
from math import factorial

import numpy as np
from scipy.special import eval_jacobi


def node_count(order):
    """Number of nodes (= number of 2D polynomials of total degree <= order)."""
    return (order + 1) * (order + 2) // 2


def monomial_integral(a, b):
    """Exact integral of u^a v^b over T0."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


class KoornwinderBasis:
    """Orthonormal polynomial basis on T0 with unit weight.

    The basis functions are indexed by (n, k) with 0 <= k <= n <= degree and
    stored flat in that order; there are (degree+1)(degree+2)/2 of them.
    They satisfy int_{T0} K_i K_j du dv = delta_ij, so the constant member
    is K_00 = sqrt(2).
    """

    def __init__(self, degree):
        self.degree = degree
        self.n_funcs = node_count(degree)
        self._pairs = [(n, k) for n in range(degree + 1) for k in range(n + 1)]

    def _collapsed(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        w = 1.0 - v
        safe = w > 1e-300
        xi = np.where(safe, 2.0 * u / np.where(safe, w, 1.0) - 1.0, -1.0)
        eta = 2.0 * v - 1.0
        return xi, eta, w

    def eval(self, u, v):
        """Evaluate all basis functions; returns array (npts, n_funcs)."""
        xi, eta, w = self._collapsed(u, v)
        out = np.empty(xi.shape + (self.n_funcs,))
        wk = {0: np.ones_like(w)}
        for i, (n, k) in enumerate(self._pairs):
            if k not in wk:
                wk[k] = wk[k - 1] * w
            c = np.sqrt(2.0 * (2 * k + 1) * (n + 1))
            out[..., i] = (c * eval_jacobi(k, 0, 0, xi) * wk[k]
                           * eval_jacobi(n - k, 2 * k + 1, 0, eta))
        return out

    def eval_with_derivs(self, u, v):
        """Values and first parameter derivatives of all basis functions.

        Returns (vals, d_u, d_v), each of shape (npts, n_funcs).
        """
        xi, eta, w = self._collapsed(u, v)
        shape = xi.shape + (self.n_funcs,)
        vals = np.empty(shape)
        du = np.empty(shape)
        dv = np.empty(shape)
        wk = {0: np.ones_like(w)}
        for i, (n, k) in enumerate(self._pairs):
            if k not in wk:
                wk[k] = wk[k - 1] * w
            j = n - k
            c = np.sqrt(2.0 * (2 * k + 1) * (n + 1))
            pk = eval_jacobi(k, 0, 0, xi)
            pj = eval_jacobi(j, 2 * k + 1, 0, eta)
            # d/dx P_m^{(a,b)} = (m+a+b+1)/2 * P_{m-1}^{(a+1,b+1)}
            dpk = 0.0 if k == 0 else 0.5 * (k + 1) * eval_jacobi(k - 1, 1, 1, xi)
            dpj = (0.0 if j == 0
                   else 0.5 * (j + 2 * k + 2) * eval_jacobi(j - 1, 2 * k + 2, 1, eta))
            vals[..., i] = c * pk * wk[k] * pj
            if k == 0:
                # k = 0 members depend on v only
                du[..., i] = 0.0
                dv[..., i] = c * 2.0 * dpj
            else:
                du[..., i] = c * 2.0 * dpk * wk[k - 1] * pj
                dv[..., i] = c * (((xi + 1.0) * dpk - k * pk) * wk[k - 1] * pj
                                  + 2.0 * pk * wk[k] * dpj)
        return vals, du, dv


@dataclass(frozen=True)
class SimplexRule:
    """A tabulated quadrature/interpolation rule on T0."""

    order: int
    nodes: np.ndarray          # (n, 2), strictly interior
    weights: np.ndarray        # (n,), positive, summing to 1/2
    exactness: int             # all total degree <= exactness integrated exactly
    symmetric: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self):
        return len(self.weights)

    @property
    def basis(self):
        if "basis" not in self._cache:
            self._cache["basis"] = KoornwinderBasis(self.order)
        return self._cache["basis"]

    @property
    def vandermonde(self):
        if "V" not in self._cache:
            self._cache["V"] = self.basis.eval(self.nodes[:, 0], self.nodes[:, 1])
        return self._cache["V"]


def _parse_rule_text(order, text):
    exactness = None
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "exactness" in line:
                exactness = int(line.split()[-1])
            continue
        rows.append([float(t) for t in line.split()])
    arr = np.array(rows)
    n = node_count(order)
    if arr.shape != (n, 3):
        raise ValueError(
            f"rule table for order {order} has shape {arr.shape}, expected ({n}, 3)")
    if exactness is None:
        raise ValueError(f"rule table for order {order} missing exactness header")
    return SimplexRule(order=order, nodes=arr[:, :2].copy(),
                       weights=arr[:, 2].copy(), exactness=exactness)


@functools.lru_cache(maxsize=None)
def rule(order):
    """Load the tabulated simplex rule of the given order (1..16)."""
    if not 1 <= order <= 16:
        raise ValueError(f"unsupported rule order {order}; tables cover 1..16")
    ref = resources.files("trismooth").joinpath(f"data/rules/tri_q{order:02d}.txt")
    return _parse_rule_text(order, ref.read_text())


def vals_to_coeffs(rule_, samples):
    """Interpolatory transform: samples at the rule's nodes -> coefficients.

    samples has shape (n,) or (n, m) with n the node count; the returned
    coefficients reproduce the samples exactly at the nodes (up to
    conditioning) and define the unique polynomial of total degree
    <= rule_.order through them.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] != rule_.n_nodes:
        raise ValueError(
            f"expected {rule_.n_nodes} samples, got {samples.shape[0]}")
    return np.linalg.solve(rule_.vandermonde, samples)


def coeffs_to_vals(coeffs, points):
    """Evaluate a coefficient vector (or stack) at arbitrary (u, v) points."""
    coeffs = np.asarray(coeffs, dtype=float)
    n = coeffs.shape[0]
    degree = int(round((np.sqrt(8 * n + 1) - 3) / 2))
    if node_count(degree) != n:
        raise ValueError(f"coefficient count {n} is not triangular")
    points = np.asarray(points, dtype=float)
    V = KoornwinderBasis(degree).eval(points[..., 0], points[..., 1])
    return V @ coeffs


def interpolation_condition(rule_):
    """Condition number of the node-evaluation matrix of the basis."""
    return float(np.linalg.cond(rule_.vandermonde))
