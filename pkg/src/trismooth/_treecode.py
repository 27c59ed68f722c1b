"""Numba kernels for direct and tree-accelerated boundary sums.

The smoothed-indicator kernel splits per source/target pair by
u = r / (sqrt(2) sigma(x)):

  u < 0.1   power series in u^2 (the exact expression cancels
            catastrophically),
  u < 8     exact erf/Gaussian expression,
  u >= 8    the harmonic dipole limit (erf == 1, Gaussian == 0 to 1e-28).

The tree path sums sources farther than ``near_factor * sigma(x)`` from
each target through Cartesian Taylor expansions of the dipole kernel,
truncated per box/target pair at the lowest order whose tail bound meets
the requested tolerance.  Per-target traversal order is fixed, so results
are deterministic and thread-count independent.
"""

import math

import numpy as np
from numba import njit, prange

# series for g(r, sigma) = A * S(u^2), A = 1 / (4 sqrt(2 pi^3) sigma^3),
# S(t) = sum_k (-1)^k (2k+2) / ((k+1)! (2k+3)) t^k
_SER = np.array([2.0 / 3.0, -2.0 / 5.0, 1.0 / 7.0, -1.0 / 27.0, 1.0 / 132.0,
                 -1.0 / 780.0, 1.0 / 5400.0, -1.0 / 42840.0, 1.0 / 383040.0,
                 -1.0 / 3810240.0, 1.0 / 41731200.0])
_SER_D1 = _SER[1:] * np.arange(1, len(_SER))
_SER_D2 = _SER[2:] * np.arange(2, len(_SER)) * np.arange(1, len(_SER) - 1)

_PI15 = np.pi ** 1.5
KA = 1.0 / (4.0 * np.sqrt(2.0) * _PI15)   # series prefactor / sigma^3
KC = np.sqrt(2.0) / (4.0 * _PI15)         # Gaussian-term prefactor
INV_4PI = 1.0 / (4.0 * np.pi)


@njit(cache=True, fastmath=False)
def _horner(coeffs, t):
    acc = 0.0
    for i in range(len(coeffs) - 1, -1, -1):
        acc = acc * t + coeffs[i]
    return acc


@njit(cache=True, fastmath=False)
def _g_terms(r2, sigma):
    """g, g_r / r, and dg/dsigma for the radial kernel factor."""
    s2 = sigma * sigma
    u2 = 0.5 * r2 / s2
    if u2 >= 64.0:
        r = np.sqrt(r2)
        r3 = r * r2
        return INV_4PI / r3, -3.0 * INV_4PI / (r3 * r2), 0.0
    e = np.exp(-u2)
    gsig = -KC * e / (s2 * s2)
    if u2 < 0.01:
        a = KA / (sigma * s2)
        return a * _horner(_SER, u2), (a / s2) * _horner(_SER_D1, u2), gsig
    r = np.sqrt(r2)
    r3 = r * r2
    erfu = math.erf(r / (np.sqrt(2.0) * sigma))
    g = erfu * INV_4PI / r3 - KC * e / (sigma * r2)
    if u2 < 0.04:
        # the derivative factor cancels harder; its series keeps full
        # precision out to u = 0.2
        a = KA / (sigma * s2)
        return g, (a / s2) * _horner(_SER_D1, u2), gsig
    gr_r = KC * e * (3.0 * s2 + r2) / (s2 * sigma * r2 * r2) \
        - 3.0 * erfu * INV_4PI / (r3 * r2)
    return g, gr_r, gsig


@njit(cache=True, fastmath=False)
def _hess_terms(r2, sigma):
    """(g_rr - g_r/r)/r^2, (dg_r/dsigma)/r, d2g/dsigma2 (Hessian factors)."""
    s2 = sigma * sigma
    u2 = 0.5 * r2 / s2
    if u2 >= 64.0:
        r = np.sqrt(r2)
        r4 = r2 * r2
        return 15.0 * INV_4PI / (r4 * r2 * r), 0.0, 0.0
    e = np.exp(-u2)
    s4 = s2 * s2
    grs_r = KC * e / (s4 * s2)
    gss = -KC * e * (r2 - 4.0 * s2) / (s4 * s2 * sigma)
    if u2 < 0.0625:
        kk = (KA / (sigma * s2 * s4)) * _horner(_SER_D2, u2)
        return kk, grs_r, gss
    r = np.sqrt(r2)
    r4 = r2 * r2
    erfu = math.erf(r / (np.sqrt(2.0) * sigma))
    kk = (-KC * e * (r4 + 5.0 * s2 * r2 + 15.0 * s4) / (s4 * sigma * r4)
          + 15.0 * erfu * INV_4PI / (r4 * r)) / r2
    return kk, grs_r, gss


@njit(cache=True, parallel=True, fastmath=False)
def _direct_eval(targets, sig_t, gsig_t, pts, nrm, w, out_phi, out_grad):
    nt = targets.shape[0]
    ns = pts.shape[0]
    for t in prange(nt):
        x0 = targets[t, 0]; x1 = targets[t, 1]; x2 = targets[t, 2]
        sigma = sig_t[t]
        phi = 0.0
        gx = 0.0; gy = 0.0; gz = 0.0
        scoef = 0.0
        for s in range(ns):
            dx = x0 - pts[s, 0]; dy = x1 - pts[s, 1]; dz = x2 - pts[s, 2]
            r2 = dx * dx + dy * dy + dz * dz
            g, gr_r, gsig = _g_terms(r2, sigma)
            m = nrm[s, 0] * dx + nrm[s, 1] * dy + nrm[s, 2] * dz
            ws = w[s]
            phi -= ws * m * g
            c = ws * m * gr_r
            gx -= ws * nrm[s, 0] * g + c * dx
            gy -= ws * nrm[s, 1] * g + c * dy
            gz -= ws * nrm[s, 2] * g + c * dz
            scoef -= ws * m * gsig
        out_phi[t] = phi
        out_grad[t, 0] = gx + scoef * gsig_t[t, 0]
        out_grad[t, 1] = gy + scoef * gsig_t[t, 1]
        out_grad[t, 2] = gz + scoef * gsig_t[t, 2]


@njit(cache=True, parallel=True, fastmath=False)
def _direct_hessian(targets, sig_t, gsig_t, hsig_t, pts, nrm, w,
                    out_phi, out_grad, out_hess):
    nt = targets.shape[0]
    ns = pts.shape[0]
    for t in prange(nt):
        x0 = targets[t, 0]; x1 = targets[t, 1]; x2 = targets[t, 2]
        sigma = sig_t[t]
        phi = 0.0
        gx = 0.0; gy = 0.0; gz = 0.0
        scoef = 0.0          # sum -w m g_sigma  (also multiplies hess sigma)
        ssig2 = 0.0          # sum -w m g_sigmasigma
        vgx = 0.0; vgy = 0.0; vgz = 0.0    # sum w g_sigma n
        vdx = 0.0; vdy = 0.0; vdz = 0.0    # sum w m (g_rsigma/r) d
        hxx = 0.0; hyy = 0.0; hzz = 0.0
        hxy = 0.0; hxz = 0.0; hyz = 0.0
        for s in range(ns):
            dx = x0 - pts[s, 0]; dy = x1 - pts[s, 1]; dz = x2 - pts[s, 2]
            r2 = dx * dx + dy * dy + dz * dz
            g, gr_r, gsig = _g_terms(r2, sigma)
            kk, grs_r, gss = _hess_terms(r2, sigma)
            nx = nrm[s, 0]; ny = nrm[s, 1]; nz = nrm[s, 2]
            m = nx * dx + ny * dy + nz * dz
            ws = w[s]
            phi -= ws * m * g
            c = ws * m * gr_r
            gx -= ws * nx * g + c * dx
            gy -= ws * ny * g + c * dy
            gz -= ws * nz * g + c * dz
            scoef -= ws * m * gsig
            ssig2 -= ws * m * gss
            vgx += ws * gsig * nx; vgy += ws * gsig * ny; vgz += ws * gsig * nz
            cv = ws * m * grs_r
            vdx += cv * dx; vdy += cv * dy; vdz += cv * dz
            # -n ox (gr_r d) - (gr_r d) ox n - m (kk d ox d + gr_r I)
            wgr = ws * gr_r
            mk = ws * m * kk
            hxx -= 2.0 * wgr * nx * dx + mk * dx * dx + wgr * m
            hyy -= 2.0 * wgr * ny * dy + mk * dy * dy + wgr * m
            hzz -= 2.0 * wgr * nz * dz + mk * dz * dz + wgr * m
            hxy -= wgr * (nx * dy + ny * dx) + mk * dx * dy
            hxz -= wgr * (nx * dz + nz * dx) + mk * dx * dz
            hyz -= wgr * (ny * dz + nz * dy) + mk * dy * dz
        sgx = gsig_t[t, 0]; sgy = gsig_t[t, 1]; sgz = gsig_t[t, 2]
        out_phi[t] = phi
        out_grad[t, 0] = gx + scoef * sgx
        out_grad[t, 1] = gy + scoef * sgy
        out_grad[t, 2] = gz + scoef * sgz
        # assemble sigma-dependent pieces of the Hessian
        axx = hxx - 2.0 * (vgx + vdx) * sgx + ssig2 * sgx * sgx
        ayy = hyy - 2.0 * (vgy + vdy) * sgy + ssig2 * sgy * sgy
        azz = hzz - 2.0 * (vgz + vdz) * sgz + ssig2 * sgz * sgz
        axy = hxy - (vgx + vdx) * sgy - (vgy + vdy) * sgx + ssig2 * sgx * sgy
        axz = hxz - (vgx + vdx) * sgz - (vgz + vdz) * sgx + ssig2 * sgx * sgz
        ayz = hyz - (vgy + vdy) * sgz - (vgz + vdz) * sgy + ssig2 * sgy * sgz
        out_hess[t, 0, 0] = axx + scoef * hsig_t[t, 0, 0]
        out_hess[t, 1, 1] = ayy + scoef * hsig_t[t, 1, 1]
        out_hess[t, 2, 2] = azz + scoef * hsig_t[t, 2, 2]
        v = axy + scoef * hsig_t[t, 0, 1]
        out_hess[t, 0, 1] = v
        out_hess[t, 1, 0] = v
        v = axz + scoef * hsig_t[t, 0, 2]
        out_hess[t, 0, 2] = v
        out_hess[t, 2, 0] = v
        v = ayz + scoef * hsig_t[t, 1, 2]
        out_hess[t, 1, 2] = v
        out_hess[t, 2, 1] = v


@njit(cache=True, parallel=True, fastmath=False)
def _box_moments(starts, ends, centers, scales, pts, nrm, w,
                 pred, pred_ax,
                 mh_tgt, mh_src, mh_comp, mh_coef,
                 mhat):
    """Scalar dipole moments per box.

    mhat[b] holds sum_d alpha_d m_{alpha - e_d, d} with raw moments
    m_{beta, d} = sum_s w_s n_{s,d} ((y_s - c_b) / S_b)^beta, so the far
    potential is the plain dot product -(1/4 pi S^2) <mhat, b-values>.
    """
    nb = starts.shape[0]
    lm = pred.shape[0]
    for b in prange(nb):
        sc = 1.0 / scales[b]
        mono = np.empty(lm)
        mraw = np.zeros((3, lm))
        for s in range(starts[b], ends[b]):
            y0 = (pts[s, 0] - centers[b, 0]) * sc
            y1 = (pts[s, 1] - centers[b, 1]) * sc
            y2 = (pts[s, 2] - centers[b, 2]) * sc
            mono[0] = 1.0
            for i in range(1, lm):
                ax = pred_ax[i]
                yv = y0 if ax == 0 else (y1 if ax == 1 else y2)
                mono[i] = mono[pred[i]] * yv
            ws = w[s]
            wn0 = ws * nrm[s, 0]; wn1 = ws * nrm[s, 1]; wn2 = ws * nrm[s, 2]
            for i in range(lm):
                mraw[0, i] += wn0 * mono[i]
                mraw[1, i] += wn1 * mono[i]
                mraw[2, i] += wn2 * mono[i]
        for k in range(mh_tgt.shape[0]):
            mhat[b, mh_tgt[k]] += mh_coef[k] * mraw[mh_comp[k], mh_src[k]]


@njit(cache=True, fastmath=False)
def _pick_order(theta, scale_err, eps, p_max):
    """Smallest expansion order whose tail bound is below eps, or -1."""
    om = 1.0 - theta
    base = scale_err / (om * om)
    tp = theta  # becomes theta^(n+1) inside the loop
    for n in range(1, p_max + 1):
        tp *= theta
        if (n + 3) * tp * base <= eps:
            return n
    return -1


@njit(cache=True, parallel=True, fastmath=False)
def _cluster_eval(targets, sig_t, gsig_t, cl_start, cl_count, cl_tid,
                  near_factor,
                  centers, rads, scales, starts, ends, children, leaf,
                  pts, nrm, w, mhat, wabs,
                  deg, expo, em1, em2, pred, pred_ax, n3_off,
                  m2l_a, m2l_g, m2l_ag, m2l_coef, blk_gdeg, blk_start,
                  shell_off,
                  theta_max, eps_abs, tt_max, out_phi, out_grad):
    """Cluster-amortized far field: one local expansion per target cluster.

    Each accepted source box is translated once into a scaled Taylor
    expansion about the cluster center (entries of the translation table
    are sorted by combined degree, so a truncated translation is a
    prefix); every target then evaluates the local polynomial and its
    gradient.  Leaves that fail the acceptance test are summed directly
    per target with the full kernel.
    """
    ncl = cl_start.shape[0]
    lb = deg.shape[0]
    for ci in prange(ncl):
        nt = cl_count[ci]
        if nt == 0:
            continue
        t0 = cl_start[ci]
        # cluster geometry
        zx = 0.0; zy = 0.0; zz = 0.0
        sig_max = 0.0
        for q in range(nt):
            t = cl_tid[t0 + q]
            zx += targets[t, 0]; zy += targets[t, 1]; zz += targets[t, 2]
            if sig_t[t] > sig_max:
                sig_max = sig_t[t]
        zx /= nt; zy /= nt; zz /= nt
        rho = 0.0
        for q in range(nt):
            t = cl_tid[t0 + q]
            dx = targets[t, 0] - zx
            dy = targets[t, 1] - zy
            dz = targets[t, 2] - zz
            r2 = dx * dx + dy * dy + dz * dz
            if r2 > rho:
                rho = r2
        rho = np.sqrt(rho)
        rr = max(rho, 1e-9 * (scales[0] + 1e-300))
        near_r = near_factor * sig_max
        local = np.zeros(lb)
        pw = np.empty(tt_max + 1)
        bvals = np.empty(lb)
        tmax_used = 0
        stack = np.empty(512, np.int64)
        stack[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            b = stack[sp]
            cx = zx - centers[b, 0]
            cy = zy - centers[b, 1]
            cz = zz - centers[b, 2]
            dist = np.sqrt(cx * cx + cy * cy + cz * cz)
            rad = rads[b]
            use_far = False
            torder = -1
            gap = dist - rad - rho
            if gap > near_r:
                theta = (rad + rho) / dist
                if theta < theta_max:
                    scale_err = wabs[b] * INV_4PI / (gap * gap)
                    torder = _pick_order(theta, scale_err, eps_abs, tt_max)
                    use_far = torder >= 0
            if use_far:
                # translate the box multipole into the cluster-local Taylor
                sc = 1.0 / scales[b]
                tx = cx * sc; ty = cy * sc; tz = cz * sc
                tr2 = tx * tx + ty * ty + tz * tz
                nb_need = n3_off[torder]
                bvals[0] = 1.0 / np.sqrt(tr2)
                for i in range(1, nb_need):
                    n = deg[i]
                    s1 = 0.0
                    s2 = 0.0
                    j = em1[i, 0]
                    if j >= 0:
                        s1 += tx * bvals[j]
                    j = em1[i, 1]
                    if j >= 0:
                        s1 += ty * bvals[j]
                    j = em1[i, 2]
                    if j >= 0:
                        s1 += tz * bvals[j]
                    j = em2[i, 0]
                    if j >= 0:
                        s2 += bvals[j]
                    j = em2[i, 1]
                    if j >= 0:
                        s2 += bvals[j]
                    j = em2[i, 2]
                    if j >= 0:
                        s2 += bvals[j]
                    bvals[i] = ((2.0 * n - 1.0) * s1 - (n - 1.0) * s2) \
                        / (n * tr2)
                base = -INV_4PI * sc * sc
                ratio = -rr * sc
                pw[0] = base
                for n in range(1, torder + 1):
                    pw[n] = pw[n - 1] * ratio
                if torder > tmax_used:
                    tmax_used = torder
                for bi in range(shell_off[torder + 1]):
                    pwv = pw[blk_gdeg[bi]]
                    for k in range(blk_start[bi], blk_start[bi + 1]):
                        local[m2l_g[k]] += pwv * m2l_coef[k] \
                            * mhat[b, m2l_a[k]] * bvals[m2l_ag[k]]
            elif leaf[b]:
                for q in range(nt):
                    t = cl_tid[t0 + q]
                    x0 = targets[t, 0]; x1 = targets[t, 1]; x2 = targets[t, 2]
                    sigma = sig_t[t]
                    phi = 0.0
                    gx = 0.0; gy = 0.0; gz = 0.0
                    scoef = 0.0
                    for s in range(starts[b], ends[b]):
                        dx = x0 - pts[s, 0]
                        dy = x1 - pts[s, 1]
                        dz = x2 - pts[s, 2]
                        r2 = dx * dx + dy * dy + dz * dz
                        g, gr_r, gsig = _g_terms(r2, sigma)
                        m = nrm[s, 0] * dx + nrm[s, 1] * dy + nrm[s, 2] * dz
                        ws = w[s]
                        phi -= ws * m * g
                        c = ws * m * gr_r
                        gx -= ws * nrm[s, 0] * g + c * dx
                        gy -= ws * nrm[s, 1] * g + c * dy
                        gz -= ws * nrm[s, 2] * g + c * dz
                        scoef -= ws * m * gsig
                    out_phi[t] += phi
                    out_grad[t, 0] += gx + scoef * gsig_t[t, 0]
                    out_grad[t, 1] += gy + scoef * gsig_t[t, 1]
                    out_grad[t, 2] += gz + scoef * gsig_t[t, 2]
            else:
                for c8 in range(8):
                    ch = children[b, c8]
                    if ch >= 0:
                        stack[sp] = ch
                        sp += 1
        # evaluate the accumulated local expansion at each target
        nl = n3_off[tmax_used]
        mono = np.empty(lb)
        inv_r = 1.0 / rr
        for q in range(nt):
            t = cl_tid[t0 + q]
            xx = (targets[t, 0] - zx) * inv_r
            xy = (targets[t, 1] - zy) * inv_r
            xz = (targets[t, 2] - zz) * inv_r
            mono[0] = 1.0
            for i in range(1, nl):
                ax = pred_ax[i]
                yv = xx if ax == 0 else (xy if ax == 1 else xz)
                mono[i] = mono[pred[i]] * yv
            phi = 0.0
            for i in range(nl):
                phi += local[i] * mono[i]
            gx = 0.0; gy = 0.0; gz = 0.0
            for i in range(1, nl):
                li = local[i]
                j = em1[i, 0]
                if j >= 0:
                    gx += li * expo[i, 0] * mono[j]
                j = em1[i, 1]
                if j >= 0:
                    gy += li * expo[i, 1] * mono[j]
                j = em1[i, 2]
                if j >= 0:
                    gz += li * expo[i, 2] * mono[j]
            out_phi[t] += phi
            out_grad[t, 0] += gx * inv_r
            out_grad[t, 1] += gy * inv_r
            out_grad[t, 2] += gz * inv_r


def multiindex_tables(n_max):
    """Flat multi-index enumeration (by degree, then lex) and recurrences."""
    idx = {}
    order = []
    for n in range(n_max + 1):
        for i in range(n, -1, -1):
            for j in range(n - i, -1, -1):
                k = n - i - j
                idx[(i, j, k)] = len(order)
                order.append((i, j, k))
    L = len(order)
    deg = np.array([sum(a) for a in order], dtype=np.int64)
    expo = np.array(order, dtype=np.int64)
    em1 = np.full((L, 3), -1, dtype=np.int64)
    em2 = np.full((L, 3), -1, dtype=np.int64)
    pred = np.zeros(L, dtype=np.int64)
    pred_ax = np.zeros(L, dtype=np.int64)
    for f, a in enumerate(order):
        for d in range(3):
            if a[d] >= 1:
                b = list(a); b[d] -= 1
                em1[f, d] = idx[tuple(b)]
            if a[d] >= 2:
                b = list(a); b[d] -= 2
                em2[f, d] = idx[tuple(b)]
        if f > 0:
            d = int(np.argmax(a))
            b = list(a); b[d] -= 1
            pred[f] = idx[tuple(b)]
            pred_ax[f] = d
    n3_off = np.array([sum(1 for a in order if sum(a) <= n)
                       for n in range(n_max + 1)], dtype=np.int64)
    return order, idx, deg, expo, em1, em2, pred, pred_ax, n3_off


def m2l_tables(p_max, tt_max, order, idx):
    """Multipole-to-local translation table, prefix-truncatable by the
    combined degree |alpha| + |gamma|.

    Entries are grouped into blocks of constant |gamma| within each
    combined-degree shell so the per-pair power factor hoists out of the
    inner loop:  local[g] += pw(|gamma|) * coef * mhat[a] * b[a + gamma],
    coef = (alpha+gamma)! / (alpha! gamma!).
    """
    from math import comb
    entries = []
    for alpha in order:
        na = sum(alpha)
        if na < 1 or na > p_max + 1:
            continue
        for gamma in order:
            ng = sum(gamma)
            if na + ng > tt_max:
                continue
            ag = tuple(alpha[d] + gamma[d] for d in range(3))
            coef = 1.0
            for d in range(3):
                coef *= comb(ag[d], gamma[d])
            entries.append((na + ng, ng, idx[alpha], idx[gamma], idx[ag],
                            coef))
    entries.sort(key=lambda r: (r[0], r[1]))
    a = np.array([r[2] for r in entries], dtype=np.int32)
    g = np.array([r[3] for r in entries], dtype=np.int32)
    ag = np.array([r[4] for r in entries], dtype=np.int32)
    coef = np.array([r[5] for r in entries])
    # block structure: runs of constant (shell, |gamma|)
    blk_start = [0]
    blk_gdeg = []
    shell_off = [0] * (tt_max + 2)
    prev = None
    for i, r in enumerate(entries):
        key = (r[0], r[1])
        if key != prev:
            if prev is not None:
                blk_start.append(i)
            blk_gdeg.append(r[1])
            prev = key
    blk_start.append(len(entries))
    nblk = len(blk_gdeg)
    # shell_off[s] = first block of combined degree s
    bi = 0
    for s in range(tt_max + 2):
        while bi < nblk and entries[blk_start[bi]][0] < s:
            bi += 1
        shell_off[s] = bi
    return (a, g, ag, coef, np.array(blk_gdeg, dtype=np.int64),
            np.array(blk_start, dtype=np.int64),
            np.array(shell_off, dtype=np.int64))


def moment_transform_tables(p_max, order, idx):
    """Table pre-contracting raw dipole moments into the mhat array.

    With mhat_a = sum_d a_d m_{a - e_d, d} (degrees <= p_max + 1), the far
    potential of a box is -(1 / 4 pi S^2) dot(mhat, b-values), a
    contiguous prefix dot product at any truncation order.
    """
    mh = []
    for beta in order:
        if sum(beta) > p_max:
            continue
        src = idx[beta]
        for d in range(3):
            a = list(beta); a[d] += 1
            mh.append((idx[tuple(a)], src, d, beta[d] + 1.0))
    mh_tgt = np.array([r[0] for r in mh], dtype=np.int64)
    mh_src = np.array([r[1] for r in mh], dtype=np.int64)
    mh_comp = np.array([r[2] for r in mh], dtype=np.int64)
    mh_coef = np.array([r[3] for r in mh])
    return mh_tgt, mh_src, mh_comp, mh_coef
