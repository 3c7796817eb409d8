"""Vectorised numpy versions of the kernels in ``_kernels_jit``.

Same algorithms and return conventions; inner loops are replaced by slice
arithmetic so the interpreter overhead stays at O(n^2) scalar steps.
"""
import math

import numpy as np


def jacobi_svd(x, want_v, tol, max_sweeps):
    n, m = x.shape
    vt = np.eye(n) if want_v else np.zeros((0, 0))
    floor = 1e-15 * float(np.sum(x * x))
    converged = False
    sweeps = 0
    for sweep in range(max_sweeps):
        norms = np.einsum("ij,ij->i", x, x)
        off = 0.0
        for p in range(n - 1):
            # all pairs (p, q>p) of this row at once is not equivalent to the
            # cyclic order, so rotate one pair at a time but vectorise over k
            xp_row = x[p]
            for q in range(p + 1, n):
                alpha = norms[p]
                beta = norms[q]
                gamma = float(xp_row @ x[q])
                ag = abs(gamma)
                if ag <= floor or alpha * beta == 0.0:
                    continue
                rel = ag / math.sqrt(alpha * beta)
                if rel <= tol:
                    continue
                off = max(off, rel)
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + math.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                xp = xp_row.copy()
                xq = x[q]
                xp_row[:] = c * xp - s * xq
                x[q] = s * xp + c * xq
                norms[p] = alpha - t * gamma
                norms[q] = beta + t * gamma
                if want_v:
                    vp = vt[p].copy()
                    vq = vt[q].copy()
                    vt[p] = c * vp - s * vq
                    vt[q] = s * vp + c * vq
        sweeps = sweep + 1
        if off <= tol:
            converged = True
            break
    return vt, sweeps, converged


def householder_qr(a):
    m, n = a.shape
    k = min(m, n)
    vs = []
    for j in range(k):
        col = a[j:, j]
        norm2 = float(col @ col)
        if norm2 == 0.0:
            vs.append(None)
            continue
        x0 = col[0]
        alpha = -math.sqrt(norm2) if x0 >= 0.0 else math.sqrt(norm2)
        v = col.copy()
        v[0] -= alpha
        vn2 = norm2 - x0 * x0 + v[0] * v[0]
        if vn2 == 0.0:
            vs.append(None)
            continue
        beta = 2.0 / vn2
        a[j:, j:] -= beta * np.outer(v, v @ a[j:, j:])
        a[j, j] = alpha
        a[j + 1 :, j] = 0.0
        vs.append((v, beta))
    r = np.triu(a[:k, :])
    q = np.eye(m, k)
    for j in range(k - 1, -1, -1):
        if vs[j] is None:
            continue
        v, beta = vs[j]
        q[j:, :] -= beta * np.outer(v, v @ q[j:, :])
    return q, r


def hessenberg(a):
    n = a.shape[0]
    for k in range(n - 2):
        col = a[k + 1 :, k]
        norm2 = float(col @ col)
        if norm2 == 0.0:
            continue
        x0 = col[0]
        alpha = -math.sqrt(norm2) if x0 >= 0.0 else math.sqrt(norm2)
        v = col.copy()
        v[0] -= alpha
        vn2 = norm2 - x0 * x0 + v[0] * v[0]
        if vn2 == 0.0:
            continue
        beta = 2.0 / vn2
        a[k + 1 :, k:] -= beta * np.outer(v, v @ a[k + 1 :, k:])
        a[:, k + 1 :] -= beta * np.outer(a[:, k + 1 :] @ v, v)
        a[k + 1, k] = alpha
        a[k + 2 :, k] = 0.0
    return a


def hessenberg_eigenvalues(h, tol, max_iter):
    n = h.shape[0]
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = h
    wr = np.zeros(n + 1)
    wi = np.zeros(n + 1)
    anorm = float(np.sum(np.abs(np.triu(a[1:, 1:], -1))))
    nn = n
    t = 0.0
    total = 0
    x = y = z = w = p = q = r = s = 0.0
    while nn >= 1:
        its = 0
        while True:
            l = nn
            while l >= 2:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) <= tol * s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
            else:
                y = a[nn - 1, nn - 1]
                w = a[nn, nn - 1] * a[nn - 1, nn]
                if l == nn - 1:
                    p = 0.5 * (y - x)
                    q = p * p + w
                    z = math.sqrt(abs(q))
                    x += t
                    if q >= 0.0:
                        z = p + (z if p >= 0.0 else -z)
                        wr[nn - 1] = wr[nn] = x + z
                        if z != 0.0:
                            wr[nn] = x - w / z
                        wi[nn - 1] = wi[nn] = 0.0
                    else:
                        wr[nn - 1] = wr[nn] = x + p
                        wi[nn - 1] = -z
                        wi[nn] = z
                    nn -= 2
                else:
                    if total >= max_iter:
                        return wr[1:], wi[1:], total, False
                    if its > 0 and its % 10 == 0:
                        t += x
                        idx = np.arange(1, nn + 1)
                        a[idx, idx] -= x
                        s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                        x = y = 0.75 * s
                        w = -0.4375 * s * s
                    its += 1
                    total += 1
                    m = nn - 2
                    while m >= l:
                        z = a[m, m]
                        r = x - z
                        s = y - z
                        p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                        q = a[m + 1, m + 1] - z - r - s
                        r = a[m + 2, m + 1]
                        s = abs(p) + abs(q) + abs(r)
                        p /= s
                        q /= s
                        r /= s
                        if m == l:
                            break
                        u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                        v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                        if u + v == v:
                            break
                        m -= 1
                    for i in range(m + 2, nn + 1):
                        a[i, i - 2] = 0.0
                        if i != m + 2:
                            a[i, i - 3] = 0.0
                    for k in range(m, nn):
                        if k != m:
                            p = a[k, k - 1]
                            q = a[k + 1, k - 1]
                            r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                            x = abs(p) + abs(q) + abs(r)
                            if x != 0.0:
                                p /= x
                                q /= x
                                r /= x
                        s = math.sqrt(p * p + q * q + r * r)
                        if p < 0.0:
                            s = -s
                        if s == 0.0:
                            continue
                        if k == m:
                            if l != m:
                                a[k, k - 1] = -a[k, k - 1]
                        else:
                            a[k, k - 1] = -s * x
                        p += s
                        x = p / s
                        y = q / s
                        z = r / s
                        q /= p
                        r /= p
                        cols = slice(k, nn + 1)
                        pv = a[k, cols] + q * a[k + 1, cols]
                        if k != nn - 1:
                            pv = pv + r * a[k + 2, cols]
                            a[k + 2, cols] -= pv * z
                        a[k + 1, cols] -= pv * y
                        a[k, cols] -= pv * x
                        mmin = min(nn, k + 3)
                        rows = slice(l, mmin + 1)
                        pv = x * a[rows, k] + y * a[rows, k + 1]
                        if k != nn - 1:
                            pv = pv + z * a[rows, k + 2]
                            a[rows, k + 2] -= pv * r
                        a[rows, k + 1] -= pv * q
                        a[rows, k] -= pv
            if l >= nn - 1:
                break
    return wr[1:], wi[1:], total, True
