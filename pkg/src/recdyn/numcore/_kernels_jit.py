"""Loop-form dense kernels, compiled with numba when it is enabled.

Every kernel takes and returns plain float64 arrays and reports failure through
status values rather than exceptions, so the same source compiles in nopython
mode.
"""
import math

import numpy as np

from .._accel import njit


@njit
def jacobi_svd(x, want_v, tol, max_sweeps):
    """One-sided (Hestenes) Jacobi on the rows of ``x``.

    ``x`` has shape (n, m) with n <= m and holds the columns of the target
    matrix as rows; it is orthogonalised in place. Returns (vt, sweeps,
    converged) where the rows of ``vt`` are the accumulated right rotations.
    """
    n, m = x.shape
    if want_v:
        vt = np.eye(n)
    else:
        vt = np.zeros((0, 0))
    norms = np.empty(n)
    frob2 = 0.0
    for i in range(n):
        acc = 0.0
        for k in range(m):
            acc += x[i, k] * x[i, k]
        frob2 += acc
    floor = 1e-15 * frob2
    converged = False
    sweeps = 0
    for sweep in range(max_sweeps):
        for i in range(n):
            acc = 0.0
            for k in range(m):
                acc += x[i, k] * x[i, k]
            norms[i] = acc
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = norms[p]
                beta = norms[q]
                gamma = 0.0
                for k in range(m):
                    gamma += x[p, k] * x[q, k]
                ag = abs(gamma)
                if ag <= floor or alpha * beta == 0.0:
                    continue
                rel = ag / math.sqrt(alpha * beta)
                if rel <= tol:
                    continue
                if rel > off:
                    off = rel
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + math.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    xp = x[p, k]
                    xq = x[q, k]
                    x[p, k] = c * xp - s * xq
                    x[q, k] = s * xp + c * xq
                norms[p] = alpha - t * gamma
                norms[q] = beta + t * gamma
                if want_v:
                    for k in range(n):
                        vp = vt[p, k]
                        vq = vt[q, k]
                        vt[p, k] = c * vp - s * vq
                        vt[q, k] = s * vp + c * vq
        sweeps = sweep + 1
        if off <= tol:
            converged = True
            break
    return vt, sweeps, converged


@njit
def householder_qr(a):
    """Reduced Householder QR of ``a`` (m, n), overwriting ``a``.

    Returns (q, r) with q of shape (m, k) and r of shape (k, n), k = min(m, n).
    """
    m, n = a.shape
    k = min(m, n)
    vs = np.zeros((k, m))
    betas = np.zeros(k)
    w = np.empty(n)
    for j in range(k):
        norm2 = 0.0
        for i in range(j, m):
            norm2 += a[i, j] * a[i, j]
        if norm2 == 0.0:
            continue
        xn = math.sqrt(norm2)
        x0 = a[j, j]
        alpha = -xn if x0 >= 0.0 else xn
        for i in range(j, m):
            vs[j, i] = a[i, j]
        vs[j, j] -= alpha
        vn2 = norm2 - x0 * x0 + vs[j, j] * vs[j, j]
        if vn2 == 0.0:
            continue
        beta = 2.0 / vn2
        betas[j] = beta
        for c in range(j, n):
            w[c] = 0.0
        for i in range(j, m):
            vi = vs[j, i]
            for c in range(j, n):
                w[c] += vi * a[i, c]
        for i in range(j, m):
            f = beta * vs[j, i]
            for c in range(j, n):
                a[i, c] -= f * w[c]
        a[j, j] = alpha
        for i in range(j + 1, m):
            a[i, j] = 0.0
    r = np.zeros((k, n))
    for i in range(k):
        for c in range(i, n):
            r[i, c] = a[i, c]
    q = np.zeros((m, k))
    for i in range(k):
        q[i, i] = 1.0
    wq = np.empty(k)
    for j in range(k - 1, -1, -1):
        beta = betas[j]
        if beta == 0.0:
            continue
        for c in range(k):
            wq[c] = 0.0
        for i in range(j, m):
            vi = vs[j, i]
            for c in range(k):
                wq[c] += vi * q[i, c]
        for i in range(j, m):
            f = beta * vs[j, i]
            for c in range(k):
                q[i, c] -= f * wq[c]
    return q, r


@njit
def hessenberg(a):
    """Reduce square ``a`` to upper Hessenberg form in place (Householder)."""
    n = a.shape[0]
    v = np.zeros(n)
    w = np.zeros(n)
    for k in range(n - 2):
        norm2 = 0.0
        for i in range(k + 1, n):
            norm2 += a[i, k] * a[i, k]
        if norm2 == 0.0:
            continue
        xn = math.sqrt(norm2)
        x0 = a[k + 1, k]
        alpha = -xn if x0 >= 0.0 else xn
        for i in range(k + 1, n):
            v[i] = a[i, k]
        v[k + 1] -= alpha
        vn2 = norm2 - x0 * x0 + v[k + 1] * v[k + 1]
        if vn2 == 0.0:
            continue
        beta = 2.0 / vn2
        # left reflection on rows k+1.., columns k..
        for j in range(k, n):
            w[j] = 0.0
        for i in range(k + 1, n):
            vi = v[i]
            for j in range(k, n):
                w[j] += vi * a[i, j]
        for i in range(k + 1, n):
            f = beta * v[i]
            for j in range(k, n):
                a[i, j] -= f * w[j]
        # right reflection on all rows, columns k+1..
        for i in range(n):
            acc = 0.0
            for j in range(k + 1, n):
                acc += a[i, j] * v[j]
            acc *= beta
            for j in range(k + 1, n):
                a[i, j] -= acc * v[j]
        a[k + 1, k] = alpha
        for i in range(k + 2, n):
            a[i, k] = 0.0
    return a


@njit
def hessenberg_eigenvalues(h, tol, max_iter):
    """Eigenvalues of upper Hessenberg ``h`` by Francis double-shift QR.

    Returns (re, im, iterations, converged). Indices inside run from 1 to n
    on a padded copy to keep the bulge-chasing index arithmetic readable.
    """
    n = h.shape[0]
    a = np.zeros((n + 1, n + 1))
    for i in range(n):
        for j in range(n):
            a[i + 1, j + 1] = h[i, j]
    wr = np.zeros(n + 1)
    wi = np.zeros(n + 1)
    anorm = 0.0
    for i in range(1, n + 1):
        for j in range(max(i - 1, 1), n + 1):
            anorm += abs(a[i, j])
    nn = n
    t = 0.0
    total = 0
    x = 0.0
    y = 0.0
    z = 0.0
    w = 0.0
    p = 0.0
    q = 0.0
    r = 0.0
    s = 0.0
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
                        wr[nn - 1] = x + z
                        wr[nn] = x + z
                        if z != 0.0:
                            wr[nn] = x - w / z
                        wi[nn - 1] = 0.0
                        wi[nn] = 0.0
                    else:
                        wr[nn - 1] = x + p
                        wr[nn] = x + p
                        wi[nn - 1] = -z
                        wi[nn] = z
                    nn -= 2
                else:
                    if total >= max_iter:
                        return wr[1:], wi[1:], total, False
                    if its > 0 and its % 10 == 0:
                        # exceptional shift
                        t += x
                        for i in range(1, nn + 1):
                            a[i, i] -= x
                        s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                        x = 0.75 * s
                        y = x
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
                            r = 0.0
                            if k != nn - 1:
                                r = a[k + 2, k - 1]
                            x = abs(p) + abs(q) + abs(r)
                            if x != 0.0:
                                p /= x
                                q /= x
                                r /= x
                        s = math.sqrt(p * p + q * q + r * r)
                        if p < 0.0:
                            s = -s
                        if s != 0.0:
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
                            for j in range(k, nn + 1):
                                p = a[k, j] + q * a[k + 1, j]
                                if k != nn - 1:
                                    p += r * a[k + 2, j]
                                    a[k + 2, j] -= p * z
                                a[k + 1, j] -= p * y
                                a[k, j] -= p * x
                            mmin = nn if nn < k + 3 else k + 3
                            for i in range(l, mmin + 1):
                                p = x * a[i, k] + y * a[i, k + 1]
                                if k != nn - 1:
                                    p += z * a[i, k + 2]
                                    a[i, k + 2] -= p * r
                                a[i, k + 1] -= p * q
                                a[i, k] -= p
            if l >= nn - 1:
                break
    return wr[1:], wi[1:], total, True
