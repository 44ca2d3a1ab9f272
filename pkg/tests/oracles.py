"""Independent reference implementations used only by the tests."""
import math

import numpy as np
from scipy.integrate import solve_ivp


def dense_gp(X, S, noise_var, mean_fn, kern_fns, Xe):
    """Full 3n x 3n GP posterior by explicit dense inversion.

    ``kern_fns[i](x, x2)`` is the scalar kernel of output i and ``mean_fn(x)``
    a 3-vector. Returns means (k, 3), covariances (k, 3, 3) and the log
    marginal likelihood.
    """
    n = len(X)
    K = np.zeros((3 * n, 3 * n))
    for a in range(n):
        for b in range(n):
            for i in range(3):
                K[3 * a + i, 3 * b + i] = kern_fns[i](X[a], X[b])
    Sig = np.diag(np.asarray(noise_var).reshape(-1))
    s = np.asarray(S).reshape(-1)
    mu_bar = np.concatenate([mean_fn(x) for x in X])
    Ainv = np.linalg.inv(K + Sig)
    r = s - mu_bar
    _, logdet = np.linalg.slogdet(K + Sig)
    lml = -0.5 * r @ Ainv @ r - 0.5 * logdet - 1.5 * n * math.log(2 * math.pi)
    means, covs = [], []
    for xe in Xe:
        ke = np.zeros((3 * n, 3))
        for a in range(n):
            for i in range(3):
                ke[3 * a + i, i] = kern_fns[i](xe, X[a])
        kee = np.diag([kern_fns[i](xe, xe) for i in range(3)])
        means.append(ke.T @ Ainv @ r + mean_fn(xe))
        covs.append(kee - ke.T @ Ainv @ ke)
    return np.array(means), np.array(covs), lml


def blr_mean(X, y, noise_var, Xe):
    """Bayesian linear regression with unit Gaussian prior on the weights."""
    A = X.T @ (X / noise_var[:, None]) + np.eye(X.shape[1])
    w = np.linalg.solve(A, X.T @ (y / noise_var))
    return Xe @ w


def wls(X, y, sigma):
    w = 1.0 / sigma ** 2
    return np.linalg.solve(X.T @ (X * w[:, None]), X.T @ (w * y))


def integrate_twist(vx, vy, w, duration=1.0):
    """Numerically integrate a constant body twist from the origin."""
    def rhs(t, q):
        c, s = math.cos(q[2]), math.sin(q[2])
        return [vx * c - vy * s, vx * s + vy * c, w]
    sol = solve_ivp(rhs, (0.0, duration), [0.0, 0.0, 0.0], rtol=1e-12, atol=1e-14)
    return sol.y[:, -1]


def naive_oplus(a, b):
    return (a[0] + b[0] * math.cos(a[2]) - b[1] * math.sin(a[2]),
            a[1] + b[0] * math.sin(a[2]) + b[1] * math.cos(a[2]),
            a[2] + b[2])


def naive_ominus(a):
    return (-a[0] * math.cos(a[2]) - a[1] * math.sin(a[2]),
            a[0] * math.sin(a[2]) - a[1] * math.cos(a[2]),
            -a[2])


def naive_rpe(est, ref):
    tot = 0.0
    for k in range(len(est) - 1):
        de = naive_oplus(naive_ominus(est[k]), est[k + 1])
        dr = naive_oplus(naive_ominus(ref[k]), ref[k + 1])
        e = naive_oplus(naive_ominus(de), dr)
        tot += e[0] ** 2 + e[1] ** 2
    return math.sqrt(tot / (len(est) - 1))


def naive_ate(est, ref):
    tot = 0.0
    for a, b in zip(est, ref):
        e = naive_oplus(naive_ominus(a), b)
        tot += e[0] ** 2 + e[1] ** 2
    return math.sqrt(tot / len(est))


def lml_output_highprec(X, y, noise, sigma, b, rbf=True, linear=False, dps=30):
    """Log marginal likelihood of one scalar output in extended precision.

    Drops the constant ``-n/2 log 2 pi``. Used as a finite-difference
    reference where float64 round-off would swamp the difference quotient.
    """
    import mpmath as mp

    with mp.workdps(dps):
        n, m = X.shape
        Xm = [[mp.mpf(float(v)) for v in row] for row in X]
        A = mp.matrix(n, n)
        for a in range(n):
            for c in range(a, n):
                v = mp.mpf(0)
                if rbf:
                    d2 = sum((Xm[a][k] - Xm[c][k]) ** 2 / b[k] for k in range(m))
                    v += sigma ** 2 * mp.exp(-d2 / 2)
                if linear:
                    v += sum(Xm[a][k] * Xm[c][k] for k in range(m))
                if a == c:
                    v += mp.mpf(float(noise[a]))
                A[a, c] = A[c, a] = v
        L = mp.cholesky(A)
        z = mp.cholesky_solve(A, mp.matrix([mp.mpf(float(v)) for v in y]))
        quad = sum(mp.mpf(float(y[k])) * z[k] for k in range(n))
        logdet = 2 * sum(mp.log(L[k, k]) for k in range(n))
        return -quad / 2 - logdet / 2


def fd_gradient_highprec(X, y, noise, theta, rbf=True, linear=False, h=1e-5, dps=30):
    """Central differences of :func:`lml_output_highprec` in ``theta = [log sigma, log b]``."""
    import mpmath as mp

    with mp.workdps(dps):
        th = [mp.mpf(float(t)) for t in theta]
        out = []
        for p in range(len(th)):
            vals = []
            for sgn in (1, -1):
                t = list(th)
                t[p] += sgn * mp.mpf(h)
                vals.append(lml_output_highprec(X, y, noise, mp.exp(t[0]), [mp.exp(v) for v in t[1:]],
                                                rbf, linear, dps))
            out.append(float((vals[0] - vals[1]) / (2 * mp.mpf(h))))
        return np.array(out)
