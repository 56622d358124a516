"""Small numerical utilities shared across the package."""

import numpy as np


def to_complex(vec):
    """Alpha-beta 2-vector (a, b) -> a + jb.

    In this embedding a rotation by angle x is multiplication by exp(jx) and
    the quarter-turn J is multiplication by j, which is what the network and
    simulation modules use internally.
    """
    v = np.asarray(vec, dtype=float)
    return complex(v[0], v[1])


def to_alphabeta(z):
    """Complex a + jb -> alpha-beta 2-vector (a, b)."""
    z = complex(z)
    return np.array([z.real, z.imag])


def rk4_scalar(f, y0, t_grid, max_dt):
    """Classic RK4 on an autonomous scalar ODE dy/dt = f(y).

    Integrates along ``t_grid`` (plain floats for speed), subdividing each
    interval into equal substeps no longer than ``max_dt``.  Returns the
    solution sampled at ``t_grid``.
    """
    y = float(y0)
    ys = [y]
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        span = float(t1 - t0)
        n = max(1, int(np.ceil(span / max_dt - 1e-12)))
        h = span / n
        for _ in range(n):
            k1 = f(y)
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ys.append(y)
    return np.array(ys)


def bracketed_root(f, lo, hi, bisect_iters=60, newton_iters=10):
    """Root of f on [lo, hi]: bisection to localize, then Newton polish.

    Requires a sign change on the bracket; the Newton stage uses a numeric
    derivative and never leaves the bisection interval.
    """
    flo = f(lo)
    fhi = f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise ValueError(f"no sign change on bracket [{lo:g}, {hi:g}]")
    a, b, fa = float(lo), float(hi), flo
    for _ in range(bisect_iters):
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0.0:
            return m
        if fa * fm < 0.0:
            b = m
        else:
            a, fa = m, fm
    x = 0.5 * (a + b)
    for _ in range(newton_iters):
        fx = f(x)
        h = 1e-7 * max(1.0, abs(x))
        dfx = (f(x + h) - f(x - h)) / (2.0 * h)
        if dfx == 0.0:
            break
        step = fx / dfx
        xn = x - step
        if not (a <= xn <= b):
            break
        x = xn
        if abs(step) <= 1e-15 * max(1.0, abs(x)):
            break
    return x


def _numeric_jacobian(residual, x, r0):
    m = len(np.atleast_1d(r0))
    n = len(x)
    jac = np.empty((m, n))
    for k in range(n):
        h = 1e-6 * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        jac[:, k] = (np.asarray(residual(xp)) - np.asarray(residual(xm))) / (2.0 * h)
    return jac


def gauss_newton(residual, x0, tol=1e-12, max_iter=100):
    """Damped Gauss-Newton least squares with a numeric Jacobian.

    Suited to the tiny (<= a few unknowns) power-flow matching problems in
    this package.  Returns ``(x, r, converged, n_iter)`` where ``r`` is the
    residual vector at ``x``; ``converged`` means the step size dropped below
    ``tol`` (the residual itself may be nonzero for inconsistent problems).
    """
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(residual(x), dtype=float)
    for it in range(1, max_iter + 1):
        jac = _numeric_jacobian(residual, x, r)
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        if not np.all(np.isfinite(step)):
            return x, r, False, it
        lam = 1.0
        base = float(r @ r)
        xn, rn = x, r
        for _ in range(40):
            xn = x + lam * step
            rn = np.asarray(residual(xn), dtype=float)
            if float(rn @ rn) <= base or lam < 1e-12:
                break
            lam *= 0.5
        x, r = xn, rn
        if np.linalg.norm(lam * step) <= tol * max(1.0, np.linalg.norm(x)):
            return x, r, True, it
    return x, r, False, max_iter
