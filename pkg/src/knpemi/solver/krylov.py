"""Restarted GMRES, flexible GMRES and preconditioned CG."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sparse import dot, norm


class NegativeCurvatureError(ArithmeticError):
    """CG met a direction of nonpositive curvature: the matrix is not SPD."""


@dataclass(frozen=True)
class KrylovConfig:
    restart: int = 30
    tol: float = 1e-6
    maxiter: int = 1000

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError("restart length must be >= 1")
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.maxiter < 1:
            raise ValueError("maxiter must be >= 1")


@dataclass
class KrylovResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)  # relative, one per iteration (+ initial)


def _identity(r):
    return r.copy()


def _matvec(A):
    return A.matvec if hasattr(A, "matvec") else (lambda v: A @ v)


def _givens(a: float, b: float):
    if b == 0.0:
        return 1.0, 0.0
    if a == 0.0:
        return 0.0, 1.0
    h = np.hypot(a, b)
    return a / h, b / h


def _arnoldi_cycle(op, v0, beta, m, stop, flexible_prec=None):
    """One GMRES cycle of at most ``m`` steps on ``op`` from ``v0``.

    Returns the basis coefficients, the basis (the preconditioned basis when
    flexible) and the per-step residual estimates.  A happy breakdown ends
    the cycle early.
    """
    n = v0.size
    V = np.empty((m + 1, n))
    Z = np.empty((m, n)) if flexible_prec is not None else None
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = v0 / beta
    estimates = []
    k = 0
    for j in range(m):
        if flexible_prec is not None:
            Z[j] = flexible_prec(V[j])
            w = op(Z[j])
        else:
            w = op(V[j])
        for i in range(j + 1):  # modified Gram-Schmidt
            H[i, j] = dot(w, V[i])
            w -= H[i, j] * V[i]
        H[j + 1, j] = norm(w)
        breakdown = H[j + 1, j] <= 1e-14 * max(abs(H[: j + 1, j]).max(), 1e-300)
        if not breakdown:
            V[j + 1] = w / H[j + 1, j]
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
        H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        estimates.append(abs(g[j + 1]))
        if breakdown or stop(abs(g[j + 1]), k):
            break
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):  # back substitution
        if H[i, i] != 0.0:
            y[i] = (g[i] - H[i, i + 1 : k] @ y[i + 1 : k]) / H[i, i]
    basis = Z[:k] if Z is not None else V[:k]
    return y, basis, estimates


def _combine(basis, y):
    out = np.zeros(basis.shape[1])
    for i in range(y.size):  # fixed order for reproducibility
        out += y[i] * basis[i]
    return out


def gmres(A, b, x0=None, precond=None, config: KrylovConfig = KrylovConfig()) -> KrylovResult:
    """Left-preconditioned restarted GMRES.

    Stops when ``||P^{-1}(b - A x)|| <= tol ||P^{-1} b||``.  The iteration count
    is the total number of Arnoldi steps.
    """
    matvec = _matvec(A)
    M = precond or _identity
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    ref = norm(M(b))
    if ref == 0.0:
        return KrylovResult(np.zeros_like(b), 0, True, [0.0])

    def op(v):
        return M(matvec(v))

    its = 0
    history = []
    while True:
        r = M(b - matvec(x))
        beta = norm(r)
        if not history:
            history.append(beta / ref)
        if beta <= config.tol * ref:
            return KrylovResult(x, its, True, history)
        if its >= config.maxiter:
            return KrylovResult(x, its, False, history)
        m = min(config.restart, config.maxiter - its)

        def stop(res, k):
            return res <= config.tol * ref

        y, V, est = _arnoldi_cycle(op, r, beta, m, stop)
        x = x + _combine(V, y)
        its += len(est)
        history.extend(e / ref for e in est)
        if est and est[-1] <= config.tol * ref:
            # confirm on the explicitly recomputed residual
            r = M(b - matvec(x))
            if norm(r) <= config.tol * ref:
                return KrylovResult(x, its, True, history)


def fgmres(A, b, x0=None, precond=None, config: KrylovConfig = KrylovConfig()) -> KrylovResult:
    """Right-preconditioned flexible GMRES (the preconditioner may vary per step).

    Stops when ``||b - A x|| <= tol ||b||``.
    """
    matvec = _matvec(A)
    M = precond or _identity
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    ref = norm(b)
    if ref == 0.0:
        return KrylovResult(np.zeros_like(b), 0, True, [0.0])
    its = 0
    history = []
    while True:
        r = b - matvec(x)
        beta = norm(r)
        if not history:
            history.append(beta / ref)
        if beta <= config.tol * ref:
            return KrylovResult(x, its, True, history)
        if its >= config.maxiter:
            return KrylovResult(x, its, False, history)
        m = min(config.restart, config.maxiter - its)

        def stop(res, k):
            return res <= config.tol * ref

        y, Z, est = _arnoldi_cycle(matvec, r, beta, m, stop, flexible_prec=M)
        x = x + _combine(Z, y)
        its += len(est)
        history.extend(e / ref for e in est)


def cg(A, b, x0=None, precond=None, tol: float = 1e-8, maxiter: int = 10000, name: str = "matrix"):
    """Preconditioned conjugate gradients; returns ``(x, iterations)``.

    Stops when ``||b - A x|| <= tol ||b||``.
    """
    matvec = _matvec(A)
    M = precond or _identity
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    r = b - matvec(x)
    if norm(r) <= tol * bnorm:
        return x, 0
    z = M(r)
    p = z.copy()
    rz = dot(r, z)
    for it in range(1, maxiter + 1):
        q = matvec(p)
        curv = dot(p, q)
        if curv <= 0.0:
            raise NegativeCurvatureError(f"{name}: nonpositive curvature {curv:.3e} at CG iteration {it}")
        a = rz / curv
        x += a * p
        r -= a * q
        if norm(r) <= tol * bnorm:
            return x, it
        z = M(r)
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ArithmeticError(f"{name}: CG did not converge in {maxiter} iterations")
