"""Internal solvers for small constrained concave problems.

Everything here operates on explicit polytopes in low dimension. The main
entry points are:

* ``full_dim_reduce``    -- rewrite a polytope on its affine hull so the
  reduced system has a strictly feasible interior point,
* ``barrier_maximize``   -- log-barrier path following for a smooth
  concave objective over a full-dimensional polytope, followed by an
  active-face Newton polish; returns a duality-gap certificate,
* ``project_onto_polytope`` -- Euclidean projection via a primal
  active-set method (used for strategy perturbations and tie-breaking).

Objectives are supplied as ``SmoothObjective`` with value/gradient/Hessian
callbacks. A value of ``-inf`` outside the objective's own domain is
allowed; line searches back off until the argument is inside again.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .constraints import Polytope
from .errors import NumericalError


@dataclass
class SmoothObjective:
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]


@dataclass
class ReducedPolytope:
    """Polytope rewritten as {z0 + B a : Gr a <= hr} with interior."""

    z0: np.ndarray          # particular point in the ambient space
    B: np.ndarray           # (n_ambient, d) orthonormal columns
    Gr: np.ndarray          # (m, d)
    hr: np.ndarray          # (m,)
    interior: np.ndarray    # strictly feasible reduced point (d,)
    min_slack: float

    @property
    def dim(self) -> int:
        return self.B.shape[1]

    def to_ambient(self, a: np.ndarray) -> np.ndarray:
        return self.z0 + self.B @ a

    def to_reduced(self, z: np.ndarray) -> np.ndarray:
        return self.B.T @ (z - self.z0)

    def reduced_vertices(self) -> np.ndarray:
        if self.dim == 0:
            return np.zeros((1, 0))
        return Polytope(self.dim, self.Gr, self.hr).vertices()


def _nullspace_cols(E: np.ndarray, n: int, rcond: float = 1e-10) -> np.ndarray:
    """Orthonormal columns spanning {z : E z = 0}."""
    if len(E) == 0:
        return np.eye(n)
    u, s, vt = np.linalg.svd(E)
    rank = int(np.sum(s > rcond * (s[0] if len(s) else 1.0)))
    return vt[rank:].T


def full_dim_reduce(poly: Polytope, max_rounds: int = 10) -> ReducedPolytope:
    """Reduce a non-empty polytope to a full-dimensional system.

    Equality rows and implicit equalities among the inequalities are
    folded into the affine hull until the remaining system has a point
    with strictly positive slack on every row (or dimension zero).
    """
    n = poly.n
    E = poly.E.copy() if len(poly.f) else np.zeros((0, n))
    f = poly.f.copy() if len(poly.f) else np.zeros(0)
    G, h = poly.G.copy(), poly.h.copy()
    z0 = np.zeros(n)
    B = np.eye(n)

    for _ in range(max_rounds):
        if len(f):
            sol, *_ = np.linalg.lstsq(E, f, rcond=None)
            if np.max(np.abs(E @ sol - f)) > 1e-8 * (1 + np.abs(f).max()):
                raise NumericalError("inconsistent equality system in constraint set")
            N = _nullspace_cols(E, E.shape[1])
            z0 = z0 + B @ sol
            if len(h):
                h = h - G @ sol
                G = G @ N
            else:
                G = np.zeros((0, N.shape[1]))
            B = B @ N
            E, f = np.zeros((0, B.shape[1])), np.zeros(0)
        d = B.shape[1]
        if d == 0:
            if len(h) and np.min(h) < -1e-9:
                raise NumericalError("constraint set is empty")
            return ReducedPolytope(z0, B, np.zeros((0, 0)), np.zeros(0),
                                   np.zeros(0), np.inf)
        red = Polytope(d, G if len(h) else None, h if len(h) else None)
        point, slack = red.max_slack_point()
        if point is None:
            raise NumericalError("constraint set is empty")
        if slack > 1e-9 or len(h) == 0:
            pruned = red.prune() if len(h) > 2 * d + 2 else red
            if len(pruned.h) and not pruned.contains(point, tol=1e-9):
                pruned = red  # pruning was too aggressive; keep original rows
            return ReducedPolytope(z0, B, pruned.G, pruned.h, point, slack)
        # fold in implicit equalities: rows whose slack cannot be positive
        norms = np.linalg.norm(G, axis=1)
        norms[norms == 0] = 1.0
        implicit = []
        for i in range(len(h)):
            val, _ = red.support(-G[i])  # max of -G_i a  ==  -(min of G_i a)
            best_slack = (h[i] + val) / norms[i]
            if best_slack < 1e-9:
                implicit.append(i)
        if not implicit:
            return ReducedPolytope(z0, B, G, h, point, slack)
        E, f = G[implicit], h[implicit]
        keep = [i for i in range(len(h)) if i not in implicit]
        G, h = G[keep], h[keep]
    raise NumericalError("affine-hull reduction did not terminate")


def _newton_direction(neg_hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        d = np.linalg.solve(neg_hess, grad)
    except np.linalg.LinAlgError:
        d, *_ = np.linalg.lstsq(neg_hess, grad, rcond=None)
    if not np.all(np.isfinite(d)):
        d, *_ = np.linalg.lstsq(neg_hess, grad, rcond=None)
    return d


def _guarded_step(value_fn, a, d, f0, slope, max_step) -> tuple[np.ndarray, float]:
    """Armijo backtracking along d; -inf values shrink the step."""
    step = max_step
    gain = 1e-4 * max(slope, 0.0)
    for _ in range(80):
        cand = a + step * d
        fc = value_fn(cand)
        if np.isfinite(fc) and fc >= f0 + step * gain:
            return cand, fc
        step *= 0.5
    return a, f0


def barrier_maximize(obj: SmoothObjective, G: np.ndarray, h: np.ndarray,
                     a0: np.ndarray, gap_tol: float = 1e-11,
                     t0: float = 1.0, mu: float = 30.0,
                     max_newton: int = 2000) -> tuple[np.ndarray, float]:
    """Maximize a concave objective over {a : G a <= h} from a strict start.

    Returns (argmax estimate, duality gap bound m/t). The bound also
    limits, for every feasible point z, how negative
    <grad f(a*), a* - z> can be, which is what the first-order
    inequality checks rely on.
    """
    d = len(a0)
    m = len(h)
    if d == 0:
        return a0.copy(), 0.0
    if m == 0:
        raise NumericalError("barrier_maximize needs at least one inequality row")
    a = a0.copy()
    if np.min(h - G @ a) <= 0 or not np.isfinite(obj.value(a)):
        raise NumericalError("barrier start is not strictly feasible")
    t = t0
    used = 0

    def center_value(t, a):
        s = h - G @ a
        if np.min(s) <= 0:
            return -np.inf
        fv = obj.value(a)
        if not np.isfinite(fv):
            return -np.inf
        return t * fv + np.sum(np.log(s))

    while True:
        for _ in range(100):
            used += 1
            if used > max_newton:
                raise NumericalError("barrier solver exceeded its Newton budget")
            s = h - G @ a
            inv_s = 1.0 / s
            grad = t * obj.grad(a) - G.T @ inv_s
            neg_hess = -t * obj.hess(a) + G.T @ (G * (inv_s ** 2)[:, None])
            step_dir = _newton_direction(neg_hess, grad)
            decrement = float(grad @ step_dir)
            if decrement <= 2e-10:
                break
            gd = G @ step_dir
            pos = gd > 0
            max_step = 1.0
            if np.any(pos):
                max_step = min(1.0, 0.99 * float(np.min(s[pos] / gd[pos])))
            f0 = center_value(t, a)
            a, _ = _guarded_step(lambda z: center_value(t, z), a, step_dir,
                                 f0, decrement, max_step)
        gap = m / t
        if gap <= gap_tol:
            return a, gap
        t *= mu


def face_polish(obj: SmoothObjective, G: np.ndarray, h: np.ndarray,
                a: np.ndarray, act_tol: Optional[float] = None,
                grad_tol: float = 1e-12) -> np.ndarray:
    """Newton refinement on the active face identified by a barrier solve.

    Returns the polished point when it is feasible, does not decrease the
    objective, and passes a sign check of the face multipliers; otherwise
    returns the input point unchanged.
    """
    d = len(a)
    if d == 0:
        return a
    scale = 1.0 + float(np.abs(h).max(initial=0.0))
    if act_tol is None:
        act_tol = 1e-6 * scale
    s = h - G @ a
    active = np.flatnonzero(s < act_tol)
    Ga, ha = G[active], h[active]
    z = a.copy()
    if len(active):
        # land exactly on the face
        try:
            corr, *_ = np.linalg.lstsq(Ga, ha - Ga @ z, rcond=None)
        except np.linalg.LinAlgError:
            return a
        z = z + corr
        Z = _nullspace_cols(Ga, d)
    else:
        Z = np.eye(d)
    if not np.isfinite(obj.value(z)):
        return a
    inactive = np.setdiff1d(np.arange(len(h)), active)

    if Z.shape[1] > 0:
        for _ in range(30):
            g_u = Z.T @ obj.grad(z)
            if np.linalg.norm(g_u) <= grad_tol * scale:
                break
            H_u = Z.T @ obj.hess(z) @ Z
            du = _newton_direction(-H_u, g_u)
            if float(g_u @ du) <= 0:
                du = g_u
            step_dir = Z @ du
            gd = G[inactive] @ step_dir if len(inactive) else np.zeros(0)
            slack_in = h[inactive] - G[inactive] @ z if len(inactive) else np.zeros(0)
            pos = gd > 1e-14
            max_step = 1.0
            if np.any(pos):
                max_step = min(1.0, 0.995 * float(np.min(slack_in[pos] / gd[pos])))
            f0 = obj.value(z)
            z, _ = _guarded_step(obj.value, z, step_dir, f0,
                                 float(g_u @ du), max_step)

    # acceptance checks: feasibility, objective, multiplier signs
    if len(h) and np.max(G @ z - h) > 1e-10 * scale:
        return a
    fz, fa = obj.value(z), obj.value(a)
    if not np.isfinite(fz) or fz < fa - 1e-11 * (1 + abs(fa)):
        return a
    if len(active):
        grad = obj.grad(z)
        lam, *_ = np.linalg.lstsq(Ga.T, grad, rcond=None)
        resid = np.linalg.norm(Ga.T @ lam - grad)
        interior_grad = np.linalg.norm(Z.T @ grad) if Z.shape[1] else 0.0
        if resid > max(1e-7, 1e3 * interior_grad + 1e-9) or np.min(lam) < -1e-7:
            # keep the polished point only if it is at least as good and
            # feasible; the barrier certificate still applies to `a`
            return z if fz >= fa else a
    return z


def project_onto_polytope(poly: Polytope, x: np.ndarray,
                          start: Optional[np.ndarray] = None,
                          max_iter: int = 200) -> np.ndarray:
    """Euclidean projection of x onto the polytope (primal active set).

    ``start`` must be feasible when given; otherwise a feasibility LP
    provides one. Exact for polytopes of the small sizes used here.
    """
    n = poly.n
    if n == 0:
        return np.zeros(0)
    x = np.asarray(x, dtype=float)
    if start is None or not poly.contains(start):
        start = poly.feasible_point()
        if start is None:
            raise NumericalError("cannot project onto an empty polytope")
    z = np.asarray(start, dtype=float).copy()
    G, h, E, f = poly.G, poly.h, poly.E, poly.f
    m = len(h)
    scale = 1.0 + float(np.linalg.norm(x))
    work = set(np.flatnonzero(G @ z >= h - 1e-11 * scale)) if m else set()

    for _ in range(max_iter):
        idx = sorted(work)
        A = np.vstack([G[idx], E]) if (idx or len(f)) else np.zeros((0, n))
        b = np.concatenate([h[idx], f]) if (idx or len(f)) else np.zeros(0)
        if len(b):
            M = A @ A.T
            rhs = A @ x - b
            try:
                nu = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                nu, *_ = np.linalg.lstsq(M, rhs, rcond=None)
            target = x - A.T @ nu
        else:
            nu = np.zeros(0)
            target = x.copy()
        d = target - z
        if np.linalg.norm(d) <= 1e-13 * scale:
            if not idx:
                return z
            mults = nu[:len(idx)]
            j = int(np.argmin(mults))
            if mults[j] >= -1e-10 * scale:
                return z
            work.discard(idx[j])
            continue
        # ratio test against rows not in the working set
        others = [i for i in range(m) if i not in work]
        tau = 1.0
        blocker = None
        if others:
            Gd = G[others] @ d
            slack = h[others] - G[others] @ z
            for i, (gd, sl) in enumerate(zip(Gd, slack)):
                if gd > 1e-14 * scale:
                    t_i = sl / gd
                    if t_i < tau - 1e-15:
                        tau = max(t_i, 0.0)
                        blocker = others[i]
        z = z + tau * d
        if blocker is not None:
            work.add(blocker)
    # active-set cycling is pathological at these sizes; fail loudly
    raise NumericalError("projection did not converge")
