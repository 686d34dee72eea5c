"""Convex portfolio constraint sets and their geometry.

Constraint sets are explicit convex polytopes (finite systems of linear
inequalities, optionally with equality rows). The exogenous-side set A
lives in R^{N1}, the endogenous-side set B in R^{N2}; the joint feasible
set is the product intersected with the budget set
H = {(a, b): b >= 0, <e,a> in [0,1], <e,b> = 1 - <e,a>}.

The module provides the null-investment space L (zero-cost exogenous
portfolios with zero value on every support point), the projection of A
onto the orthogonal complement of L, detection of unbounded arbitrage
directions in the recession cone of A, and feasibility search for a
portfolio with strictly positive value on every support point.

Assumption labels used in error messages and validation reports:
  (A.1) every a in A has non-negative value on each support point
        (enforced constructively by adding those rows to A),
  (A.2) some (a, b) in the joint set has strictly positive value on
        every support point,
  (A.3) the projection of A onto the complement of L stays inside A,
  (A.4) that projection is compact,
  (A.5) no arbitrage direction can be scaled without bound inside A
        (equivalent to (A.4) given (A.1) and (A.3)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .environment import ConditionalLaw
from .errors import AssumptionViolation, NumericalError

# Singular values below RANK_RCOND * largest are treated as zero when
# deciding the dimension of the null-investment space.
RANK_RCOND = 1e-9
_FEAS_TOL = 1e-9


def _lp(c, G=None, h=None, E=None, f=None, bounds=None):
    """Thin linprog wrapper (minimizes c @ z). Returns the OptimizeResult."""
    n = len(c)
    if bounds is None:
        bounds = [(None, None)] * n
    return linprog(c, A_ub=G, b_ub=h, A_eq=E, b_eq=f, bounds=bounds,
                   method="highs")


class Polytope:
    """Convex polyhedron {z : G z <= h, E z = f} in R^n.

    ``n = 0`` is allowed and denotes the single empty-vector point
    (feasible iff all inequality offsets are non-negative).
    """

    def __init__(self, n: int, G=None, h=None, E=None, f=None):
        self.n = int(n)
        self.G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
        self.h = np.zeros(0) if h is None else np.atleast_1d(np.asarray(h, dtype=float))
        self.E = np.zeros((0, n)) if E is None else np.atleast_2d(np.asarray(E, dtype=float))
        self.f = np.zeros(0) if f is None else np.atleast_1d(np.asarray(f, dtype=float))
        if self.G.shape != (len(self.h), n) or self.E.shape != (len(self.f), n):
            raise ValueError("inconsistent polytope system shapes")

    # -- basic predicates -------------------------------------------------

    def contains(self, z, tol: float = _FEAS_TOL) -> bool:
        z = np.asarray(z, dtype=float)
        scale = 1.0 + float(np.abs(z).max(initial=0.0))
        ok_ineq = self.G.size == 0 or np.all(self.G @ z <= self.h + tol * scale)
        ok_eq = self.E.size == 0 or np.all(np.abs(self.E @ z - self.f) <= tol * scale)
        return bool(ok_ineq and ok_eq)

    def intersect(self, other: "Polytope") -> "Polytope":
        assert self.n == other.n
        return Polytope(self.n,
                        np.vstack([self.G, other.G]), np.concatenate([self.h, other.h]),
                        np.vstack([self.E, other.E]), np.concatenate([self.f, other.f]))

    # -- LP-backed operations ---------------------------------------------

    def support(self, c) -> tuple[float, Optional[np.ndarray]]:
        """max <c, z> over the polytope; (value, argmax). inf if unbounded."""
        if self.n == 0:
            return 0.0, np.zeros(0)
        res = _lp(-np.asarray(c, dtype=float),
                  self.G if len(self.h) else None, self.h if len(self.h) else None,
                  self.E if len(self.f) else None, self.f if len(self.f) else None)
        if res.status == 3:
            return np.inf, None
        if not res.success:
            raise NumericalError(f"support LP failed: {res.message}")
        return float(-res.fun), res.x

    def feasible_point(self) -> Optional[np.ndarray]:
        """Any feasible point, or None if the polytope is empty."""
        if self.n == 0:
            return np.zeros(0) if np.all(self.h >= -_FEAS_TOL) and np.all(np.abs(self.f) <= _FEAS_TOL) else None
        res = _lp(np.zeros(self.n), self.G if len(self.h) else None,
                  self.h if len(self.h) else None,
                  self.E if len(self.f) else None,
                  self.f if len(self.f) else None)
        return res.x if res.success else None

    def max_slack_point(self, extra_G=None, extra_h=None,
                        include_own: bool = True) -> tuple[Optional[np.ndarray], float]:
        """Point maximizing the minimum slack of the selected (normalized) rows.

        The slack objective covers the polytope's own inequality rows when
        ``include_own`` and, additionally, any extra rows (same orientation
        G z <= h). Rows excluded from the objective remain hard
        constraints. Returns (point, achieved min slack); slack > 0 means
        strictly feasible for the selected rows.
        """
        if self.n == 0:
            ok = np.all(self.h >= -_FEAS_TOL) and np.all(np.abs(self.f) <= _FEAS_TOL)
            slack = float(self.h.min(initial=np.inf)) if include_own else np.inf
            if extra_h is not None and len(np.atleast_1d(extra_h)):
                slack = min(slack, float(np.atleast_1d(extra_h).min()))
            return (np.zeros(0), slack) if ok else (None, -np.inf)
        soft_G = self.G if include_own else np.zeros((0, self.n))
        soft_h = self.h if include_own else np.zeros(0)
        if extra_G is not None:
            soft_G = np.vstack([soft_G, np.atleast_2d(extra_G)])
            soft_h = np.concatenate([soft_h, np.atleast_1d(extra_h)])
        if len(soft_h) == 0:
            z = self.feasible_point()
            return z, np.inf if z is not None else -np.inf
        norms = np.linalg.norm(soft_G, axis=1)
        norms[norms == 0] = 1.0
        Gn, hn = soft_G / norms[:, None], soft_h / norms
        # variables (z, s): maximize s subject to Gn z + s <= hn, s <= 1,
        # and the hard rows of the polytope itself
        c = np.zeros(self.n + 1)
        c[-1] = -1.0
        A = np.hstack([Gn, np.ones((len(hn), 1))])
        b = hn.copy()
        if not include_own and len(self.h):
            A = np.vstack([A, np.hstack([self.G, np.zeros((len(self.h), 1))])])
            b = np.concatenate([b, self.h])
        A = np.vstack([A, np.concatenate([np.zeros(self.n), [1.0]])])
        b = np.concatenate([b, [1.0]])
        E = np.hstack([self.E, np.zeros((len(self.f), 1))]) if len(self.f) else None
        res = _lp(c, A, b, E, self.f if len(self.f) else None)
        if not res.success:
            return None, -np.inf
        return res.x[:-1], float(res.x[-1])

    def is_bounded(self, tol: float = 1e-9) -> bool:
        """True iff the recession cone {G z <= 0, E z = 0} is {0}."""
        if self.n == 0:
            return True
        box = [(-1.0, 1.0)] * self.n
        for i in range(self.n):
            for sign in (1.0, -1.0):
                c = np.zeros(self.n)
                c[i] = -sign
                res = _lp(c, self.G if len(self.h) else None,
                          np.zeros(len(self.h)) if len(self.h) else None,
                          self.E if len(self.f) else None,
                          np.zeros(len(self.f)) if len(self.f) else None,
                          bounds=box)
                if not res.success:
                    raise NumericalError(f"recession LP failed: {res.message}")
                if -res.fun > tol:
                    return False
        return True

    # -- vertex enumeration (small dimensions) ------------------------------

    def vertices(self, tol: float = 1e-9) -> np.ndarray:
        """Vertices by basis enumeration; intended for n <= ~6 and few rows."""
        if self.n == 0:
            return np.zeros((1, 0))
        rows = np.vstack([self.G, self.E])
        rhs = np.concatenate([self.h, self.f])
        n_eq = len(self.f)
        m = len(rhs)
        need = self.n - n_eq
        if need < 0:
            need = 0
        verts: list[np.ndarray] = []
        idx_ineq = range(len(self.h))
        for combo in combinations(idx_ineq, need):
            sel = list(combo) + list(range(len(self.h), m))
            A = rows[sel]
            if np.linalg.matrix_rank(A, tol=1e-10) < self.n:
                continue
            try:
                z, *_ = np.linalg.lstsq(A, rhs[sel], rcond=None)
            except np.linalg.LinAlgError:
                continue
            if np.max(np.abs(A @ z - rhs[sel])) > 1e-8:
                continue
            if self.contains(z, tol=1e-8):
                verts.append(z)
        if not verts:
            return np.zeros((0, self.n))
        V = np.array(verts)
        keep: list[int] = []
        for i, v in enumerate(V):
            if all(np.linalg.norm(v - V[j]) > 1e-8 for j in keep):
                keep.append(i)
        return V[keep]

    def prune(self) -> "Polytope":
        """Drop duplicate and LP-redundant inequality rows."""
        if len(self.h) == 0:
            return self
        norms = np.linalg.norm(self.G, axis=1)
        keep_rows, keep_rhs = [], []
        for g, b, nrm in zip(self.G, self.h, norms):
            if nrm < 1e-14:
                # 0 <= b always true for b >= 0; b < 0 makes the set empty
                if b < -1e-12:
                    keep_rows.append(g)
                    keep_rhs.append(b)
                continue
            gn, bn = g / nrm, b / nrm
            dup = any(np.linalg.norm(gn - g2 / np.linalg.norm(g2)) < 1e-12
                      and bn >= b2 / np.linalg.norm(g2) - 1e-12
                      for g2, b2 in zip(keep_rows, keep_rhs))
            if not dup:
                keep_rows.append(g)
                keep_rhs.append(b)
        G = np.array(keep_rows) if keep_rows else np.zeros((0, self.n))
        h = np.array(keep_rhs) if keep_rhs else np.zeros(0)
        if len(h) <= 1:
            return Polytope(self.n, G, h, self.E, self.f)
        final_G, final_h = [], []
        for i in range(len(h)):
            others = [j for j in range(len(h)) if j != i]
            sub = Polytope(self.n, G[others], h[others] + 1e-9, self.E, self.f)
            val, _ = sub.support(G[i])
            if val > h[i] + 1e-9:
                final_G.append(G[i])
                final_h.append(h[i])
        if not final_G:
            # keep one row to preserve a non-trivial system if everything
            # was mutually redundant (can happen with duplicated halfspaces)
            final_G, final_h = [G[0]], [h[0]]
        return Polytope(self.n, np.array(final_G), np.array(final_h), self.E, self.f)


def fourier_motzkin(G: np.ndarray, h: np.ndarray, col: int) -> tuple[np.ndarray, np.ndarray]:
    """Eliminate variable ``col`` from {G z <= h} by Fourier-Motzkin."""
    c = G[:, col]
    pos = np.flatnonzero(c > 1e-12)
    neg = np.flatnonzero(c < -1e-12)
    zero = np.flatnonzero(np.abs(c) <= 1e-12)
    rows, rhs = [], []
    for i in zero:
        rows.append(np.delete(G[i], col))
        rhs.append(h[i])
    for i in pos:
        gi, hi = G[i] / c[i], h[i] / c[i]
        for j in neg:
            gj, hj = G[j] / (-c[j]), h[j] / (-c[j])
            rows.append(np.delete(gi + gj, col))
            rhs.append(hi + hj)
    if not rows:
        return np.zeros((0, G.shape[1] - 1)), np.zeros(0)
    return np.array(rows), np.array(rhs)


# ---------------------------------------------------------------------------
# Constraint specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlphaSet:
    """Exogenous-side constraint description.

    kind: "full"      -- only the budget <e,a> in [0,1] (plus (A.1) rows),
          "nonneg"    -- additionally a >= 0,
          "leverage"  -- c|a+| >= |a-| with 0 <= c < 1 (c=0 forbids shorts),
          "box"       -- lower <= a <= upper (entries may be +-inf),
          "polytope"  -- explicit rows G a <= g, optional equalities.
    """

    kind: str = "nonneg"
    c: float = 0.0
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    E: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None

    def rows(self, n1: int) -> Polytope:
        """Budget + kind-specific rows (without the (A.1) rows)."""
        e = np.ones(n1)
        G = [e, -e]
        h = [1.0, 0.0]
        E: list[np.ndarray] = []
        f: list[float] = []
        if self.kind == "full":
            pass
        elif self.kind == "nonneg":
            for i in range(n1):
                r = np.zeros(n1)
                r[i] = -1.0
                G.append(r)
                h.append(0.0)
        elif self.kind == "leverage":
            if not 0.0 <= self.c < 1.0:
                raise ValueError("leverage coefficient must lie in [0, 1)")
            # c|a+| >= |a-|  <=>  for every sign pattern s in {0,1}^n:
            # sum_{i in S} (-a_i) - c * sum_{i not in S} a_i <= 0.
            # Equivalent compact form: for each i, requiring the positive
            # parts to cover the negative ones is not row-expressible per
            # coordinate, so enumerate sign patterns (n1 is small).
            for mask in range(1, 2 ** n1):
                r = np.zeros(n1)
                for i in range(n1):
                    if (mask >> i) & 1:
                        r[i] = -1.0
                    else:
                        r[i] = -self.c
                G.append(r)
                h.append(0.0)
        elif self.kind == "box":
            lo = np.full(n1, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
            up = np.full(n1, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
            for i in range(n1):
                r = np.zeros(n1)
                if np.isfinite(up[i]):
                    r[i] = 1.0
                    G.append(r.copy())
                    h.append(float(up[i]))
                if np.isfinite(lo[i]):
                    r[:] = 0.0
                    r[i] = -1.0
                    G.append(r.copy())
                    h.append(float(-lo[i]))
        elif self.kind == "polytope":
            if self.G is not None:
                for r, b in zip(np.atleast_2d(self.G), np.atleast_1d(self.g)):
                    G.append(np.asarray(r, dtype=float))
                    h.append(float(b))
            if self.E is not None:
                for r, b in zip(np.atleast_2d(self.E), np.atleast_1d(self.f)):
                    E.append(np.asarray(r, dtype=float))
                    f.append(float(b))
        else:
            raise ValueError(f"unknown alpha set kind {self.kind!r}")
        return Polytope(n1, np.array(G), np.array(h),
                        np.array(E) if E else None, np.array(f) if f else None)


@dataclass(frozen=True)
class BetaSet:
    """Endogenous-side constraint description.

    kind: "simplex"  -- b >= 0, <e,b> <= 1 (no constraints beyond budget),
          "polytope" -- additional explicit rows G b <= g.
    """

    kind: str = "simplex"
    G: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None

    @property
    def is_full_simplex(self) -> bool:
        return self.kind == "simplex"

    def rows(self, n2: int) -> Polytope:
        e = np.ones(n2)
        G = [e]
        h = [1.0]
        for i in range(n2):
            r = np.zeros(n2)
            r[i] = -1.0
            G.append(r)
            h.append(0.0)
        if self.kind == "polytope" and self.G is not None:
            for r, b in zip(np.atleast_2d(self.G), np.atleast_1d(self.g)):
                G.append(np.asarray(r, dtype=float))
                h.append(float(b))
        elif self.kind not in ("simplex", "polytope"):
            raise ValueError(f"unknown beta set kind {self.kind!r}")
        return Polytope(n2, np.array(G), np.array(h))


@dataclass(frozen=True)
class ConstraintSpec:
    """Product-form constraint set: (A x B) intersected with the budget set."""

    n1: int
    n2: int
    alpha_set: AlphaSet = field(default_factory=AlphaSet)
    beta_set: BetaSet = field(default_factory=BetaSet)

    def alpha_polytope(self, law: Optional[ConditionalLaw] = None) -> Polytope:
        """Compiled A, including the (A.1) rows <a, x_k> >= 0 when a law is given."""
        poly = self.alpha_set.rows(self.n1)
        if law is not None and self.n1 > 0:
            poly = poly.intersect(Polytope(self.n1, -law.x_vals, np.zeros(law.size)))
        return poly

    def beta_polytope(self) -> Polytope:
        return self.beta_set.rows(self.n2)

    def joint_polytope(self, law: Optional[ConditionalLaw] = None) -> Polytope:
        """Feasible (a, b) pairs: A rows, B rows and <e,a> + <e,b> = 1."""
        pa = self.alpha_polytope(law)
        pb = self.beta_polytope()
        n = self.n1 + self.n2
        G = np.zeros((len(pa.h) + len(pb.h), n))
        G[:len(pa.h), :self.n1] = pa.G
        G[len(pa.h):, self.n1:] = pb.G
        h = np.concatenate([pa.h, pb.h])
        E = np.zeros((len(pa.f) + 1, n))
        E[:len(pa.f), :self.n1] = pa.E
        E[-1] = np.ones(n)
        f = np.concatenate([pa.f, [1.0]])
        return Polytope(n, G, h, E, f)


@dataclass(frozen=True)
class NullSpaceBasis:
    """Orthonormal basis of the null-investment space L."""

    basis: np.ndarray  # (d, N1), rows orthonormal; d == 0 means L = {0}

    @property
    def dim(self) -> int:
        return self.basis.shape[0]


def null_space(law: ConditionalLaw) -> NullSpaceBasis:
    """Null investments: zero-cost portfolios with zero value on the support.

    Computed as the null space of the matrix stacking the all-ones row and
    every support return vector, with singular values below
    ``RANK_RCOND`` times the largest treated as zero.
    """
    n1 = law.num_exogenous
    if n1 < 1:
        raise ValueError("null_space requires at least one exogenous asset")
    M = np.vstack([np.ones(n1), law.x_vals])
    u, s, vt = np.linalg.svd(M)
    cutoff = RANK_RCOND * (s[0] if len(s) else 1.0)
    rank = int(np.sum(s > cutoff))
    return NullSpaceBasis(basis=vt[rank:].copy())


def orthogonal_complement(basis: NullSpaceBasis, n1: int) -> np.ndarray:
    """Orthonormal rows spanning the complement of the null-investment space."""
    if basis.dim == 0:
        return np.eye(n1)
    u, s, vt = np.linalg.svd(basis.basis)
    return vt[basis.dim:]


def project_constraint(spec: ConstraintSpec, basis: NullSpaceBasis) -> ConstraintSpec:
    """Project A onto the complement of the null-investment space.

    Returns a spec whose alpha set is an explicit polytope describing
    {a in L-perp : a + u in A for some u in L}, with the orthogonality to
    every basis vector carried as equality rows. The (A.1) rows are not
    baked in: they are invariant along null directions, so compiling the
    result against any law re-adds them without changing the projection.
    """
    n1 = spec.n1
    if n1 == 0 or basis.dim == 0:
        return spec
    U = basis.basis.T                      # (n1, d)
    V = orthogonal_complement(basis, n1).T  # (n1, n1-d)
    poly = spec.alpha_set.rows(n1)
    if len(poly.f):
        # fold user equalities into inequality pairs before elimination
        poly = Polytope(n1, np.vstack([poly.G, poly.E, -poly.E]),
                        np.concatenate([poly.h, poly.f, -poly.f]))
    # coordinates (a, w): alpha = V a + U w; eliminate w
    G = np.hstack([poly.G @ V, poly.G @ U])
    h = poly.h.copy()
    for _ in range(U.shape[1]):
        G, h = fourier_motzkin(G, h, G.shape[1] - 1)
        if len(h) > 4 * max(8, n1 * n1):
            reduced = Polytope(G.shape[1], G, h).prune()
            G, h = reduced.G, reduced.h
    reduced = Polytope(V.shape[1], G, h).prune()
    # back to ambient coordinates plus orthogonality equalities
    amb_G = reduced.G @ V.T
    return ConstraintSpec(
        n1=n1, n2=spec.n2,
        alpha_set=AlphaSet(kind="polytope", G=amb_G, g=reduced.h,
                           E=basis.basis, f=np.zeros(basis.dim)),
        beta_set=spec.beta_set)


def detect_unbounded_arbitrage(spec: ConstraintSpec,
                               law: ConditionalLaw) -> Optional[np.ndarray]:
    """Direction in the recession cone of A that is an arbitrage, if any.

    Searches for u with <e,u> = 0, <u, x_k> >= 0 on every support point
    and > 0 on at least one, such that every positive multiple of u stays
    in A (membership of the recession cone of the compiled polytope).
    Returns a normalized direction or None.
    """
    n1 = spec.n1
    if n1 == 0:
        return None
    poly = spec.alpha_polytope(law)
    box = [(-1.0, 1.0)] * n1
    Gh = poly.G if len(poly.h) else None
    hz = np.zeros(len(poly.h)) if len(poly.h) else None
    Ee = poly.E if len(poly.f) else None
    fz = np.zeros(len(poly.f)) if len(poly.f) else None
    for k in range(law.size):
        res = _lp(-law.x_vals[k], Gh, hz, Ee, fz, bounds=box)
        if not res.success:
            raise NumericalError(f"arbitrage LP failed: {res.message}")
        gain = -res.fun
        scale = float(np.linalg.norm(law.x_vals[k])) or 1.0
        if gain > 1e-9 * scale:
            u = res.x
            return u / np.linalg.norm(u)
    return None


def bounded_arbitrage_present(spec: ConstraintSpec, law: ConditionalLaw) -> bool:
    """True if A itself contains an arbitrage portfolio (possibly bounded)."""
    n1 = spec.n1
    if n1 == 0:
        return False
    poly = spec.alpha_polytope(law)
    e = np.ones(n1)
    zero_cost = Polytope(n1, E=e.reshape(1, -1), f=[0.0]).intersect(poly)
    for k in range(law.size):
        val, _ = zero_cost.support(law.x_vals[k])
        scale = float(np.linalg.norm(law.x_vals[k])) or 1.0
        if val > 1e-9 * scale:
            return True
    return False


def feasible_point(spec: ConstraintSpec, law: ConditionalLaw) -> tuple[np.ndarray, np.ndarray]:
    """A pair (a, b) in the joint set with positive value on every support point.

    Raises AssumptionViolation("(A.2)") when no such pair exists.
    """
    joint = spec.joint_polytope(law)
    # value rows: -( <a, x_k> + <b, y_k> ) <= 0, used as slack rows only;
    # the joint polytope rows stay hard so degenerate (zero-slack) user
    # constraints cannot mask a strictly positive attainable value
    vals = np.hstack([law.x_vals, law.y_vals])
    z, slack = joint.max_slack_point(extra_G=-vals, extra_h=np.zeros(law.size),
                                     include_own=False)
    if z is None:
        raise AssumptionViolation("(A.2)", "joint constraint set is empty")
    value = vals @ z
    if np.min(value) <= 1e-11:
        raise AssumptionViolation(
            "(A.2)", "no admissible portfolio has strictly positive value on "
                     "every support point")
    return z[:spec.n1].copy(), z[spec.n1:].copy()


def cone_property_violations(spec: ConstraintSpec, law: ConditionalLaw,
                             rng: np.random.Generator, samples: int = 1000) -> int:
    """Sampled check of the scaling property of A and B.

    For a in A the whole segment {lam * a : lam in [0, 1/<e,a>]} must stay
    in A (analogously for B). Returns the number of violations found.
    """
    bad = 0
    lam_grid = np.linspace(0.0, 1.0, 9)
    for poly, n in ((spec.alpha_polytope(law), spec.n1), (spec.beta_polytope(), spec.n2)):
        if n == 0:
            continue
        V = poly.vertices()
        if len(V) == 0:
            continue
        for _ in range(samples // 2):
            w = rng.dirichlet(np.ones(len(V)))
            z = w @ V
            s = float(np.ones(n) @ z)
            top = 1.0 / s if s > 1e-12 else 2.0
            for lam in lam_grid * top:
                if not poly.contains(lam * z, tol=1e-7):
                    bad += 1
                    break
    return bad
