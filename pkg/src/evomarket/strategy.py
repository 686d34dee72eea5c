"""Construction of the relative growth optimal strategy and competitor rules.

The optimal rule solves, per (state, total market wealth W), a two-stage
concave program over the constraint set:

1. the exogenous proportions maximize
       E ln(<a, X> W + |Y_eff|) - <e, a>
   over the projection of A onto the complement of the null-investment
   space (the direct problem; a truncated-objective schedule using
   g_i(x) = 1/i + i*arctan(x/i) is kept as a validation path, since the
   truncation only exists to fix integrability issues that cannot occur
   on finite supports);

2. the endogenous proportions maximize
       E [ <ln b, Y_eff> / (<a_hat, X> W + |Y_eff|) ]
   over the slice of B with <e, b> = 1 - <e, a_hat>. When B is the full
   simplex slice this has the closed form
       b_n = E [ Y_n / (<a_hat, X> W + |Y|) ].

``Y_eff`` denotes the effective payoffs: payoff coordinates that no
admissible endogenous portfolio can hold are zeroed out.

First-order output contracts (checked by the validating entry points and
the test suite): for every feasible a,
    E[<a_hat - a, X> W / q] >= <e, a_hat - a>     (q = <a_hat,X> W + |Y_eff|)
with equality in the scaling direction, q > 0 on every support point, and
the analogous endogenous-side inequalities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constraints import ConstraintSpec, Polytope, feasible_point, null_space, project_constraint
from .environment import ConditionalLaw, Environment, conditional_law
from .errors import AssumptionViolation, ConsistencyError, NumericalError
from .optim import (ReducedPolytope, SmoothObjective, barrier_maximize,
                    face_polish, full_dim_reduce, project_onto_polytope)

H_TOL = 1e-9
_GAP_TOL = 1e-11


@dataclass(frozen=True)
class Proportions:
    """Investment proportions (alpha, beta) in the budget set H."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        sa, sb = float(a.sum()), float(b.sum())
        if np.any(b < -H_TOL):
            raise ValueError("endogenous proportions must be non-negative")
        if not -H_TOL <= sa <= 1.0 + H_TOL:
            raise ValueError("sum of exogenous proportions must lie in [0, 1]")
        if abs(sa + sb - 1.0) > H_TOL:
            raise ValueError("proportions must sum to 1")

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta])


@dataclass(frozen=True)
class TruncationSchedule:
    """Indices i of the truncated problems and the convergence tolerance.

    Convergence is declared on successive extrapolated limit estimates
    (the raw argmax sequence drifts like 1/i by construction, so its own
    successive differences decay too slowly to test against).
    """

    indices: tuple[int, ...] = tuple(2 ** j for j in range(17))
    tolerance: float = 1e-7

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) < 2 or any(i < 1 for i in idx) or any(
                b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("schedule indices must be strictly increasing and >= 1")
        object.__setattr__(self, "indices", idx)


DEFAULT_SCHEDULE = TruncationSchedule()


def effective_payoffs(law: ConditionalLaw, spec: ConstraintSpec) -> np.ndarray:
    """Per-support-state payoff vectors with unattainable coordinates zeroed.

    Coordinate n is attainable when some admissible endogenous portfolio
    holds a positive amount of asset n (decided by an LP over B).
    """
    n2 = law.num_endogenous
    poly = spec.beta_polytope()
    mask = np.zeros(n2)
    for n in range(n2):
        c = np.zeros(n2)
        c[n] = 1.0
        val, _ = poly.support(c)
        mask[n] = 1.0 if val > 1e-12 else 0.0
    return law.y_vals * mask


# ---------------------------------------------------------------------------
# Objective formulas (shared with diagnostics and tests)
# ---------------------------------------------------------------------------

def portfolio_scale(law: ConditionalLaw, ytilde: np.ndarray, W: float,
                    alpha: np.ndarray) -> np.ndarray:
    """q_k = <alpha, x_k> W + |ytilde_k| per support point."""
    lin = law.x_vals @ alpha if law.num_exogenous else np.zeros(law.size)
    return lin * W + np.abs(ytilde).sum(axis=1)


def direct_alpha_objective(law: ConditionalLaw, ytilde: np.ndarray, W: float,
                           alpha: np.ndarray) -> float:
    """E ln(<alpha, X> W + |Y_eff|) - <e, alpha>; -inf when any q_k <= 0."""
    q = portfolio_scale(law, ytilde, W, alpha)
    if np.any(q <= 0.0):
        return -np.inf
    return float(law.probs @ np.log(q) - alpha.sum())


def truncated_alpha_objective(law: ConditionalLaw, ytilde: np.ndarray, W: float,
                              alpha: np.ndarray, i: int) -> float:
    q = portfolio_scale(law, ytilde, W, alpha)
    g = 1.0 / i + i * np.arctan(q / i)
    return float(law.probs @ np.log(g) - alpha.sum())


def alpha_first_order_gap(law: ConditionalLaw, ytilde: np.ndarray, W: float,
                          alpha_hat: np.ndarray, alpha: np.ndarray) -> float:
    """E[<a_hat - a, X> W / q] - <e, a_hat - a>; non-negative at the optimum."""
    q = portfolio_scale(law, ytilde, W, alpha_hat)
    diff = law.x_vals @ (alpha_hat - alpha) if law.num_exogenous else np.zeros(law.size)
    return float(law.probs @ (diff * W / q) - (alpha_hat - alpha).sum())


def alpha_scaling_residual(law: ConditionalLaw, ytilde: np.ndarray, W: float,
                           alpha_hat: np.ndarray) -> float:
    """E[<a_hat, X> W / q] - <e, a_hat>; zero at the optimum."""
    q = portfolio_scale(law, ytilde, W, alpha_hat)
    lin = law.x_vals @ alpha_hat if law.num_exogenous else np.zeros(law.size)
    return float(law.probs @ (lin * W / q) - alpha_hat.sum())


def beta_weights(law: ConditionalLaw, ytilde: np.ndarray, W: float,
                 alpha_hat: np.ndarray) -> np.ndarray:
    """w_n = E[Y_eff_n / q]; the endogenous-side expected payoff shares."""
    q = portfolio_scale(law, ytilde, W, alpha_hat)
    safe = np.where(q > 0, q, 1.0)
    ratios = np.where(q[:, None] > 0, ytilde / safe[:, None],
                      np.where(ytilde == 0, 0.0, np.nan))
    if np.any(np.isnan(ratios)):
        raise NumericalError("payoff/value ratio 0/0 with positive payoff")
    return law.probs @ ratios


def beta_gibbs_gap(weights: np.ndarray, beta_hat: np.ndarray,
                   beta: np.ndarray) -> float:
    """E[<ln b_hat - ln b, Y_eff>/q] - (|b_hat| - |b|) via precomputed weights."""
    lhs = 0.0
    for w, bh, b in zip(weights, beta_hat, beta):
        if w <= 0.0:
            continue
        if b <= 0.0:
            return np.inf
        if bh <= 0.0:
            return -np.inf
        lhs += w * (math.log(bh) - math.log(b))
    return lhs - (beta_hat.sum() - beta.sum())


def beta_ratio_gap(weights: np.ndarray, beta_hat: np.ndarray,
                   beta: np.ndarray) -> float:
    """E[(|Y_eff| - sum_n b_n Y_eff_n / b_hat_n)/q] - (|b_hat| - |b|)."""
    total = weights.sum()
    mix = 0.0
    for w, bh, b in zip(weights, beta_hat, beta):
        if bh <= 0.0:
            continue  # then w == 0 by construction
        mix += b * w / bh
    return float(total - mix - (beta_hat.sum() - beta.sum()))


# ---------------------------------------------------------------------------
# The exogenous-side problem
# ---------------------------------------------------------------------------

class AlphaProblem:
    """Compiled per-state exogenous problem over the projected set."""

    def __init__(self, law: ConditionalLaw, spec_projected: ConstraintSpec):
        self.law = law
        self.n1 = law.num_exogenous
        if self.n1 == 0:
            self.reduced = None
            return
        poly = spec_projected.alpha_polytope(law)
        self.reduced = full_dim_reduce(poly)
        red = self.reduced
        if red.dim > 0 and not Polytope(red.dim, red.Gr, red.hr).is_bounded():
            raise AssumptionViolation(
                "(A.5)", "projected exogenous constraint set is unbounded, "
                         "i.e. an arbitrage direction can be scaled without bound")
        self.xr = law.x_vals @ red.B          # (K, d)
        self.base = law.x_vals @ red.z0       # (K,)
        self.er = red.B.T @ np.ones(self.n1)  # (d,)
        self._vertex_cache: Optional[np.ndarray] = None

    # -- helpers -----------------------------------------------------------

    @property
    def dim(self) -> int:
        return 0 if self.reduced is None else self.reduced.dim

    def vertices(self) -> np.ndarray:
        if self.reduced is None:
            return np.zeros((1, 0))
        if self._vertex_cache is None:
            self._vertex_cache = self.reduced.reduced_vertices()
        return self._vertex_cache

    def ambient(self, a: np.ndarray) -> np.ndarray:
        return self.reduced.to_ambient(a)

    def _strict_start(self, cw: np.ndarray) -> np.ndarray:
        red = self.reduced
        t_int = self.base + self.xr @ red.interior + cw
        if np.all(t_int > 0):
            return red.interior
        # fall back: maximize the worst normalized value slack subject to
        # the polytope rows, then blend toward the interior point
        poly = Polytope(red.dim, red.Gr, red.hr)
        z, slack = poly.max_slack_point(extra_G=-self.xr,
                                        extra_h=self.base + cw,
                                        include_own=False)
        if z is None or slack <= 1e-13:
            raise AssumptionViolation(
                "(A.2)", "no admissible exogenous portfolio keeps the "
                         "portfolio value positive on every support point")
        blend = 0.5 * z + 0.5 * red.interior
        if np.any(self.base + self.xr @ blend + cw <= 0):
            blend = 0.9 * z + 0.1 * red.interior
        return blend

    def _direct_objective(self, cw: np.ndarray) -> SmoothObjective:
        xr, base, er, p = self.xr, self.base, self.er, self.law.probs

        def tvals(a):
            return base + xr @ a + cw

        def value(a):
            t = tvals(a)
            if np.any(t <= 0.0):
                return -np.inf
            return float(p @ np.log(t) - er @ a)

        def grad(a):
            t = tvals(a)
            return xr.T @ (p / t) - er

        def hess(a):
            t = tvals(a)
            w = p / (t * t)
            return -(xr.T * w) @ xr

        return SmoothObjective(value, grad, hess)

    def _truncated_objective(self, W: float, c: np.ndarray, i: int) -> SmoothObjective:
        xr, base, er, p = self.xr, self.base, self.er, self.law.probs

        def qvals(a):
            return (base + xr @ a) * W + c

        def parts(a):
            q = qvals(a)
            g = 1.0 / i + i * np.arctan(q / i)
            gp = 1.0 / (1.0 + (q / i) ** 2)
            return q, g, gp

        def value(a):
            _, g, _ = parts(a)
            return float(p @ np.log(g) - er @ a)

        def grad(a):
            _, g, gp = parts(a)
            return xr.T @ (p * gp / g) * W - er

        def hess(a):
            q, g, gp = parts(a)
            gpp = -(2.0 * q / i ** 2) * gp ** 2
            curv = (gpp * g - gp ** 2) / g ** 2
            w = p * curv * W * W
            return (xr.T * w) @ xr

        return SmoothObjective(value, grad, hess)

    # -- solvers -------------------------------------------------------------

    def solve_direct(self, W: float, c: np.ndarray,
                     start: Optional[np.ndarray] = None,
                     gap_tol: float = _GAP_TOL) -> tuple[np.ndarray, float]:
        """Maximize the direct objective; returns (ambient argmax, gap bound)."""
        if self.n1 == 0:
            return np.zeros(0), 0.0
        red = self.reduced
        if red.dim == 0:
            return red.z0.copy(), 0.0
        cw = np.asarray(c, dtype=float) / W
        obj = self._direct_objective(cw)
        a0 = start if start is not None and np.isfinite(obj.value(start)) \
            else self._strict_start(cw)
        a, gap = barrier_maximize(obj, red.Gr, red.hr, a0, gap_tol=gap_tol)
        a = face_polish(obj, red.Gr, red.hr, a)
        return self.ambient(a), gap

    def solve_truncated(self, W: float, c: np.ndarray, i: int,
                        start: Optional[np.ndarray] = None,
                        gap_tol: float = _GAP_TOL) -> np.ndarray:
        if self.n1 == 0:
            return np.zeros(0)
        red = self.reduced
        if red.dim == 0:
            return red.z0.copy()
        obj = self._truncated_objective(W, np.asarray(c, dtype=float), i)
        a0 = start if start is not None else red.interior
        a, _ = barrier_maximize(obj, red.Gr, red.hr, a0, gap_tol=gap_tol)
        a = face_polish(obj, red.Gr, red.hr, a)
        return self.ambient(a)

    def multi_start_points(self) -> list[np.ndarray]:
        """Interior point, blended vertices and their centroid (reduced coords)."""
        red = self.reduced
        pts = [red.interior]
        verts = self.vertices()
        if len(verts):
            pts.append(0.9 * verts.mean(axis=0) + 0.1 * red.interior)
            for v in verts[:3]:
                pts.append(0.9 * v + 0.1 * red.interior)
        return pts


def _projected_spec(law: ConditionalLaw, spec: ConstraintSpec) -> ConstraintSpec:
    if spec.n1 == 0:
        return spec
    return project_constraint(spec, null_space(law))


def solve_alpha_truncated(law: ConditionalLaw, spec_p: ConstraintSpec,
                          W: float, i: int) -> np.ndarray:
    """Argmax of the truncation-smoothed objective over the projected set."""
    if W <= 0:
        raise ValueError("W must be positive")
    if i < 1:
        raise ValueError("truncation index must be >= 1")
    problem = AlphaProblem(law, spec_p)
    ytilde = effective_payoffs(law, spec_p)
    c = np.abs(ytilde).sum(axis=1)
    return problem.solve_truncated(W, c, i)


def _schedule_limit(problem: AlphaProblem, W: float, c: np.ndarray,
                    sched: TruncationSchedule) -> np.ndarray:
    """Extrapolated limit of the truncated argmax sequence along the schedule."""
    if problem.dim == 0:
        return problem.solve_truncated(W, c, sched.indices[0]) \
            if problem.n1 else np.zeros(0)
    prev_i = prev_a = None
    prev_limit = None
    start = None
    for i in problem and sched.indices or sched.indices:
        a = problem.solve_truncated(W, c, i, start=start)
        start = problem.reduced.to_reduced(a)
        if prev_a is not None:
            # model a(i) = a* + C/i; eliminate the 1/i term exactly
            wgt = (1.0 / i) / (1.0 / prev_i - 1.0 / i)
            limit = a + (a - prev_a) * wgt
            if prev_limit is not None and \
                    np.max(np.abs(limit - prev_limit)) < sched.tolerance:
                return limit
            prev_limit = limit
        prev_i, prev_a = i, a
    raise NumericalError(
        "truncation schedule exhausted without convergence of the "
        "extrapolated limit estimates")


def _alpha_battery(problem: AlphaProblem, n_points: int = 50,
                   seed: int = 20240) -> list[np.ndarray]:
    """Deterministic battery of feasible points of the projected set."""
    if problem.n1 == 0 or problem.dim == 0:
        return [problem.solve_direct(1.0, np.ones(problem.law.size))[0]] \
            if problem.n1 == 0 else [problem.reduced.z0.copy()]
    verts = problem.vertices()
    pts = [problem.ambient(v) for v in verts]
    if len(verts):
        rng = np.random.default_rng(seed)
        for _ in range(max(0, n_points - len(pts))):
            wgt = rng.dirichlet(np.ones(len(verts)))
            pts.append(problem.ambient(wgt @ verts))
    return pts


def solve_alpha(law: ConditionalLaw, spec_p: ConstraintSpec, W: float,
                sched: TruncationSchedule = DEFAULT_SCHEDULE) -> np.ndarray:
    """Exogenous proportions of the growth optimal strategy (validating path).

    Solves the direct problem with multi-start agreement, cross-checks the
    truncation-schedule limit, and verifies the first-order contracts on a
    feasible battery before returning.
    """
    if W <= 0:
        raise ValueError("W must be positive")
    problem = AlphaProblem(law, spec_p)
    ytilde = effective_payoffs(law, spec_p)
    c = np.abs(ytilde).sum(axis=1)
    if problem.n1 == 0:
        return np.zeros(0)
    if problem.dim == 0:
        alpha_hat = problem.reduced.z0.copy()
    else:
        results = []
        for start in problem.multi_start_points():
            a, gap = problem.solve_direct(W, c, start=start)
            results.append((direct_alpha_objective(law, ytilde, W, a), a))
        best = max(r[0] for r in results)
        agreeing = [a for val, a in results if val >= best - 1e-9 * (1 + abs(best))]
        if len(agreeing) < len(results):
            raise ConsistencyError(
                "multi-start solves disagree beyond the 1e-9 objective tolerance")
        alpha_hat = min(agreeing, key=lambda a: float(a @ a))
        limit = _schedule_limit(problem, W, c, sched)
        if np.max(np.abs(limit - alpha_hat)) > 1e-6 * (1.0 + np.linalg.norm(alpha_hat)):
            raise ConsistencyError(
                "direct solution and truncation-schedule limit disagree beyond 1e-6")
    _check_alpha_first_order(law, ytilde, W, alpha_hat, problem)
    return alpha_hat


def _check_alpha_first_order(law: ConditionalLaw, ytilde: np.ndarray, W: float,
                             alpha_hat: np.ndarray, problem: AlphaProblem,
                             tol: float = 1e-7) -> None:
    q = portfolio_scale(law, ytilde, W, alpha_hat)
    if np.any(q <= 0):
        raise ConsistencyError("solution has non-positive value on a support point")
    if abs(alpha_scaling_residual(law, ytilde, W, alpha_hat)) > tol:
        raise ConsistencyError("scaling equality violated beyond 1e-7")
    for alpha in _alpha_battery(problem):
        if alpha_first_order_gap(law, ytilde, W, alpha_hat, alpha) < -tol:
            raise ConsistencyError("first-order inequality violated beyond 1e-7")


# ---------------------------------------------------------------------------
# The endogenous-side problem
# ---------------------------------------------------------------------------

def beta_explicit(law: ConditionalLaw, W: float, alpha_hat: np.ndarray) -> np.ndarray:
    """Closed-form endogenous proportions when B is the full simplex slice."""
    if W <= 0:
        raise ValueError("W must be positive")
    return beta_weights(law, law.y_vals, W, np.asarray(alpha_hat, dtype=float))


def _solve_beta_general(law: ConditionalLaw, spec: ConstraintSpec,
                        weights: np.ndarray, budget: float,
                        gap_tol: float = _GAP_TOL) -> np.ndarray:
    """Maximize sum_n w_n ln b_n over {b in B : <e, b> = budget}."""
    n2 = spec.n2
    pb = spec.beta_polytope()
    poly = Polytope(n2, pb.G, pb.h, E=np.ones((1, n2)), f=[budget])
    red = full_dim_reduce(poly)
    if red.dim == 0:
        return red.z0.copy()
    pos = weights > 0.0

    def bvals(a):
        return red.z0 + red.B @ a

    def value(a):
        b = bvals(a)[pos]
        if np.any(b <= 0.0):
            return -np.inf
        return float(weights[pos] @ np.log(b))

    def grad(a):
        b = bvals(a)
        g = np.where(pos, weights / np.where(pos, b, 1.0), 0.0)
        return red.B.T @ g

    def hess(a):
        b = bvals(a)
        w = np.where(pos, weights / np.where(pos, b * b, 1.0), 0.0)
        return -(red.B.T * w) @ red.B

    obj = SmoothObjective(value, grad, hess)
    a0 = red.interior
    if not np.isfinite(obj.value(a0)):
        raise NumericalError(
            "no admissible endogenous portfolio holds every attainable asset")
    if np.any(pos):
        a, _ = barrier_maximize(obj, red.Gr, red.hr, a0, gap_tol=gap_tol)
        a = face_polish(obj, red.Gr, red.hr, a)
    else:
        a = a0
    beta = bvals(a)
    if np.all(pos):
        return np.maximum(beta, 0.0)
    # coordinates with zero weight are objective-flat: tie-break by the
    # minimum-norm point of the optimal face
    E = [np.ones(n2)]
    f = [budget]
    for n in np.flatnonzero(pos):
        row = np.zeros(n2)
        row[n] = 1.0
        E.append(row)
        f.append(beta[n])
    face = Polytope(n2, pb.G, pb.h, E=np.array(E), f=np.array(f))
    beta = project_onto_polytope(face, np.zeros(n2), start=beta)
    return np.maximum(beta, 0.0)


def solve_beta(law: ConditionalLaw, spec: ConstraintSpec, W: float,
               alpha_hat: np.ndarray, ytilde: Optional[np.ndarray] = None,
               check: bool = True) -> np.ndarray:
    """Endogenous proportions given solved exogenous proportions.

    Runs the general constrained path (use ``beta_explicit`` for the
    unconstrained closed form) and, when ``check`` is set, verifies the
    endogenous first-order inequalities on a feasible battery.
    """
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    if ytilde is None:
        ytilde = effective_payoffs(law, spec)
    budget = 1.0 - float(alpha_hat.sum())
    if budget < -H_TOL:
        raise ValueError("exogenous proportions exceed the budget")
    budget = max(budget, 0.0)
    weights = beta_weights(law, ytilde, W, alpha_hat)
    beta_hat = _solve_beta_general(law, spec, weights, budget)
    if check:
        _check_beta_first_order(law, spec, weights, beta_hat, budget)
    return beta_hat


def _check_beta_first_order(law: ConditionalLaw, spec: ConstraintSpec,
                            weights: np.ndarray, beta_hat: np.ndarray,
                            budget: float, tol: float = 1e-7,
                            n_points: int = 50, seed: int = 77) -> None:
    for n in range(spec.n2):
        if beta_hat[n] <= 1e-12 and weights[n] > tol:
            raise ConsistencyError(
                "zero proportion assigned to an asset with positive expected "
                "payoff share")
    pb = spec.beta_polytope()
    verts = pb.vertices()
    if len(verts) == 0:
        return
    rng = np.random.default_rng(seed)
    pts = list(verts[:10])
    for _ in range(n_points):
        w = rng.dirichlet(np.ones(len(verts)))
        pts.append(w @ verts)
    for b in pts:
        s = float(b.sum())
        if s > 1e-12 and budget > 0:
            scaled = b * (budget / s)  # admissible by the scaling property
            if pb.contains(scaled, tol=1e-9):
                if beta_gibbs_gap(weights, beta_hat, scaled) < -tol:
                    raise ConsistencyError("endogenous first-order inequality "
                                           "violated beyond 1e-7")
        if b.sum() <= budget + 1e-12:
            if beta_ratio_gap(weights, beta_hat, b) < -tol:
                raise ConsistencyError("endogenous ratio inequality violated "
                                       "beyond 1e-7")


# ---------------------------------------------------------------------------
# Strategy rules
# ---------------------------------------------------------------------------

class StrategyRule:
    """Maps (time, state, wealth vector, total wealth) to proportions."""

    def proportions(self, t: int, state: int, wealth: np.ndarray, W: float,
                    history=None) -> Proportions:
        raise NotImplementedError


def _quantize_wealth(W: float, digits: int = 12) -> float:
    if not np.isfinite(W) or W <= 0:
        raise NumericalError(f"total wealth must be positive and finite, got {W}")
    return float(np.format_float_scientific(W, precision=digits - 1, unique=False))


class OptimalRule(StrategyRule):
    """The relative growth optimal rule; depends only on (state, W).

    Per-state problems are compiled lazily; solutions are cached on
    (state, W quantized to 12 significant digits).
    """

    def __init__(self, env: Environment, spec: ConstraintSpec,
                 sched: TruncationSchedule = DEFAULT_SCHEDULE,
                 validate: bool = True):
        if spec.n1 != env.num_exogenous or spec.n2 != env.num_endogenous:
            raise ValueError("constraint spec dimensions do not match environment")
        self.env = env
        self.spec = spec
        self.sched = sched
        self._states: dict[int, dict] = {}
        self._cache: dict[tuple[int, float], Proportions] = {}
        if validate:
            for s in range(env.num_states):
                self._state_problem(s)

    def _state_problem(self, state: int) -> dict:
        prob = self._states.get(state)
        if prob is None:
            law = conditional_law(self.env, state)
            feasible_point(self.spec, law)  # (A.2); raises otherwise
            spec_p = _projected_spec(law, self.spec)
            alpha_problem = AlphaProblem(law, spec_p)  # raises (A.5) if unbounded
            ytilde = effective_payoffs(law, self.spec)
            prob = {
                "law": law,
                "spec_p": spec_p,
                "alpha": alpha_problem,
                "ytilde": ytilde,
                "c": np.abs(ytilde).sum(axis=1),
                "full_simplex": self.spec.beta_set.is_full_simplex,
            }
            self._states[state] = prob
        return prob

    def solve(self, state: int, W: float) -> Proportions:
        Wq = _quantize_wealth(W)
        key = (state, Wq)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        prob = self._state_problem(state)
        law, ytilde = prob["law"], prob["ytilde"]
        alpha_hat, _ = prob["alpha"].solve_direct(Wq, prob["c"])
        budget = max(1.0 - float(alpha_hat.sum()), 0.0)
        if prob["full_simplex"]:
            beta_hat = beta_weights(law, ytilde, Wq, alpha_hat)
        else:
            weights = beta_weights(law, ytilde, Wq, alpha_hat)
            beta_hat = _solve_beta_general(law, self.spec, weights, budget)
        total = float(beta_hat.sum())
        if total > 0:
            beta_hat = beta_hat * (budget / total)
        result = Proportions(alpha=alpha_hat, beta=beta_hat)
        self._cache[key] = result
        return result

    def proportions(self, t, state, wealth, W, history=None) -> Proportions:
        return self.solve(state, W)


class ConstantRule(StrategyRule):
    """Fixed proportions per state (time- and wealth-independent)."""

    def __init__(self, alphas: np.ndarray, betas: np.ndarray):
        self.alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
        self.betas = np.atleast_2d(np.asarray(betas, dtype=float))

    @classmethod
    def single(cls, alpha, beta, num_states: int) -> "ConstantRule":
        a = np.tile(np.asarray(alpha, dtype=float), (num_states, 1))
        b = np.tile(np.asarray(beta, dtype=float), (num_states, 1))
        return cls(a, b)

    def proportions(self, t, state, wealth, W, history=None) -> Proportions:
        return Proportions(alpha=self.alphas[state], beta=self.betas[state])


class KellyEndogenousRule(StrategyRule):
    """Splits the full budget over endogenous assets by expected payoff share."""

    def __init__(self, env: Environment):
        n2 = env.num_endogenous
        betas = np.zeros((env.num_states, n2))
        for s in range(env.num_states):
            law = conditional_law(env, s)
            tot = law.y_vals.sum(axis=1)
            shares = np.where(tot[:, None] > 0, law.y_vals /
                              np.where(tot[:, None] > 0, tot[:, None], 1.0), 0.0)
            b = law.probs @ shares
            betas[s] = b / b.sum() if b.sum() > 0 else np.full(n2, 1.0 / n2)
        self.alphas = np.zeros((env.num_states, env.num_exogenous))
        self.betas = betas

    def proportions(self, t, state, wealth, W, history=None) -> Proportions:
        return Proportions(alpha=self.alphas[state], beta=self.betas[state])


class PerturbedOptimalRule(StrategyRule):
    """Optimal rule plus state/wealth-keyed noise, projected back into C.

    The noise is a pure function of (state, quantized W) so repeated
    queries at the same point return identical proportions.
    """

    def __init__(self, base: OptimalRule, noise_scale: float, seed: int):
        self.base = base
        self.noise_scale = float(noise_scale)
        self.seed = int(seed)
        self._joint: dict[int, Polytope] = {}

    def _joint_polytope(self, state: int) -> Polytope:
        poly = self._joint.get(state)
        if poly is None:
            law = self.base._state_problem(state)["law"]
            poly = self.base.spec.joint_polytope(law)
            self._joint[state] = poly
        return poly

    def proportions(self, t, state, wealth, W, history=None) -> Proportions:
        h = self.base.solve(state, W)
        Wq = _quantize_wealth(W)
        wbits = int(np.frombuffer(np.float64(Wq).tobytes(), dtype=np.uint64)[0])
        rng = np.random.default_rng([self.seed, int(state), wbits])
        noise = rng.normal(0.0, self.noise_scale, h.alpha.size + h.beta.size)
        target = h.stacked() + noise
        z = project_onto_polytope(self._joint_polytope(state), target,
                                  start=h.stacked())
        n1 = h.alpha.size
        beta = np.maximum(z[n1:], 0.0)
        return Proportions(alpha=z[:n1], beta=beta)


class TableRule(StrategyRule):
    """Explicit per-time, per-state proportions; last row repeats forever."""

    def __init__(self, rows: Sequence[tuple[np.ndarray, np.ndarray]]):
        if not rows:
            raise ValueError("table rule needs at least one row")
        self.rows = [(np.atleast_2d(np.asarray(a, dtype=float)),
                      np.atleast_2d(np.asarray(b, dtype=float))) for a, b in rows]

    def proportions(self, t, state, wealth, W, history=None) -> Proportions:
        a, b = self.rows[min(t, len(self.rows) - 1)]
        return Proportions(alpha=a[state], beta=b[state])


def optimal_rule(env: Environment, spec: ConstraintSpec,
                 sched: TruncationSchedule = DEFAULT_SCHEDULE) -> OptimalRule:
    """Compile the growth optimal rule, validating assumptions per state."""
    return OptimalRule(env, spec, sched=sched, validate=True)
