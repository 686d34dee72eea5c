"""Finite-state stochastic environment driving the market.

The environment is a finite Markov chain (or an iid draw, as a special
case) over ``S`` states. Entering state ``s`` at time ``t+1`` realizes the
gross returns ``X[s]`` of the exogenous assets and the total payoffs
``Y[s]`` of the endogenous assets. Because the state space is finite,
one-step conditional expectations are exact finite sums; almost-sure
statements become "holds on every support point".

Extended-real convention used throughout: a function value of ``-inf``
propagates through conditional expectations (a term with positive
probability at ``-inf`` makes the whole sum ``-inf``); ``+inf`` never
arises because returns are strictly positive and matrices are finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Environment:
    """Finite-state driver with per-state asset returns and payoffs.

    Attributes
    ----------
    transition : (S, S) row-stochastic matrix. In ``iid`` mode all rows
        are equal and the next state does not depend on the current one.
    X : (S, N1) strictly positive gross returns of the exogenous assets,
        realized on *entering* a state.
    Y : (S, N2) non-negative total payoffs of the endogenous assets
        (unit supply, so this is the whole payoff of each asset).
    mode : "iid" or "markov".
    initial_state : index of the state the simulation starts in.
    """

    transition: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    mode: str = "markov"
    initial_state: int = 0

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=float)
        x = np.asarray(self.X, dtype=float)
        y = np.asarray(self.Y, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] < 1:
            raise ValueError("transition must be a square S x S matrix with S >= 1")
        s = t.shape[0]
        if x.ndim != 2 or x.shape[0] != s:
            raise ValueError("X must have one row per state")
        if y.ndim != 2 or y.shape[0] != s:
            raise ValueError("Y must have one row per state")
        if y.shape[1] < 1:
            raise ValueError("at least one endogenous asset is required")
        if np.any(t < 0):
            raise ValueError("transition probabilities must be non-negative")
        if np.any(np.abs(t.sum(axis=1) - 1.0) > _ROW_SUM_TOL):
            raise ValueError("every transition row must sum to 1 within 1e-12")
        if self.mode not in ("iid", "markov"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "iid" and not np.all(t == t[0]):
            raise ValueError("iid mode requires all transition rows to be equal")
        if not np.all(x > 0):
            raise ValueError("all exogenous gross returns must be strictly positive")
        if np.any(y < 0):
            raise ValueError("endogenous payoffs must be non-negative")
        if not 0 <= self.initial_state < s:
            raise ValueError(f"initial_state {self.initial_state} out of range [0, {s})")
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "Y", y)
        t.setflags(write=False)
        x.setflags(write=False)
        y.setflags(write=False)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_exogenous(self) -> int:
        return self.X.shape[1]

    @property
    def num_endogenous(self) -> int:
        return self.Y.shape[1]


def iid_environment(probs: Sequence[float], X, Y, initial_state: int = 0) -> Environment:
    """Environment whose next state is drawn iid from ``probs``."""
    p = np.asarray(probs, dtype=float)
    transition = np.tile(p, (len(p), 1))
    return Environment(transition=transition, X=np.asarray(X, dtype=float),
                       Y=np.asarray(Y, dtype=float), mode="iid",
                       initial_state=initial_state)


@dataclass(frozen=True)
class ConditionalLaw:
    """One-step conditional distribution given the current state.

    Zero-probability next states are stripped, so "almost surely" means
    "for every index in ``support``".
    """

    support: np.ndarray        # next-state indices with positive probability
    probs: np.ndarray          # matching probabilities, sum to 1
    x_vals: np.ndarray         # (K, N1) exogenous gross returns per support state
    y_vals: np.ndarray         # (K, N2) endogenous payoffs per support state

    def __post_init__(self):
        if len(self.support) == 0:
            raise ValueError("conditional law must have non-empty support")
        if np.any(self.probs <= 0):
            raise ValueError("support probabilities must be strictly positive")
        if abs(self.probs.sum() - 1.0) > _ROW_SUM_TOL:
            raise ValueError("support probabilities must sum to 1 within 1e-12")

    @property
    def size(self) -> int:
        return len(self.support)

    @property
    def num_exogenous(self) -> int:
        return self.x_vals.shape[1]

    @property
    def num_endogenous(self) -> int:
        return self.y_vals.shape[1]


def conditional_law(env: Environment, state: int) -> ConditionalLaw:
    """Exact one-step law of (next state, X, Y) given the current state."""
    if not 0 <= state < env.num_states:
        raise ValueError(f"state index {state} out of range [0, {env.num_states})")
    row = env.transition[state]
    support = np.flatnonzero(row > 0.0)
    return ConditionalLaw(support=support, probs=row[support],
                          x_vals=env.X[support], y_vals=env.Y[support])


def cond_expect(law: ConditionalLaw, f: Callable[[np.ndarray, np.ndarray], float]) -> float:
    """Conditional expectation of ``f(X, Y)`` as an exact finite sum.

    Returns ``-inf`` as soon as any support point evaluates to ``-inf``.
    A NaN from ``f`` is a hard error naming the offending state.
    """
    total = 0.0
    for k in range(law.size):
        val = f(law.x_vals[k], law.y_vals[k])
        if np.isnan(val):
            raise NumericalError(
                f"cond_expect: NaN at support state {int(law.support[k])}")
        if val == -np.inf:
            return -np.inf
        total += law.probs[k] * val
    return total


def sample_next(env: Environment, state: int, rng: np.random.Generator) -> int:
    """Draw the next state from the transition row of ``state``."""
    if not 0 <= state < env.num_states:
        raise ValueError(f"state index {state} out of range [0, {env.num_states})")
    u = rng.random()
    cum = np.cumsum(env.transition[state])
    return int(np.searchsorted(cum, u, side="right").clip(0, env.num_states - 1))
