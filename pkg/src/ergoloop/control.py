"""Controllers mapping the error ``e`` to the broadcast signal ``pi``.

Controllers are immutable value objects carrying their internal state; the
``*_step`` functions return ``(pi, updated_controller)``. Every controller also
exposes batch kernels used by the simulation engine:

``_batch_init(R)``
    state array ``(R, n_states)`` seeded from ``self.state``.
``_batch_step(S, e, u, k)``
    returns ``(pi, S_next)``; the output is computed before the state update.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, InputExhaustedError, ModelValidationError
from .numerics import as_matrix


def _state_vector(state, n):
    if state is None:
        return np.zeros(n)
    vec = np.atleast_1d(np.asarray(state, dtype=float)).reshape(-1)
    if vec.shape != (n,):
        raise DimensionError(f"state must have {n} entries, got {vec.shape[0]}")
    return vec


@dataclass(frozen=True, eq=False)
class LinearController:
    """State-space controller ``pi = c x + d e``, ``x <- a x + b e``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    state: np.ndarray = None

    draws_per_step = 0

    def __post_init__(self):
        d = as_matrix(self.d, "d")
        if d.shape != (1, 1):
            raise DimensionError("d must be 1x1 for a single-input single-output controller")
        n = 0 if np.size(self.a) == 0 else as_matrix(self.a, "a").shape[0]
        if n:
            a = as_matrix(self.a, "a")
            b = as_matrix(self.b, "b").reshape(-1, 1) if np.size(self.b) == n else None
            c = as_matrix(self.c, "c").reshape(1, -1) if np.size(self.c) == n else None
            if a.shape != (n, n) or b is None or c is None:
                raise DimensionError(f"inconsistent controller blocks for n_c={n}")
        else:
            a, b, c = np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "state", _state_vector(self.state, n))

    @property
    def n_states(self):
        return self.a.shape[0]

    def with_state(self, state):
        return replace(self, state=state)

    def _batch_init(self, r):
        return np.tile(self.state, (r, 1))

    def _batch_step(self, s, e, u, k):
        pi = s @ self.c[0] + self.d[0, 0] * e
        s_next = s @ self.a.T + e[:, None] * self.b[:, 0]
        return pi, s_next

    def __repr__(self):
        return (
            f"LinearController(a={self.a.tolist()}, b={self.b.tolist()}, "
            f"c={self.c.tolist()}, d={self.d.tolist()}, state={self.state.tolist()})"
        )


def linear_step(ctrl, e):
    """Emit ``pi`` for error ``e`` and return it with the advanced controller."""
    pi, s = ctrl._batch_step(ctrl.state[None, :], np.array([float(e)]), None, 0)
    return float(pi[0]), replace(ctrl, state=s[0])


def pi_controller(kappa, alpha, state=0.0):
    """Realization of ``kappa (1 - alpha z^-1) / (1 - z^-1)``.

    Equivalent to the recursion ``pi(k) = pi(k-1) + kappa (e(k) - alpha e(k-1))``
    started from ``pi(-1) = kappa (1 - alpha) x_c(0)`` and ``e(-1) = 0``.
    """
    if kappa == 0:
        raise ModelValidationError("kappa must be non-zero")
    return LinearController(
        [[1.0]], [[1.0]], [[kappa * (1.0 - alpha)]], [[kappa]], state=[state]
    )


def lag_controller(kappa, alpha, beta, state=0.0):
    """Realization of ``kappa (1 - alpha z^-1) / (1 - beta z^-1)`` with ``|beta| < 1``."""
    if not abs(beta) < 1:
        raise ModelValidationError(f"lag pole beta={beta} must satisfy |beta| < 1")
    return LinearController(
        [[beta]], [[1.0]], [[kappa * (beta - alpha)]], [[kappa]], state=[state]
    )


@dataclass(frozen=True)
class MemorylessGainController:
    """``pi = gain * |e|``; exact when ``gain`` and ``e`` are Fractions."""

    gain: object

    n_states = 0
    draws_per_step = 0
    state = np.zeros(0)

    def __post_init__(self):
        if not self.gain > 0:
            raise ModelValidationError("gain must be positive")

    def __call__(self, e):
        return self.gain * abs(e)

    def _batch_init(self, r):
        return np.zeros((r, 0))

    def _batch_step(self, s, e, u, k):
        return float(self.gain) * np.abs(e), s


def gain_step(ctrl, e):
    return ctrl(e)


@dataclass(frozen=True)
class ExternalSequence:
    """Mode ``sequence[k]`` at step ``k``."""

    sequence: tuple
    draws = 0

    def select(self, s, u, k):
        if k >= len(self.sequence):
            raise InputExhaustedError(f"switching sequence has no entry for step {k}")
        return np.full(s.shape[0], self.sequence[k], dtype=np.intp)


@dataclass(frozen=True)
class StateRule:
    """Deterministic state-dependent switching ``sigma = rule(x_c)``.

    ``rule`` takes a batch of states ``(R, n_c)`` and returns mode indices ``(R,)``.
    """

    rule: object
    draws = 0

    def select(self, s, u, k):
        return np.asarray(self.rule(s), dtype=np.intp)


@dataclass(frozen=True)
class HalfspaceRule:
    """Mode 1 where ``normal . x_c >= offset``, mode 0 elsewhere."""

    normal: tuple
    offset: float = 0.0
    draws = 0

    def select(self, s, u, k):
        return (s @ np.asarray(self.normal, dtype=float) >= self.offset).astype(np.intp)


@dataclass(frozen=True)
class RandomizedRule:
    """Random mode choice in which every mode keeps probability at least ``floor``.

    With a ``preferred`` rule, the preferred mode receives the remaining mass
    ``1 - (n_s - 1) * floor``; without one all modes are equally likely.
    """

    floor: float
    preferred: object = None
    draws = 1

    def probabilities(self, s, n_modes):
        r = s.shape[0]
        if self.preferred is None:
            return np.full((r, n_modes), 1.0 / n_modes)
        probs = np.full((r, n_modes), self.floor)
        best = self.preferred.select(s, None, 0)
        probs[np.arange(r), best] = 1.0 - (n_modes - 1) * self.floor
        return probs

    def select(self, s, u, k, n_modes=None):
        cdf = np.cumsum(self.probabilities(s, n_modes), axis=1)
        return np.minimum((u[:, None] >= cdf).sum(axis=1), n_modes - 1)


@dataclass(frozen=True, eq=False)
class SwitchedController:
    """Finitely many linear modes selected per step by ``rule``."""

    modes: tuple
    rule: object
    state: np.ndarray = None
    position: int = field(default=0)

    def __post_init__(self):
        modes = tuple(
            m if isinstance(m, LinearController) else LinearController(*m) for m in self.modes
        )
        if not modes:
            raise ModelValidationError("need at least one mode")
        n = modes[0].n_states
        if any(m.n_states != n for m in modes):
            raise DimensionError("all modes must share the controller state dimension")
        if isinstance(self.rule, RandomizedRule):
            if not self.rule.floor > 0 or self.rule.floor * len(modes) > 1:
                raise ModelValidationError("randomized floor must lie in (0, 1/n_s]")
            if self.rule.preferred is None and 1.0 / len(modes) < self.rule.floor:
                raise ModelValidationError("uniform mode probabilities fall below the floor")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "state", _state_vector(self.state, n))
        object.__setattr__(self, "_a", np.stack([m.a for m in modes]))
        object.__setattr__(self, "_b", np.stack([m.b[:, 0] for m in modes]))
        object.__setattr__(self, "_c", np.stack([m.c[0] for m in modes]))
        object.__setattr__(self, "_d", np.array([m.d[0, 0] for m in modes]))

    @property
    def n_states(self):
        return self.modes[0].n_states

    @property
    def draws_per_step(self):
        return self.rule.draws

    def select(self, s, u, k):
        if isinstance(self.rule, RandomizedRule):
            return self.rule.select(s, u, k, len(self.modes))
        return self.rule.select(s, u, k)

    def _batch_init(self, r):
        return np.tile(self.state, (r, 1))

    def _batch_step(self, s, e, u, k):
        mode = self.select(s, u, k + self.position)
        pi = np.einsum("rn,rn->r", s, self._c[mode]) + self._d[mode] * e
        s_next = np.einsum("rij,rj->ri", self._a[mode], s) + e[:, None] * self._b[mode]
        return pi, s_next


def switched_step(ctrl, e, draw=0.0):
    """Select a mode per the rule, apply its linear step, advance the sequence position."""
    u = np.array([float(draw)])
    pi, s = ctrl._batch_step(ctrl.state[None, :], np.array([float(e)]), u, 0)
    return float(pi[0]), replace(ctrl, state=s[0], position=ctrl.position + 1)


@dataclass(frozen=True)
class ProbabilityMap:
    """Static map applied after the linear controller.

    ``kind`` is ``"identity"``, ``"clamp"`` (into ``[lo, hi]``) or
    ``"affine_clamp"`` (``alpha * |raw| + beta`` clamped into ``[eps, 1 - eps]``).
    """

    kind: str = "identity"
    lo: object = 0
    hi: object = 1
    alpha: object = 1
    beta: object = 0
    eps: object = 0

    def __post_init__(self):
        if self.kind not in ("identity", "clamp", "affine_clamp"):
            raise ModelValidationError(f"unknown probability map kind {self.kind!r}")
        if self.kind == "clamp" and not self.lo <= self.hi:
            raise ModelValidationError("clamp needs lo <= hi")
        if self.kind == "affine_clamp" and not 0 <= self.eps <= 0.5:
            raise ModelValidationError("affine_clamp needs 0 <= eps <= 1/2")

    @classmethod
    def clamp(cls, lo=0, hi=1):
        return cls("clamp", lo=lo, hi=hi)

    @classmethod
    def affine_clamp(cls, alpha, beta, eps):
        return cls("affine_clamp", alpha=alpha, beta=beta, eps=eps)

    @property
    def bounds(self):
        if self.kind == "clamp":
            return self.lo, self.hi
        if self.kind == "affine_clamp":
            return self.eps, 1 - self.eps
        return None

    def __call__(self, raw):
        if self.kind == "identity":
            return raw
        if self.kind == "clamp":
            return min(self.hi, max(self.lo, raw))
        return min(1 - self.eps, max(self.eps, self.alpha * abs(raw) + self.beta))

    def _batch(self, raw):
        if self.kind == "identity":
            return raw
        if self.kind == "clamp":
            return np.clip(raw, float(self.lo), float(self.hi))
        val = float(self.alpha) * np.abs(raw) + float(self.beta)
        return np.clip(val, float(self.eps), 1.0 - float(self.eps))


def apply_probability_map(m, raw):
    return m(raw)
