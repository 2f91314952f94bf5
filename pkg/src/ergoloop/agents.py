"""Stochastic agent families reacting to the broadcast signal ``pi``.

Every agent consumes exactly one uniform draw per step. Batch kernels
(``_batch_step``) operate on arrays shaped ``(R, n, d)`` for ``R``
realizations of ``n`` identical agents with ``d``-dimensional state, and also
return the index of the affine branch taken so augmented-form replays are exact.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ModelValidationError, SignalRangeError
from .numerics import as_matrix, is_schur

PROB_SUM_TOL = 1e-12


def aggregate(states):
    """Total resource use ``y`` of a population (all state components summed)."""
    states = list(states)
    if not states:
        raise ValueError("aggregate needs at least one agent state")
    return sum(np.sum(s) if np.ndim(s) else s for s in states)


@dataclass(frozen=True)
class BinaryFlipAgent:
    """Agent in {0, 1} that toggles its state with probability ``pi``."""

    dim = 1
    alphabet = (0, 1)

    def transition(self, x, pi):
        """Exact next-state law ``{value: probability}`` used by chain builders."""
        _check_unit(pi)
        if pi == 0:
            return {x: 1}
        if pi == 1:
            return {1 - x: 1}
        return {x: 1 - pi, 1 - x: pi}

    def signal_in_range(self, pi):
        return bool(np.all((pi >= 0) & (pi <= 1)))

    def as_ifs(self):
        return AffineIFSAgent(0.0, [[0.0], [1.0]], FlipLaw(), floor=0.0, validate=False)

    def _batch_step(self, x, pi, u):
        flip = u < pi[:, None]
        new = np.where(flip[..., None], 1.0 - x, x)
        return new, new[..., 0].astype(np.intp)


def _check_unit(pi):
    if not 0 <= pi <= 1:
        raise SignalRangeError(pi)


def binary_flip_step(x, pi, draw):
    """Return ``1 - x`` if ``draw < pi`` else ``x``."""
    if x not in (0, 1):
        raise ModelValidationError(f"binary agent state must be 0 or 1, got {x!r}")
    _check_unit(pi)
    return 1 - x if draw < pi else x


@dataclass(frozen=True)
class SigmoidBernoulliAgent:
    """Memoryless agent active with a sigmoid probability of ``pi``.

    Increasing orientation: ``base + amplitude * s``; decreasing orientation:
    ``base + amplitude - amplitude * s``, with
    ``s = 1 / (1 + exp(-slope * (pi - threshold)))``. The activation
    probability therefore always lies in ``[base, base + amplitude]``.
    """

    base: float
    amplitude: float
    slope: float
    threshold: float
    increasing: bool = True

    dim = 1
    alphabet = (0, 1)

    def __post_init__(self):
        if not (self.base > 0 and self.amplitude > 0 and self.base + self.amplitude < 1):
            raise ModelValidationError(
                "sigmoid agent needs base > 0, amplitude > 0 and base + amplitude < 1"
            )

    def prob_active(self, pi):
        s = expit(self.slope * (np.asarray(pi, dtype=float) - self.threshold))
        if self.increasing:
            p = self.base + self.amplitude * s
        else:
            p = (self.base + self.amplitude) - self.amplitude * s
        return p if np.ndim(p) else float(p)

    @property
    def floor(self):
        """Smallest probability of either outcome."""
        return min(self.base, 1.0 - self.base - self.amplitude)

    def transition(self, x, pi):
        p = self.prob_active(float(pi))
        return {1: p, 0: 1.0 - p}

    def signal_in_range(self, pi):
        return True

    def as_ifs(self):
        """The same agent as a two-branch IFS with zero state matrix."""
        return AffineIFSAgent(0.0, [[0.0], [1.0]], SigmoidLaw(self), floor=self.floor)

    def _batch_step(self, x, pi, u):
        p = self.prob_active(pi)
        active = u < p[:, None]
        return active[..., None].astype(float), active.astype(np.intp)


def sigmoid_step(agent, pi, draw):
    return 1 if draw < agent.prob_active(pi) else 0


class ConstantLaw:
    """Branch probabilities independent of state and signal."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=float)

    def __call__(self, x, pi):
        shape = np.shape(pi) + self.probs.shape
        return np.broadcast_to(self.probs, shape)

    def __eq__(self, other):
        return isinstance(other, ConstantLaw) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"ConstantLaw({self.probs.tolist()})"


class SigmoidLaw:
    """Two-branch law (inactive, active) driven by a sigmoid agent's curve."""

    def __init__(self, agent):
        self.agent = agent

    def __call__(self, x, pi):
        p = np.asarray(self.agent.prob_active(pi), dtype=float)
        return np.stack([1.0 - p, p], axis=-1)

    def __eq__(self, other):
        return isinstance(other, SigmoidLaw) and self.agent == other.agent

    def __hash__(self):
        return hash(self.agent)

    def __repr__(self):
        return f"SigmoidLaw({self.agent!r})"


class FlipLaw:
    """Binary flip agent seen as an IFS: branch 1 means next state is 1."""

    def __call__(self, x, pi):
        x = np.asarray(x, dtype=float)[..., 0]
        pi = np.asarray(pi, dtype=float)
        p1 = x * (1.0 - pi) + (1.0 - x) * pi
        return np.stack([1.0 - p1, p1], axis=-1)

    def __eq__(self, other):
        return isinstance(other, FlipLaw)

    def __hash__(self):
        return hash(FlipLaw)

    def __repr__(self):
        return "FlipLaw()"


@dataclass(frozen=True, eq=False)
class AffineIFSAgent:
    """Agent ``x <- a @ x + offsets[j]`` with ``j`` drawn from ``prob_law(x, pi)``.

    ``prob_law`` must be vectorized: given ``x`` shaped ``(..., d)`` and ``pi``
    shaped ``(...)`` it returns probabilities shaped ``(..., n_branches)``.
    Construction samples the law on a grid of states and signals and rejects
    vectors that do not sum to one or dip below ``floor``.
    """

    a: np.ndarray
    offsets: np.ndarray
    prob_law: object
    floor: float
    validate: bool = field(default=True, repr=False)
    pi_range: tuple = field(default=(0.0, 1.0), repr=False)

    def __post_init__(self):
        a = as_matrix(self.a, "a")
        if a.shape[0] != a.shape[1]:
            raise ModelValidationError(f"state matrix must be square, got {a.shape}")
        offsets = np.array(self.offsets, dtype=float)
        if offsets.ndim == 1:
            offsets = offsets.reshape(-1, 1) if a.shape[0] == 1 else offsets.reshape(1, -1)
        if offsets.ndim != 2 or offsets.shape[1] != a.shape[0] or offsets.shape[0] < 1:
            raise ModelValidationError(
                f"offsets must be (n_branches, {a.shape[0]}), got {offsets.shape}"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "offsets", offsets)
        if self.validate:
            if not is_schur(a):
                raise ModelValidationError("state matrix of an affine IFS agent must be Schur")
            if not self.floor > 0:
                raise ModelValidationError("probability floor must be positive")
            low = self.sampled_min_probability()
            if low < self.floor - PROB_SUM_TOL:
                raise ModelValidationError(
                    f"branch probability {low:.3g} falls below declared floor {self.floor}"
                )

    @property
    def dim(self):
        return self.a.shape[0]

    @property
    def n_branches(self):
        return self.offsets.shape[0]

    @property
    def alphabet(self):
        if np.any(self.a != 0) or self.dim != 1:
            return None
        return tuple(sorted(set(self.offsets[:, 0].tolist())))

    def state_box(self):
        """Axis-aligned box containing the attractor of the affine maps."""
        lo = self.offsets.min(axis=0)
        hi = self.offsets.max(axis=0)
        norm = np.linalg.norm(self.a, ord=2)
        if norm == 0:
            return lo, hi
        if norm < 1:
            radius = np.abs(self.offsets).max() / (1.0 - norm)
        else:
            radius = 2.0 * np.abs(self.offsets).max() + 1.0
        return np.full(self.dim, -radius), np.full(self.dim, radius)

    def sample_grid(self, n=21, pi_range=None):
        lo, hi = self.state_box()
        if self.dim == 1:
            xs = np.linspace(lo[0], hi[0], n).reshape(-1, 1)
        else:
            rng = np.random.default_rng(0)
            xs = lo + (hi - lo) * rng.random((n, self.dim))
        p_lo, p_hi = self.pi_range if pi_range is None else pi_range
        pis = np.linspace(p_lo, p_hi, n)
        x_grid = np.repeat(xs, len(pis), axis=0)
        pi_grid = np.tile(pis, len(xs))
        return x_grid, pi_grid

    def sampled_min_probability(self, n=21, pi_range=None):
        x, pi = self.sample_grid(n, pi_range)
        probs = np.asarray(self.prob_law(x, pi), dtype=float)
        if probs.shape != (len(pi), self.n_branches):
            raise ModelValidationError(
                f"prob_law returned shape {probs.shape}, expected {(len(pi), self.n_branches)}"
            )
        if np.any(np.abs(probs.sum(axis=-1) - 1.0) > PROB_SUM_TOL):
            raise ModelValidationError("branch probabilities do not sum to one")
        return float(probs.min())

    def transition(self, x, pi):
        if self.alphabet is None:
            raise ModelValidationError("only zero-matrix scalar IFS agents have a finite alphabet")
        probs = np.asarray(self.prob_law(np.array([[float(x)]]), np.array([float(pi)])))[0]
        out = {}
        for b, p in zip(self.offsets[:, 0].tolist(), probs.tolist()):
            if p > 0:
                out[b] = out.get(b, 0.0) + p
        return out

    def signal_in_range(self, pi):
        return True

    def as_ifs(self):
        return self

    def _batch_step(self, x, pi, u):
        r, n, _ = x.shape
        probs = np.asarray(self.prob_law(x, np.broadcast_to(pi[:, None], (r, n))), dtype=float)
        cdf = np.cumsum(probs, axis=-1)
        j = np.minimum((u[..., None] >= cdf).sum(axis=-1), self.n_branches - 1)
        new = x @ self.a.T + self.offsets[j]
        return new, j

    def __eq__(self, other):
        return (
            isinstance(other, AffineIFSAgent)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.offsets, other.offsets)
            and self.prob_law == other.prob_law
            and self.floor == other.floor
        )

    def __hash__(self):
        return hash((self.a.tobytes(), self.offsets.tobytes(), self.floor))


def affine_ifs_step(agent, x, pi, draw):
    """One IFS step for a single agent: inverse-CDF branch choice, then ``a @ x + b_j``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    new, _ = agent._batch_step(x.reshape(1, 1, -1), np.array([float(pi)]), np.array([[draw]]))
    return new[0, 0]

