"""Filters mapping the aggregate ``y`` to its estimate ``yhat``."""

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import BudgetError, DimensionError, ModelValidationError
from .numerics import ENUMERATION_BUDGET, as_matrix, to_rational


@dataclass(frozen=True, eq=False)
class MovingAverageFilter:
    """``yhat(k) = sum_j coefficients[j] * y(k - j)`` over the last ``M + 1`` inputs.

    ``buffer`` holds ``y(k-1), ..., y(k-M)`` (most recent first) and defaults
    to ``M`` copies of ``init``. Coefficients keep whatever number type they
    are given, so Fractions stay exact in :func:`enumerate_outputs`.
    """

    coefficients: tuple
    buffer: tuple = None
    init: object = 0

    def __post_init__(self):
        coeffs = tuple(self.coefficients)
        if not coeffs:
            raise ModelValidationError("moving average needs at least one coefficient")
        m = len(coeffs) - 1
        buf = (self.init,) * m if self.buffer is None else tuple(self.buffer)
        if len(buf) != m:
            raise DimensionError(f"buffer must hold {m} past inputs, got {len(buf)}")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "buffer", buf)

    @property
    def memory(self):
        return len(self.coefficients) - 1

    def output(self, y, buffer=None):
        buffer = self.buffer if buffer is None else buffer
        total = self.coefficients[0] * y
        for c, past in zip(self.coefficients[1:], buffer):
            total += c * past
        return total

    def shift(self, y, buffer=None):
        buffer = self.buffer if buffer is None else buffer
        return ((y,) + tuple(buffer))[: self.memory]

    # batch kernels: state is the buffer, shape (R, M)
    def _batch_init(self, r):
        return np.tile(np.array(self.buffer, dtype=float).reshape(1, -1), (r, 1))

    def _batch_step(self, y, f):
        c = np.array([float(v) for v in self.coefficients])
        yhat = c[0] * y + f @ c[1:]
        f_next = np.concatenate([y[:, None], f[:, :-1]], axis=1) if self.memory else f
        return yhat, f_next


def identity_filter():
    return MovingAverageFilter((1,))


def ma_step(f, y):
    """Return ``(yhat, updated_filter)`` after feeding ``y``."""
    return f.output(y), replace(f, buffer=f.shift(y))


def shift_pair(m):
    """Delay-line input vector ``J`` (``m x 1``) and shift matrix ``L`` (``m x m``)."""
    j = np.zeros((m, 1))
    if m:
        j[0, 0] = 1.0
    return j, np.eye(m, k=-1)


@dataclass(frozen=True, eq=False)
class LinearFilter:
    """State-space filter with a tapped delay line.

    ``yhat = d x_f``; then ``x_f <- a x_f + b y + c ytilde`` and
    ``ytilde <- J y + L ytilde`` where ``ytilde`` stores the previous ``M``
    inputs. There is no direct feedthrough from ``y`` to ``yhat``.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    state: np.ndarray = None
    delay: np.ndarray = None

    def __post_init__(self):
        a = as_matrix(self.a, "a")
        n = a.shape[0]
        if a.shape != (n, n):
            raise DimensionError("a must be square")
        b = np.asarray(self.b, dtype=float).reshape(n, 1)
        c = np.asarray(self.c, dtype=float)
        c = c.reshape(n, -1) if c.size else np.zeros((n, 0))
        d = np.asarray(self.d, dtype=float).reshape(1, n)
        m = c.shape[1]
        state = np.zeros(n) if self.state is None else np.asarray(self.state, float).reshape(n)
        delay = np.zeros(m) if self.delay is None else np.asarray(self.delay, float).reshape(m)
        for name, val in (("a", a), ("b", b), ("c", c), ("d", d)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "state", state)
        object.__setattr__(self, "delay", delay)

    @property
    def n_states(self):
        return self.a.shape[0]

    @property
    def memory(self):
        return self.c.shape[1]

    @property
    def shift(self):
        return shift_pair(self.memory)

    def _batch_init(self, r):
        return np.tile(np.concatenate([self.state, self.delay]), (r, 1))

    def _batch_step(self, y, f):
        n = self.n_states
        xf, yt = f[:, :n], f[:, n:]
        j, l = self.shift
        yhat = xf @ self.d[0]
        xf_next = xf @ self.a.T + y[:, None] * self.b[:, 0] + yt @ self.c.T
        yt_next = y[:, None] * j[:, 0] + yt @ l.T
        return yhat, np.concatenate([xf_next, yt_next], axis=1)


def linear_filter_step(f, y):
    yhat, s = f._batch_step(np.array([float(y)]), f._batch_init(1))
    n = f.n_states
    return float(yhat[0]), replace(f, state=s[0, :n], delay=s[0, n:])


def embed_moving_average(f):
    """State-space form of a moving average, delayed by one step.

    The state-space filter has no feedthrough, so the embedding reproduces
    ``yhat_ma(k - 1)`` at time ``k``: ``x_f = sum_j c_j y(k - 1 - j)``.
    """
    coeffs = [float(c) for c in f.coefficients]
    return LinearFilter(
        [[0.0]],
        [[coeffs[0]]],
        np.array(coeffs[1:]).reshape(1, -1),
        [[1.0]],
        delay=[float(v) for v in f.buffer],
    )


def enumerate_outputs(f, alphabet, budget=ENUMERATION_BUDGET):
    """Exact set of values a moving average can emit when fed from ``alphabet``."""
    alphabet = {to_rational(v) for v in alphabet}
    coeffs = [to_rational(c) for c in f.coefficients]
    if len(alphabet) ** len(coeffs) > budget:
        raise BudgetError(
            f"{len(alphabet)}^{len(coeffs)} input tuples exceeds budget {budget}"
        )
    outputs = {Fraction(0)}
    for c in coeffs:
        outputs = {o + c * v for o in outputs for v in alphabet}
    return outputs
