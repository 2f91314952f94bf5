"""Shared builders and oracles for the test suite."""

from fractions import Fraction

import mpmath
import numpy as np
from scipy.linalg import sqrtm

from ergoloop.agents import AffineIFSAgent, BinaryFlipAgent, ConstantLaw, SigmoidBernoulliAgent, SigmoidLaw
from ergoloop.control import LinearController, MemorylessGainController
from ergoloop.filters import LinearFilter
from ergoloop.loop import (
    ClosedLoop,
    augmented_layout,
    augmented_matrix,
    augmented_state,
    offset_vector,
)


def example1():
    return ClosedLoop([BinaryFlipAgent()] * 2, MemorylessGainController(Fraction(1, 2)), reference=1)


def example2(n=100, r=50, gain=Fraction(1, 100)):
    return ClosedLoop([BinaryFlipAgent()] * n, MemorylessGainController(gain), reference=r)


def rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _schur(rng, n, radius):
    a = rng.normal(size=(n, n))
    rho = max(abs(np.linalg.eigvals(a)))
    return a * (radius / rho) if rho > 0 else a


def random_linear_loop(rng):
    """Random loop with affine IFS agents, a state-space filter and a linear controller."""
    agents = []
    for _ in range(rng.integers(1, 4)):
        dim = int(rng.integers(1, 3))
        n_branches = int(rng.integers(2, 4))
        offsets = rng.normal(size=(n_branches, dim))
        a = _schur(rng, dim, rng.uniform(0.1, 0.9))
        if dim == 1 and n_branches == 2 and rng.random() < 0.5:
            law = SigmoidLaw(SigmoidBernoulliAgent(0.1, 0.8, float(rng.uniform(0.5, 3)), 0.0))
            floor = 0.1
        else:
            probs = rng.dirichlet(np.ones(n_branches)) * 0.7 + 0.3 / n_branches
            law, floor = ConstantLaw(probs), float(probs.min())
        agents.append(AffineIFSAgent(a, offsets, law, floor))
    n_f, m = int(rng.integers(1, 3)), int(rng.integers(0, 3))
    filt = LinearFilter(
        _schur(rng, n_f, rng.uniform(0.1, 0.9)),
        rng.normal(size=(n_f, 1)),
        rng.normal(size=(n_f, m)),
        rng.normal(size=(1, n_f)),
        state=rng.normal(size=n_f),
        delay=rng.normal(size=m),
    )
    n_c = int(rng.integers(0, 3))
    ctrl = LinearController(
        _schur(rng, n_c, rng.uniform(0.1, 0.9)) if n_c else np.zeros((0, 0)),
        rng.normal(size=(n_c, 1)),
        rng.normal(size=(1, n_c)),
        rng.normal(),
        state=rng.normal(size=n_c),
    )
    return ClosedLoop(agents, ctrl, filt, reference=float(rng.normal()))


def component_spectra(loop):
    """Union of component spectra plus the zeros of the y, yhat, e and pi rows."""
    eigs = []
    for a in loop.agents:
        eigs.extend(np.linalg.eigvals(a.a))
    eigs.extend([0.0] * loop.filter.memory)
    eigs.extend(np.linalg.eigvals(loop.filter.a))
    if loop.controller.n_states:
        eigs.extend(np.linalg.eigvals(loop.controller.a))
    eigs.extend([0.0] * 4)
    return np.array(eigs, dtype=complex)


def high_precision_eigvals(mat, dps=60):
    with mpmath.workdps(dps):
        ev = mpmath.eig(mpmath.matrix(mat.tolist()), left=False, right=False)
        return np.array([complex(v) for v in ev])


def spectrum_distance(a, b):
    """Largest distance in a greedy nearest-neighbour matching of two multisets."""
    assert len(a) == len(b)
    remaining = list(b)
    worst = 0.0
    for v in sorted(a, key=lambda z: (-abs(z), z.real, z.imag)):
        j = int(np.argmin([abs(v - w) for w in remaining]))
        worst = max(worst, abs(v - remaining.pop(j)))
    return worst


def is_block_lower_triangular(loop):
    layout, n = augmented_layout(loop)
    big = augmented_matrix(loop)
    blocks = list(layout.values())
    for i, rows in enumerate(blocks):
        for cols in blocks[i + 1 :]:
            if np.any(big[rows, cols] != 0):
                return False
    return True


def augmented_replay_error(loop, trace):
    """Max deviation between the trace and a free-running augmented iteration.

    The branch index drawn at each step selects the offset ``b_l``.
    """
    big = augmented_matrix(loop)
    xi = augmented_state(loop, trace, 0)
    worst = 0.0
    for k in range(len(trace) - 1):
        xi = big @ xi + offset_vector(loop, trace.branches[k])
        target = augmented_state(loop, trace, k + 1)
        worst = max(worst, float(np.max(np.abs(xi - target)) / (1 + np.max(np.abs(target)))))
    return worst


def random_verified_instance(rng, n_modes, n):
    """Random (A_i, P_i) satisfying the coupled Lyapunov inequalities by construction.

    P_i = I + q q'/2 keeps cond(P_i) small and each A_i contracts the P-norms by
    at most 0.8, so the 2-norm of every length-m product is below
    sqrt(cond) * 0.8^m and some m <= 14 must work.
    """
    lyap = []
    for _ in range(n_modes):
        q = rng.normal(size=(n, 1))
        lyap.append(np.eye(n) + 0.5 * (q @ q.T))
    mats = []
    for i in range(n_modes):
        a = rng.normal(size=(n, n))
        inv_root = np.linalg.inv(np.real(sqrtm(lyap[i])))
        worst = max(
            np.linalg.eigvalsh(inv_root @ a.T @ p @ a @ inv_root).max() for p in lyap
        )
        mats.append(a * rng.uniform(0.3, 0.8) / np.sqrt(worst))
    return mats, lyap


def random_skewed_instance(rng, n_modes, n, skew=3.0, rate=0.6):
    """Verified instance whose modes are not 2-norm contractions.

    A_i = T^-1 C_i T with ||C_i|| = rate and T unit upper triangular with
    off-diagonal ``skew``; P = T'T makes every Lyapunov inequality hold,
    and products of length m have norm at most cond(T) * rate^m.
    """
    t = np.eye(n) + np.triu(rng.uniform(-skew, skew, size=(n, n)), 1)
    t_inv = np.linalg.inv(t)
    mats = []
    for _ in range(n_modes):
        q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        mats.append(t_inv @ (rate * q) @ t)
    return mats, [t.T @ t] * n_modes
