"""Exact Markov-chain analysis of loops with finitely many joint states."""

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from ..control import LinearController, MemorylessGainController
from ..errors import BudgetError, ModelValidationError, UnsupportedStructureError
from ..filters import MovingAverageFilter
from ..numerics import sum_set
from .certificates import ERGODIC, INCONCLUSIVE, NON_ERGODIC, Certificate

STATE_BUDGET = 10**6
EDGE_BUDGET = 10**7


@dataclass
class FiniteChain:
    """Enumerated joint states with one sparse row of successors per state.

    ``rows[i]`` maps successor index to probability; probabilities are
    Fractions whenever every loop parameter was exact (``exact`` is then true).
    ``states[i]`` is the agent-value tuple, or ``(agents, buffer)`` when the
    filter carries a memory of past aggregates.
    """

    states: list
    rows: list
    exact: bool

    def __post_init__(self):
        self._index = {s: i for i, s in enumerate(self.states)}
        for i, row in enumerate(self.rows):
            total = sum(row.values())
            if any(p < 0 for p in row.values()) or abs(total - 1) > 1e-12:
                raise ModelValidationError(f"row {i} is not a probability vector (sum {total})")

    def __len__(self):
        return len(self.states)

    def index(self, label):
        return self._index[label]

    def probability(self, src, dst):
        return self.rows[self.index(src)].get(self.index(dst), 0)

    def row(self, label):
        """Successor distribution of ``label`` keyed by state label."""
        return {self.states[j]: p for j, p in self.rows[self.index(label)].items()}

    @property
    def matrix(self):
        """Float transition matrix as ``scipy.sparse.csr_matrix``."""
        ii, jj, vv = [], [], []
        for i, row in enumerate(self.rows):
            for j, p in row.items():
                ii.append(i)
                jj.append(j)
                vv.append(float(p))
        n = len(self.states)
        return sp.csr_matrix((vv, (ii, jj)), shape=(n, n))

    def dense(self):
        return self.matrix.toarray()

    def exact_matrix(self):
        """Nested lists of exact entries (zeros included)."""
        n = len(self.states)
        out = [[Fraction(0)] * n for _ in range(n)]
        for i, row in enumerate(self.rows):
            for j, p in row.items():
                out[i][j] = p
        return out


def _controller_output(ctrl):
    if isinstance(ctrl, MemorylessGainController):
        return ctrl
    # a zero output row means the internal state never reaches pi
    if isinstance(ctrl, LinearController) and (ctrl.n_states == 0 or not ctrl.c.any()):
        d = ctrl.d[0, 0]
        return lambda e: d * e
    raise UnsupportedStructureError(
        f"controller {type(ctrl).__name__} has an unbounded internal state; "
        "only memoryless controllers give a finite chain"
    )


def build_finite_chain(loop, budget=STATE_BUDGET, edge_budget=EDGE_BUDGET):
    """Enumerate every joint state of a finite loop and its exact successor law."""
    alphabets = []
    for i, agent in enumerate(loop.agents):
        alphabet = getattr(agent, "alphabet", None)
        if alphabet is None or agent.dim != 1:
            raise UnsupportedStructureError(f"agent {i + 1} does not have a finite alphabet")
        alphabets.append(tuple(alphabet))
    filt = loop.filter
    if not isinstance(filt, MovingAverageFilter):
        raise UnsupportedStructureError("finite chains need a moving-average (FIR) filter")
    output = _controller_output(loop.controller)
    prob_map = loop.prob_map

    memory = filt.memory
    y_values = sorted(sum_set(alphabets, budget=edge_budget)) if memory else []
    y_values = [int(v) if v.denominator == 1 else v for v in y_values]
    n_states = int(np.prod([len(a) for a in alphabets], dtype=object)) * len(y_values) ** memory
    if n_states > budget:
        raise BudgetError(f"{n_states} joint states exceeds budget {budget}")

    agent_states = list(itertools.product(*alphabets))
    buffers = list(itertools.product(y_values, repeat=memory))
    if memory:
        states = [(xs, buf) for xs in agent_states for buf in buffers]
    else:
        states = agent_states
    index = {s: i for i, s in enumerate(states)}

    rows = []
    edges = 0
    exact = True
    for state in states:
        xs, buf = state if memory else (state, ())
        y = sum(xs)
        yhat = filt.output(y, buf)
        e = loop.reference - yhat
        pi = output(e)
        if prob_map is not None:
            pi = prob_map(pi)
        laws = [agent.transition(x, pi) for agent, x in zip(loop.agents, xs)]
        next_buf = filt.shift(y, buf)
        row = {}
        for combo in itertools.product(*(law.items() for law in laws)):
            edges += 1
            if edges > edge_budget:
                raise BudgetError(f"transition enumeration exceeds {edge_budget} edges")
            p = 1
            for _, q in combo:
                p = p * q
            if p == 0:
                continue
            values = tuple(v for v, _ in combo)
            target = index[(values, next_buf) if memory else values]
            row[target] = row.get(target, 0) + p
        exact = exact and all(isinstance(p, (int, Fraction)) for p in row.values())
        rows.append(row)
    return FiniteChain(states, rows, exact)


def _closed_class_indices(chain):
    mat = chain.matrix
    n_comp, labels = connected_components(mat, directed=True, connection="strong")
    members = [[] for _ in range(n_comp)]
    for i, lab in enumerate(labels):
        members[lab].append(i)
    closed = []
    for comp in members:
        comp_set = set(comp)
        if all(j in comp_set for i in comp for j in chain.rows[i]):
            closed.append(comp)
    closed.sort(key=lambda c: c[0])
    return closed


def recurrent_classes(chain):
    """Closed communicating classes as tuples of state labels, ordered by first state."""
    return [tuple(chain.states[i] for i in comp) for comp in _closed_class_indices(chain)]


def stationary_measures(chain):
    """One stationary distribution (full-length vector) per recurrent class."""
    mat = chain.matrix
    n = len(chain)
    out = []
    for comp in _closed_class_indices(chain):
        sub = mat[comp][:, comp]
        m = len(comp)
        # mu (P - I) = 0 with the last equation replaced by sum(mu) = 1
        lhs = (sub.T - sp.identity(m, format="csr")).tolil()
        lhs[m - 1, :] = np.ones(m)
        rhs = np.zeros(m)
        rhs[m - 1] = 1.0
        mu_c = np.atleast_1d(spsolve(lhs.tocsc(), rhs)) if m > 1 else np.ones(1)
        mu = np.zeros(n)
        mu[comp] = mu_c
        out.append(mu)
    return out


def absorption_probabilities(chain, start):
    """Probability of ending in each recurrent class when started at ``start``.

    Keys are frozensets of state labels (one per recurrent class).
    """
    start_idx = chain.index(start)
    classes = _closed_class_indices(chain)
    keys = [frozenset(chain.states[i] for i in comp) for comp in classes]
    for key, comp in zip(keys, classes):
        if start_idx in comp:
            return {k: (1.0 if k == key else 0.0) for k in keys}
    recurrent = {i for comp in classes for i in comp}
    transient = [i for i in range(len(chain)) if i not in recurrent]
    pos = {i: t for t, i in enumerate(transient)}
    mat = chain.matrix.tocsr()
    q = mat[transient][:, transient]
    lhs = (sp.identity(len(transient), format="csc") - q).tocsc()
    result = {}
    for key, comp in zip(keys, classes):
        rhs = np.asarray(mat[transient][:, comp].sum(axis=1)).ravel()
        h = np.atleast_1d(spsolve(lhs, rhs))
        result[key] = float(h[pos[start_idx]])
    return result


def chain_ergodicity_verdict(chain):
    """Non-ergodic iff the chain has two or more recurrent classes."""
    classes = recurrent_classes(chain)
    evidence = {"states": len(chain), "recurrent_classes": len(classes)}
    if len(classes) >= 2:
        reasons = []
        verdict = NON_ERGODIC
    elif len(classes) == 1:
        reasons = []
        verdict = ERGODIC
    else:
        verdict, reasons = INCONCLUSIVE, ["no recurrent class found"]
    return Certificate("finite-chain", verdict, evidence, reasons)
