import time
from fractions import Fraction

import numpy as np
import pytest
from support import example1, example2

from ergoloop.agents import BinaryFlipAgent, SigmoidBernoulliAgent
from ergoloop.analysis import (
    ERGODIC,
    NON_ERGODIC,
    FiniteChain,
    absorption_probabilities,
    build_finite_chain,
    chain_ergodicity_verdict,
    recurrent_classes,
    stationary_measures,
    verify_theorem1,
)
from ergoloop.control import LinearController, ProbabilityMap, pi_controller
from ergoloop.errors import BudgetError, ModelValidationError, UnsupportedStructureError
from ergoloop.filters import MovingAverageFilter
from ergoloop.loop import ClosedLoop, InitialCondition, simulate

Q = Fraction(1, 4)


def test_example1_chain_rows_are_exact():
    t0 = time.perf_counter()
    chain = build_finite_chain(example1())
    assert time.perf_counter() - t0 < 1.0
    assert chain.exact and chain.states == [(0, 0), (0, 1), (1, 0), (1, 1)]
    for s in [(0, 0), (1, 1)]:
        assert chain.row(s) == {t: Q for t in chain.states}
        assert all(type(p) is Fraction for p in chain.row(s).values())
    assert chain.row((0, 1)) == {(0, 1): 1}
    assert chain.row((1, 0)) == {(1, 0): 1}


def test_example1_classes_and_measures():
    chain = build_finite_chain(example1())
    assert recurrent_classes(chain) == [((0, 1),), ((1, 0),)]
    measures = stationary_measures(chain)
    assert [m.tolist() for m in measures] == [[0, 1, 0, 0], [0, 0, 1, 0]]


@pytest.mark.parametrize("start", [(0, 0), (1, 1)])
def test_example1_absorption_is_symmetric(start):
    probs = absorption_probabilities(build_finite_chain(example1()), start)
    assert probs[frozenset({(0, 1)})] == pytest.approx(0.5, abs=1e-12)
    assert probs[frozenset({(1, 0)})] == pytest.approx(0.5, abs=1e-12)


def test_absorption_from_absorbed_state():
    probs = absorption_probabilities(build_finite_chain(example1()), (1, 0))
    assert probs == {frozenset({(1, 0)}): 1.0, frozenset({(0, 1)}): 0.0}


def test_zero_signal_gives_identity_chain():
    loop = ClosedLoop([BinaryFlipAgent()], LinearController(0, 0, 0, 0), prob_map=ProbabilityMap.clamp())
    chain = build_finite_chain(loop)
    assert chain.exact_matrix() == [[1, 0], [0, 1]]


def test_scaled_example2_chain():
    chain = build_finite_chain(example2(4, 2, Fraction(1, 4)))
    assert len(chain) == 16
    absorbing = {s for s in chain.states if sum(s) == 2}
    assert len(absorbing) == 6
    classes = recurrent_classes(chain)
    assert {c[0] for c in classes} == absorbing and all(len(c) == 1 for c in classes)
    assert chain_ergodicity_verdict(chain).verdict == NON_ERGODIC


def test_toy_chains():
    identity = FiniteChain([0, 1, 2], [{0: 1}, {1: 1}, {2: 1}], True)
    assert len(recurrent_classes(identity)) == 3
    cycle = FiniteChain(["a", "b"], [{1: 1}, {0: 1}], True)
    assert recurrent_classes(cycle) == [("a", "b")]
    assert stationary_measures(cycle)[0] == pytest.approx([0.5, 0.5], abs=1e-12)
    assert chain_ergodicity_verdict(cycle).verdict == ERGODIC
    single = FiniteChain(["only"], [{0: 1}], True)
    assert stationary_measures(single)[0].tolist() == [1.0]


def test_invalid_rows_rejected():
    with pytest.raises(ModelValidationError):
        FiniteChain([0, 1], [{0: 0.5}, {1: 1}], False)
    with pytest.raises(ModelValidationError):
        FiniteChain([0, 1], [{0: 1.5, 1: -0.5}, {1: 1}], False)


def test_unsupported_structures():
    loop = ClosedLoop([BinaryFlipAgent()], pi_controller(0.1, 0.5), prob_map=ProbabilityMap.clamp())
    with pytest.raises(UnsupportedStructureError):
        build_finite_chain(loop)
    with pytest.raises(BudgetError):
        build_finite_chain(example2(30, 15, Fraction(1, 30)))


def test_chain_and_theorem1_agree_on_cause():
    loop = example1()
    assert chain_ergodicity_verdict(build_finite_chain(loop)).verdict == NON_ERGODIC
    cert = verify_theorem1(loop)
    assert not cert.certified
    assert cert.evidence["floor_violated"] is True
    assert any("floor" in r for r in cert.reasons)


def _sigmoid_loop(filt=None):
    agents = [SigmoidBernoulliAgent(0.1, 0.8, 2.0, 0.5)] * 2 + [
        SigmoidBernoulliAgent(0.15, 0.7, 3.0, 0.0, increasing=False)
    ]
    return ClosedLoop(agents, LinearController(0, 0, 0, 0.8), filt, reference=1.5)


def _total_variation(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def _state_labels(chain, trace, memory):
    index = {s: i for i, s in enumerate(chain.states)}
    xs = trace.x.astype(int)
    labels = []
    for k in range(len(trace)):
        agents = tuple(int(v) for v in xs[k])
        if memory:
            buf = tuple(int(round(v)) for v in trace.xf[k])
            labels.append(index[(agents, buf)])
        else:
            labels.append(index[agents])
    return np.array(labels)


@pytest.mark.parametrize("filt", [None, MovingAverageFilter((0.5, 0.5))])
def test_visit_frequencies_match_stationary_measure(filt):
    loop = _sigmoid_loop(filt)
    chain = build_finite_chain(loop)
    assert not chain.exact
    (mu,) = stationary_measures(chain)
    trace = simulate(loop, horizon=100_000, seed=11)
    labels = _state_labels(chain, trace, loop.filter.memory)
    freq = np.bincount(labels, minlength=len(chain)) / len(labels)
    assert _total_variation(freq, mu) < 0.02


def test_absorption_mixture_matches_monte_carlo():
    loop = example2(4, 2, Fraction(1, 4))
    chain = build_finite_chain(loop)
    start = (0, 0, 0, 0)
    probs = absorption_probabilities(chain, start)
    assert sum(probs.values()) == pytest.approx(1.0, abs=1e-12)
    predicted = np.zeros(len(chain))
    for states, p in probs.items():
        (s,) = states
        predicted[chain.index(s)] = p
    # 2000 realizations x 50 steps = 1e5 simulated steps
    counts = np.zeros(len(chain))
    ic = InitialCondition("0000", agents=start)
    for r in range(2000):
        trace = simulate(loop, ic, horizon=50, seed=r)
        counts[chain.index(tuple(int(v) for v in trace.x[-1]))] += 1
    assert _total_variation(counts / counts.sum(), predicted) < 0.02
