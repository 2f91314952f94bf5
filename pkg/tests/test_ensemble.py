from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from support import example1, example2

from ergoloop.agents import SigmoidBernoulliAgent
from ergoloop.analysis import (
    ERGODIC_FLAG,
    INCONCLUSIVE_FLAG,
    NON_ERGODIC_FLAG,
    ensemble,
    ic_dependence_test,
)
from ergoloop.analysis.ensemble import thread_count
from ergoloop.control import LinearController, pi_controller
from ergoloop.filters import MovingAverageFilter
from ergoloop.loop import ClosedLoop, InitialCondition, initial_state, seed_sequence, step


def sigmoid_loop(controller=None):
    agents = [SigmoidBernoulliAgent(0.1, 0.8, 2.0, 0.5)] * 2 + [
        SigmoidBernoulliAgent(0.15, 0.7, 3.0, 0.0, increasing=False)
    ]
    return ClosedLoop(
        agents,
        controller or LinearController(0.5, 1, 0.2, 0.3),
        MovingAverageFilter((0.5, 0.5)),
        reference=1.5,
    )


def test_example2_balanced_start_never_moves():
    loop = example2()
    stats = ensemble(loop, [InitialCondition.active_count(50, 100)], realizations=20, horizon=300)
    label = stats.labels[0]
    assert stats.summary(label, "init=1") == (1.0, 0.0)
    assert stats.summary(label, "init=0") == (0.0, 0.0)


def test_single_realization_zero_horizon():
    ic = InitialCondition("10", agents=(1, 0))
    stats = ensemble(example1(), [ic], realizations=1, horizon=0)
    res = stats.result("10")
    assert res.agent_mean.tolist() == [1.0, 0.0]
    assert np.all(np.isnan(res.agent_se))
    assert res.mean_y.tolist() == [1.0]


@pytest.mark.parametrize("burn_in", [0, 7])
def test_time_average_matches_manual_stepping(burn_in):
    loop = sigmoid_loop()
    ic = InitialCondition("start", agents=(1, 0, 1), controller=(2.0,))
    horizon, seed = 40, 99
    stats = ensemble(loop, [ic], realizations=1, horizon=horizon, seed=seed, burn_in=burn_in)

    rng = np.random.default_rng(seed_sequence(seed, 0, 0))
    state = initial_state(loop, ic)
    xs = [state.x.copy()]
    for _ in range(horizon):
        state = step(loop, state, rng)
        xs.append(state.x.copy())
    expected = np.mean(xs[burn_in:], axis=0)
    assert np.allclose(stats.result("start").agent_mean, expected, rtol=0, atol=1e-12)


def test_mean_and_se_over_realizations():
    loop = sigmoid_loop()
    ic = InitialCondition("s", agents=(0, 0, 0))
    horizon, seed, r_count = 25, 3, 6
    stats = ensemble(loop, [ic], realizations=r_count, horizon=horizon, seed=seed)
    averages = []
    for r in range(r_count):
        rng = np.random.default_rng(seed_sequence(seed, 0, r))
        state = initial_state(loop, ic)
        total = state.x.copy()
        for _ in range(horizon):
            state = step(loop, state, rng)
            total += state.x
        averages.append(total / (horizon + 1))
    averages = np.array(averages)
    res = stats.result("s")
    assert np.allclose(res.agent_mean, averages.mean(axis=0), atol=1e-12)
    se = averages.std(axis=0, ddof=1) / np.sqrt(r_count)
    assert np.allclose(res.agent_se, se, atol=1e-12)
    pooled = averages.mean(axis=1)
    assert stats.summary("s", "init=0") == pytest.approx(
        (pooled.mean(), pooled.std(ddof=1) / np.sqrt(r_count)), abs=1e-12
    )


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(0, 30))
def test_time_averages_stay_in_alphabet_range(seed, realizations, horizon):
    stats = ensemble(
        sigmoid_loop(),
        [InitialCondition("a", agents=(1, 1, 0))],
        realizations=realizations,
        horizon=horizon,
        seed=seed,
        batch_size=7,
    )
    res = stats.result("a")
    assert np.all((res.agent_mean >= 0) & (res.agent_mean <= 1))
    assert np.all((res.mean_y >= 0) & (res.mean_y <= 3))


def test_thread_count_does_not_change_results(monkeypatch):
    loop = ClosedLoop(
        [SigmoidBernoulliAgent(0.02, 0.95, 100, 5)] * 2
        + [SigmoidBernoulliAgent(0.03, 0.95, 100, 1, increasing=False)] * 2,
        pi_controller(0.1, -4, 5.0),
        MovingAverageFilter((Fraction(1, 2),) * 2),
        reference=2,
    )
    ics = [InitialCondition("a", agents=(0, 0, 0, 0)), InitialCondition("b", agents=(1, 1, 1, 1))]
    kwargs = dict(realizations=53, horizon=60, seed=5, batch_size=10)
    monkeypatch.setenv("ERGOLOOP_THREADS", "1")
    assert thread_count(8) == 1
    serial = ensemble(loop, ics, **kwargs)
    monkeypatch.setenv("ERGOLOOP_THREADS", "4")
    parallel = ensemble(loop, ics, threads=4, **kwargs)
    assert serial.to_csv() == parallel.to_csv()
    assert serial.trajectory_csv("b") == parallel.trajectory_csv("b")
    # batch boundaries are part of the merge but not of the random streams
    other = ensemble(loop, ics, **{**kwargs, "batch_size": 250})
    assert np.allclose(other.result("a").agent_mean, serial.result("a").agent_mean, atol=1e-12)


def test_identical_initial_conditions_agree():
    ic = InitialCondition("p", agents=(1, 0, 1))
    twin = InitialCondition("q", agents=(1, 0, 1))
    stats = ensemble(sigmoid_loop(), [ic, twin], realizations=200, horizon=400, seed=1)
    test = ic_dependence_test(stats, ("p", "agent=1"), ("q", "agent=1"))
    assert test.verdict == ERGODIC_FLAG
    assert test.difference < 3 * test.combined_se + 1e-12


def test_example1_split_is_flagged():
    stats = ensemble(
        example1(),
        [InitialCondition("01", agents=(0, 1)), InitialCondition("10", agents=(1, 0))],
        realizations=10,
        horizon=50,
    )
    test = ic_dependence_test(stats, ("01", "agent=1"), ("10", "agent=1"))
    assert test == (NON_ERGODIC_FLAG, 1.0, 0.0)


def test_ic_test_inconclusive_band():
    stats = ensemble(
        example1(),
        [InitialCondition("01", agents=(0, 1)), InitialCondition("10", agents=(1, 0))],
        realizations=2,
        horizon=5,
    )
    assert ic_dependence_test(stats, ("01", "agent=1"), ("10", "agent=1"), threshold=1.0).verdict == (
        INCONCLUSIVE_FLAG
    )


def test_unknown_keys_raise():
    stats = ensemble(example1(), [InitialCondition("11", agents=(1, 1))], realizations=2, horizon=3)
    with pytest.raises(KeyError):
        stats.result("00")
    with pytest.raises(KeyError):
        stats.summary("11", "init=0")


def test_csv_layout():
    stats = ensemble(
        example1(),
        [InitialCondition("10", agents=(1, 0)), InitialCondition("11", agents=(1, 1))],
        realizations=3,
        horizon=4,
        seed=8,
        digest="d",
    )
    lines = stats.to_csv().splitlines()
    assert lines[:2] == ["# config_digest=d", "# seed=8"]
    assert lines[2] == (
        "ic,init=1,init=1_se,init=0,init=0_se,agent=1,agent=1_se,agent=2,agent=2_se,R,horizon,burn_in"
    )
    assert lines[3] == "10,1,0,0,0,1,0,0,0,3,4,0"
    assert lines[4].startswith("11,") and lines[4].split(",")[3:5] == ["nan", "nan"]
    assert len(lines) == 5
    short = stats.to_csv(agents=False).splitlines()[2]
    assert short == "ic,init=1,init=1_se,init=0,init=0_se,R,horizon,burn_in"
    traj = stats.trajectory_csv("10").splitlines()
    assert traj[2] == "k,ybar,x1bar" and len(traj) == 3 + 5


def test_argument_checks():
    with pytest.raises(ValueError):
        ensemble(example1(), [(0, 0)], realizations=0, horizon=5)
    with pytest.raises(ValueError):
        ensemble(example1(), [(0, 0)], realizations=1, horizon=5, burn_in=6)
