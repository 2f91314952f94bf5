from fractions import Fraction

import numpy as np
import pytest
from support import example1

from ergoloop.agents import AffineIFSAgent, BinaryFlipAgent, ConstantLaw
from ergoloop.analysis import (
    ERGODIC,
    INCONCLUSIVE,
    NON_ERGODIC,
    nonergodicity_certificate,
    unit_circle_poles,
    verify_lemma1,
    verify_theorem1,
)
from ergoloop.config import bundled_config
from ergoloop.control import LinearController, ProbabilityMap, lag_controller, pi_controller
from ergoloop.errors import RepresentationError
from ergoloop.filters import LinearFilter, MovingAverageFilter
from ergoloop.loop import ClosedLoop


@pytest.fixture(scope="module")
def pivslag():
    cfg = bundled_config("pivslag")
    return cfg.build_loop("pi"), cfg.build_loop("lag")


def test_lag_loop_is_certified(pivslag):
    cert = verify_theorem1(pivslag[1])
    assert cert.verdict == ERGODIC and cert.reasons == []
    assert cert.evidence["filter_embedded"] is True
    assert cert.evidence["controller_spectral_radius"] == pytest.approx(0.99)
    assert cert.evidence["m"] is not None
    assert cert.evidence["augmented_norm_at_m"] < 1
    assert 0 < cert.evidence["delta"] < 1


def test_pi_loop_is_not_certified(pivslag):
    cert = verify_theorem1(pivslag[0])
    assert cert.verdict == INCONCLUSIVE
    assert any("controller state matrix is not Schur" in r for r in cert.reasons)
    assert cert.evidence["m"] is None


def test_example1_floor_violation():
    cert = verify_theorem1(example1())
    assert cert.verdict == INCONCLUSIVE
    assert cert.evidence["floor_violated"] is True
    assert cert.evidence["delta"] is None


def test_theorem1_collects_every_reason():
    agent = AffineIFSAgent(1.2, [[0.0], [1.0]], ConstantLaw([0.5, 0.5]), floor=0.5, validate=False)
    filt = LinearFilter(1.1, 1, np.zeros((1, 0)), 1)
    loop = ClosedLoop([agent], LinearController(1.5, 1, 1, 0), filt, validate=False)
    cert = verify_theorem1(loop)
    text = " ".join(cert.reasons)
    assert "controller" in text and "filter" in text and "agent 1" in text
    assert cert.evidence["m"] is None


def test_lemma1_diagonal_pair():
    mats = [np.diag([0.9, 0.1]), np.diag([0.1, 0.9])]
    cert = verify_lemma1(mats, [np.eye(2)] * 2)
    assert cert.verdict == ERGODIC and cert.evidence["m"] == 1


def test_lemma1_identity_mode_fails():
    cert = verify_lemma1([np.eye(2)], [np.eye(2)])
    assert cert.verdict == INCONCLUSIVE


def test_lemma1_rotation_pair():
    def rot(t):
        return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])

    cert = verify_lemma1([0.99 * rot(np.pi / 2), 0.99 * rot(-np.pi / 2)], [np.eye(2)] * 2)
    assert cert.verdict == ERGODIC and cert.evidence["m"] == 1


def test_lemma1_lmi_without_norm_contraction():
    # P-norm contracts but the Euclidean norm needs a few factors
    a = np.array([[0.5, 2.0], [0.0, 0.5]])
    p = np.array([[1.0, 0.0], [0.0, 40.0]])
    cert = verify_lemma1([a], [p])
    assert cert.verdict == ERGODIC
    assert cert.evidence["m"] > 1
    assert np.linalg.norm(np.linalg.matrix_power(a, cert.evidence["m"]), 2) < 1


def test_pi_loop_nonergodicity(pivslag):
    cert = nonergodicity_certificate(pivslag[0])
    assert cert.verdict == NON_ERGODIC
    assert cert.evidence["K"] == 1
    assert cert.evidence["pole"] == "1"
    assert cert.evidence["filter_outputs"] == 9
    assert cert.evidence["g"] == Fraction(1, 2)


def test_lag_loop_has_no_unit_pole(pivslag):
    cert = nonergodicity_certificate(pivslag[1])
    assert cert.verdict == INCONCLUSIVE
    assert cert.evidence["K"] is None


def test_trivial_error_group():
    one = AffineIFSAgent(0.0, [[1.0], [1.0]], ConstantLaw([0.5, 0.5]), floor=0.5)
    loop = ClosedLoop([one], pi_controller(0.1, 0.5), MovingAverageFilter((1,)), reference=1)
    cert = nonergodicity_certificate(loop)
    assert cert.evidence["g"] == 0
    assert cert.verdict == INCONCLUSIVE


def test_nonergodicity_needs_exact_reference():
    loop = ClosedLoop(
        [BinaryFlipAgent()] * 2,
        pi_controller(0.1, -4),
        MovingAverageFilter((Fraction(1, 2),) * 2),
        reference=float("nan"),
        prob_map=ProbabilityMap.clamp(),
    )
    with pytest.raises(RepresentationError):
        nonergodicity_certificate(loop)


def test_unit_circle_poles_examples():
    a = np.array([[0.0, -1.0], [1.0, 0.0]])
    poles, marginal = unit_circle_poles(a, np.array([[1.0], [0.0]]), np.array([[1.0, 0.0]]))
    assert marginal and sorted(k for _, k in poles) == [4, 4]
    poles, _ = unit_circle_poles(np.array([[-1.0]]), np.ones((1, 1)), np.ones((1, 1)))
    assert [k for _, k in poles] == [2]
    poles, _ = unit_circle_poles(np.array([[1.0]]), np.zeros((1, 1)), np.ones((1, 1)))
    assert poles == []
    jordan = np.array([[1.0, 1.0], [0.0, 1.0]])
    _, marginal = unit_circle_poles(jordan, np.eye(2)[:, :1], np.eye(2)[:1])
    assert not marginal
    assert unit_circle_poles(lag_controller(0.1, -4, 0.5).a, np.ones((1, 1)), np.ones((1, 1)))[0] == []


def test_to_text_format(pivslag):
    text = nonergodicity_certificate(pivslag[0]).to_text("certificate.1.")
    lines = text.splitlines()
    assert lines[0] == "certificate.1.kind = theorem3"
    assert lines[1] == "certificate.1.verdict = non-ergodic-certified"
    assert "certificate.1.evidence.g = 1/2" in lines
    assert "certificate.1.evidence.marginally_stable = true" in lines
    inconclusive = verify_theorem1(example1()).to_text()
    assert "evidence.delta = absent" in inconclusive
    assert any(line.startswith("reason.1 = ") for line in inconclusive.splitlines())
