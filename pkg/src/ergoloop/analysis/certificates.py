"""Structured verdicts on ergodicity of a closed loop.

Three checkers:

* :func:`verify_theorem1` -- sufficient conditions for a unique attractive
  invariant measure in fully linear/affine loops (Schur components,
  branch probabilities bounded away from zero, a contracting power of the
  augmented matrix).
* :func:`verify_lemma1` -- LMI certificate for switched linear systems plus
  the exhaustive product-norm search it guarantees to succeed.
* :func:`nonergodicity_certificate` -- obstruction from a controller pole at
  a root of unity combined with finite, rational filter outputs.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from ..agents import AffineIFSAgent
from ..control import LinearController
from ..errors import BudgetError
from ..filters import LinearFilter, MovingAverageFilter, embed_moving_average, enumerate_outputs
from ..loop import augmented_matrix
from ..numerics import (
    contraction_index,
    group_generator,
    is_schur,
    operator_norm,
    product_contraction_index,
    root_of_unity_order,
    spectral_radius,
    sum_set,
    to_rational,
    verify_lmi,
)

ERGODIC = "ergodic-certified"
NON_ERGODIC = "non-ergodic-certified"
INCONCLUSIVE = "inconclusive"

SCHUR_TOL = 1e-9
UNIT_CIRCLE_TOL = 1e-9


@dataclass
class Certificate:
    kind: str
    verdict: str
    evidence: dict = field(default_factory=dict)
    reasons: list = field(default_factory=list)

    @property
    def certified(self):
        return self.verdict != INCONCLUSIVE

    def to_text(self, prefix=""):
        """Key-value lines in a stable order, one fact per line."""
        lines = [f"{prefix}kind = {self.kind}", f"{prefix}verdict = {self.verdict}"]
        for key, value in self.evidence.items():
            lines.append(f"{prefix}evidence.{key} = {_render(value)}")
        for i, reason in enumerate(self.reasons):
            lines.append(f"{prefix}reason.{i + 1} = {reason}")
        return "\n".join(lines) + "\n"


def _render(value):
    if value is None:
        return "absent"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_render(v) for v in value) + "]"
    return str(value)


def _as_ifs(agent):
    return agent.as_ifs() if hasattr(agent, "as_ifs") else None


def verify_theorem1(loop, m_max=5000, grid=21, pi_range=(0.0, 1.0)):
    """Check the sufficient conditions for a unique invariant measure.

    Never raises on structural problems: every failed hypothesis is listed in
    ``reasons`` and the verdict is then inconclusive.
    """
    reasons = []
    evidence = {}
    structural = True

    ctrl, filt = loop.controller, loop.filter
    if isinstance(filt, MovingAverageFilter):
        # a moving average is linear; check it through its state-space embedding
        filt = embed_moving_average(filt)
        loop = replace(loop, filter=filt, validate=False)
        evidence["filter_embedded"] = True
    if isinstance(ctrl, LinearController):
        rho = spectral_radius(ctrl.a) if ctrl.n_states else 0.0
        evidence["controller_spectral_radius"] = rho
        if ctrl.n_states and not is_schur(ctrl.a, SCHUR_TOL):
            reasons.append(f"controller state matrix is not Schur (spectral radius {rho:.6g})")
    else:
        structural = False
        reasons.append(f"controller {type(ctrl).__name__} is not a linear state-space controller")

    if isinstance(filt, LinearFilter):
        rho = spectral_radius(filt.a)
        evidence["filter_spectral_radius"] = rho
        if not is_schur(filt.a, SCHUR_TOL):
            reasons.append(f"filter state matrix is not Schur (spectral radius {rho:.6g})")
    else:
        structural = False
        reasons.append(f"filter {type(filt).__name__} is not in state-space form")

    floors = []
    violations = []
    agent_radii = []
    for i, agent in enumerate(loop.agents):
        ifs = _as_ifs(agent)
        if not isinstance(ifs, AffineIFSAgent):
            structural = False
            reasons.append(f"agent {i + 1} is not an affine IFS agent")
            continue
        rho = spectral_radius(ifs.a)
        agent_radii.append(rho)
        if not is_schur(ifs.a, SCHUR_TOL):
            reasons.append(f"agent {i + 1} state matrix is not Schur")
        sampled = ifs.sampled_min_probability(grid, pi_range)
        declared = float(ifs.floor)
        if not declared > 0 or sampled < declared - 1e-12:
            violations.append((i + 1, declared, sampled))
        floors.append(declared)
    floor_violated = bool(violations)
    if violations:
        first, declared, sampled = violations[0]
        reasons.append(
            f"probability floor violated for {len(violations)} agent(s), first agent {first} "
            f"(declared {declared:.6g}, sampled minimum {sampled:.6g})"
        )
    evidence["agent_spectral_radius_max"] = max(agent_radii) if agent_radii else None
    evidence["floor_violated"] = floor_violated
    evidence["delta"] = float(np.prod(floors)) if floors and not floor_violated else None

    m = None
    if structural and not reasons:
        big = augmented_matrix(loop)
        evidence["augmented_dim"] = big.shape[0]
        m = contraction_index(big, m_max)
        if m is None:
            reasons.append(f"no power m <= {m_max} of the augmented matrix has norm below one")
        else:
            evidence["augmented_norm_at_m"] = operator_norm(np.linalg.matrix_power(big, m))
    evidence["m"] = m
    verdict = ERGODIC if not reasons else INCONCLUSIVE
    return Certificate("theorem1", verdict, evidence, reasons)


def verify_lemma1(mats, lyap, m_max=20):
    """LMI check for arbitrary switching plus the product-norm index it implies."""
    evidence = {"modes": len(mats)}
    if not verify_lmi(mats, lyap):
        return Certificate(
            "lemma1", INCONCLUSIVE, evidence, ["Lyapunov inequalities do not hold"]
        )
    evidence["lmi"] = True
    try:
        m = product_contraction_index(mats, m_max)
    except BudgetError as exc:
        m = None
        evidence["search"] = f"budget exceeded ({exc})"
    evidence["m"] = m
    if m is None and "search" not in evidence:
        evidence["search"] = "m-not-found-within-budget"
    return Certificate("lemma1", ERGODIC, evidence, [])


def _rank(mat, tol=1e-8):
    return int(np.linalg.matrix_rank(mat, tol=tol)) if mat.size else 0


def unit_circle_poles(a, b, c, k_max=1024, tol=UNIT_CIRCLE_TOL):
    """Controllable and observable eigenvalues of ``a`` that are roots of unity.

    Returns ``(poles, marginal)`` where ``poles`` lists ``(lambda, K)`` pairs and
    ``marginal`` says whether every eigenvalue has modulus at most one and the
    unit-circle ones are semisimple.
    """
    n = a.shape[0]
    eigs = np.linalg.eigvals(a) if n else np.zeros(0)
    marginal = bool(np.all(np.abs(eigs) <= 1 + tol))
    poles = []
    eye = np.eye(n)
    for lam in eigs:
        if abs(abs(lam) - 1) >= 1e-6:
            continue
        shifted = a - lam * eye
        alg = int(np.sum(np.abs(eigs - lam) < 1e-6))
        if n - _rank(shifted) != alg:
            marginal = False
        if any(abs(lam - p) < 1e-6 for p, _ in poles):
            continue
        observable = _rank(np.vstack([shifted, c])) == n
        controllable = _rank(np.hstack([shifted, b])) == n
        k = root_of_unity_order(lam, k_max, tol)
        if k is not None and observable and controllable:
            poles.append((complex(lam), k))
    return poles, marginal


def nonergodicity_certificate(loop, k_max=1024):
    """Certify non-ergodicity from a rational-angle unit-circle pole.

    Raises :class:`RepresentationError` when agent values, filter weights or
    the reference cannot be read as exact rationals.
    """
    reasons = []
    evidence = {}

    alphabets = []
    for i, agent in enumerate(loop.agents):
        alphabet = getattr(agent, "alphabet", None)
        if alphabet is None:
            reasons.append(f"agent {i + 1} does not take finitely many values")
        else:
            alphabets.append({to_rational(v) for v in alphabet})

    filt = loop.filter
    if not isinstance(filt, MovingAverageFilter):
        reasons.append("filter is not a finite-memory moving average")
        filt = None
    else:
        for c in filt.coefficients:
            to_rational(c)

    ctrl = loop.controller
    if isinstance(ctrl, LinearController) and ctrl.n_states:
        poles, marginal = unit_circle_poles(ctrl.a, ctrl.b, ctrl.c, k_max)
        evidence["marginally_stable"] = marginal
        if poles:
            evidence["pole"] = _render_complex(poles[0][0])
            evidence["K"] = min(k for _, k in poles)
        else:
            evidence["K"] = None
            reasons.append(f"no controller pole e^(q i pi) with order K <= {k_max}")
        if not marginal:
            reasons.append("linear controller part is not marginally stable")
    else:
        reasons.append("controller has no linear part with internal state")

    r = to_rational(loop.reference)
    if filt is not None and len(alphabets) == len(loop.agents):
        y_alphabet = sum_set(alphabets)
        outputs = enumerate_outputs(filt, y_alphabet)
        g = group_generator({r - yh for yh in outputs})
        evidence["y_alphabet_size"] = len(y_alphabet)
        evidence["filter_outputs"] = len(outputs)
        evidence["g"] = g
        if g == 0:
            reasons.append("error group is trivial (every error value is zero)")

    verdict = NON_ERGODIC if not reasons else INCONCLUSIVE
    return Certificate("theorem3", verdict, evidence, reasons)


def _render_complex(z):
    if abs(z.imag) < 1e-12:
        return format(z.real, ".17g")
    return f"{z.real:.17g}{z.imag:+.17g}j"


__all__ = [
    "Certificate",
    "ERGODIC",
    "NON_ERGODIC",
    "INCONCLUSIVE",
    "verify_theorem1",
    "verify_lemma1",
    "nonergodicity_certificate",
    "unit_circle_poles",
]
