"""Ergodicity certificates, finite-chain analysis and Monte Carlo ensembles."""

from .certificates import (
    ERGODIC,
    INCONCLUSIVE,
    NON_ERGODIC,
    Certificate,
    nonergodicity_certificate,
    unit_circle_poles,
    verify_lemma1,
    verify_theorem1,
)
from .chain import (
    FiniteChain,
    absorption_probabilities,
    build_finite_chain,
    chain_ergodicity_verdict,
    recurrent_classes,
    stationary_measures,
)
from .ensemble import (
    ERGODIC_FLAG,
    INCONCLUSIVE_FLAG,
    NON_ERGODIC_FLAG,
    EnsembleStats,
    ICTest,
    ensemble,
    ic_dependence_test,
)

__all__ = [
    "Certificate",
    "ERGODIC",
    "NON_ERGODIC",
    "INCONCLUSIVE",
    "verify_theorem1",
    "verify_lemma1",
    "nonergodicity_certificate",
    "unit_circle_poles",
    "FiniteChain",
    "build_finite_chain",
    "recurrent_classes",
    "stationary_measures",
    "absorption_probabilities",
    "chain_ergodicity_verdict",
    "EnsembleStats",
    "ICTest",
    "ensemble",
    "ic_dependence_test",
    "NON_ERGODIC_FLAG",
    "ERGODIC_FLAG",
    "INCONCLUSIVE_FLAG",
]
