"""Matrix spectra, norms, contraction searches and exact rational helpers.

Matrices are plain 2-D numpy float arrays; rationals are ``fractions.Fraction``
(arbitrary precision, so gcd chains never overflow).
"""

import cmath
import itertools
import math
from fractions import Fraction
from numbers import Rational

import numpy as np

from .errors import BudgetError, DimensionError, RepresentationError

ENUMERATION_BUDGET = 10**7
DEFINITENESS_MARGIN = 1e-10


def as_matrix(m, name="matrix"):
    """Coerce ``m`` to a finite 2-D float array (scalars become 1x1)."""
    arr = np.array(m, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _square(m, name="matrix"):
    arr = as_matrix(m, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def spectral_radius(m):
    """Largest eigenvalue modulus of a square matrix."""
    arr = _square(m)
    return float(np.max(np.abs(np.linalg.eigvals(arr))))


def is_schur(m, tol=1e-9):
    """True iff ``spectral_radius(m) < 1 - tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    return spectral_radius(m) < 1.0 - tol


def operator_norm(m):
    """Induced 2-norm (largest singular value)."""
    return float(np.linalg.norm(as_matrix(m), ord=2))


def contraction_index(m, m_max):
    """Smallest ``k <= m_max`` with ``||m^k||_2 < 1``, or ``None``."""
    arr = _square(m)
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    power = arr.copy()
    for k in range(1, m_max + 1):
        norm = np.linalg.norm(power, ord=2)
        if norm < 1.0:
            return k
        if not np.isfinite(norm):
            return None
        power = power @ arr
    return None


def _stack_square(mats):
    arrs = [_square(m, f"mats[{i}]") for i, m in enumerate(mats)]
    if not arrs:
        raise ValueError("need at least one matrix")
    n = arrs[0].shape[0]
    for i, a in enumerate(arrs):
        if a.shape != (n, n):
            raise DimensionError(f"mats[{i}] has shape {a.shape}, expected {(n, n)}")
    return np.stack(arrs)


def product_contraction_index(mats, m_max, budget=ENUMERATION_BUDGET, chunk=1 << 16):
    """Smallest ``m`` such that every length-``m`` product has 2-norm below one.

    All ``len(mats)**m`` index sequences are enumerated exhaustively. Raises
    :class:`BudgetError` as soon as a length to be checked would exceed
    ``budget`` products.
    """
    stack = _stack_square(mats)
    n_s = stack.shape[0]
    for m in range(1, m_max + 1):
        count = n_s**m
        if count > budget:
            raise BudgetError(f"{n_s}^{m} = {count} products exceeds budget {budget}")
        if _all_products_contract(stack, m, count, chunk):
            return m
    return None


def _all_products_contract(stack, m, count, chunk):
    n_s = stack.shape[0]
    for start in range(0, count, chunk):
        flat = np.arange(start, min(start + chunk, count))
        # digits[t] is the index applied at position t+1 of the product
        digits = np.unravel_index(flat, (n_s,) * m)
        prod = stack[digits[0]]
        for t in range(1, m):
            prod = stack[digits[t]] @ prod
        if np.any(np.linalg.norm(prod, ord=2, axis=(1, 2)) >= 1.0):
            return False
    return True


def _symmetrize(p):
    return 0.5 * (p + p.T)


def is_positive_definite(p, margin=DEFINITENESS_MARGIN):
    return bool(np.min(np.linalg.eigvalsh(_symmetrize(p))) > margin)


def is_negative_definite(p, margin=DEFINITENESS_MARGIN):
    return bool(np.max(np.linalg.eigvalsh(_symmetrize(p))) < -margin)


def verify_lmi(mats, lyap):
    """Check ``P_i > 0`` and ``A_i' P_j A_i - P_i < 0`` for every pair ``(i, j)``."""
    a = _stack_square(mats)
    p = _stack_square(lyap)
    if a.shape != p.shape:
        raise DimensionError(
            f"need one Lyapunov matrix per mode of equal size, got {a.shape} vs {p.shape}"
        )
    p = np.stack([_symmetrize(pi) for pi in p])
    if not all(is_positive_definite(pi) for pi in p):
        return False
    for ai, pi in zip(a, p):
        for pj in p:
            if not is_negative_definite(ai.T @ pj @ ai - pi):
                return False
    return True


def to_rational(value):
    """Exact rational from ints, Fractions, rational strings or finite floats.

    Floats are read through their shortest decimal repr, so ``0.1`` becomes
    ``1/10`` rather than the nearest dyadic fraction.
    """
    if isinstance(value, bool):
        return Fraction(int(value))
    if isinstance(value, Rational):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise RepresentationError(f"cannot parse {value!r} as a rational") from exc
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise RepresentationError(f"{value!r} is not a finite rational")
        return Fraction(repr(float(value)))
    if isinstance(value, np.integer):
        return Fraction(int(value))
    raise RepresentationError(f"{value!r} ({type(value).__name__}) is not a rational number")


def group_generator(values):
    """Non-negative generator ``g`` of the additive group spanned by ``values``.

    The group is ``g * Z``; for fractions in lowest terms ``g`` is the gcd of
    the numerators over the lcm of the denominators.
    """
    fracs = [to_rational(v) for v in values]
    if not fracs:
        raise ValueError("values must be non-empty")
    num = 0
    den = 1
    for f in fracs:
        num = math.gcd(num, f.numerator)
        den = math.lcm(den, f.denominator)
    return Fraction(num, den)


def root_of_unity_order(lam, k_max, tol=1e-9):
    """Smallest ``K <= k_max`` with ``lam**K == 1`` up to ``tol``, else ``None``."""
    lam = complex(lam)
    if k_max < 1 or tol <= 0:
        raise ValueError("k_max >= 1 and tol > 0 required")
    if abs(abs(lam) - 1.0) >= tol:
        return None
    # compare on the angle to avoid compounding rounding of repeated powers
    angle = cmath.phase(lam)
    for k in range(1, k_max + 1):
        if abs(cmath.exp(1j * angle * k) - 1.0) < tol:
            return k
    return None


def sum_set(sets, budget=ENUMERATION_BUDGET):
    """Exact Minkowski sum of finite sets of rationals."""
    total = {Fraction(0)}
    work = 0
    for s in sets:
        s = {to_rational(v) for v in s}
        work += len(total) * len(s)
        if work > budget:
            raise BudgetError(f"sum-set enumeration exceeds budget {budget}")
        total = {a + b for a, b in itertools.product(total, s)}
    return total
