"""Truncated Fock-space operators and states.

Operators are plain complex numpy arrays (``dim x dim``); states are 1-D
complex arrays normalized to one. Multi-mode operators are built with
:func:`kron_embed`, site 0 being the most significant tensor factor.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidDimensionError, InvalidParameterError, TruncationError

TAIL_TOL = 1e-12
HERMITIAN_TOL = 1e-12
# below this alpha**2 the odd cat is taken from its series limit
SMALL_ALPHA2 = 1e-6


def annihilator(n_max: int) -> np.ndarray:
    """Ladder operator ``a`` on the Fock states ``|0>, ..., |n_max - 1>``."""
    if n_max < 2:
        raise InvalidDimensionError(f"n_max must be >= 2, got {n_max}")
    return np.diag(np.sqrt(np.arange(1, n_max, dtype=float)), 1).astype(complex)


def creator(n_max: int) -> np.ndarray:
    return annihilator(n_max).T.copy()


def number(n_max: int) -> np.ndarray:
    if n_max < 2:
        raise InvalidDimensionError(f"n_max must be >= 2, got {n_max}")
    return np.diag(np.arange(n_max, dtype=float)).astype(complex)


def annihilator_sparse(n_max: int) -> sp.csr_matrix:
    if n_max < 2:
        raise InvalidDimensionError(f"n_max must be >= 2, got {n_max}")
    return sp.diags(np.sqrt(np.arange(1, n_max, dtype=float)), 1,
                    shape=(n_max, n_max), format="csr", dtype=complex)


def is_hermitian(op, tol: float = HERMITIAN_TOL) -> bool:
    if sp.issparse(op):
        diff = op - op.conj().T
        return diff.nnz == 0 or np.max(np.abs(diff.data)) < tol
    return bool(np.max(np.abs(op - op.conj().T)) < tol)


def check_hermitian(op, tol: float = HERMITIAN_TOL, name: str = "operator"):
    if not is_hermitian(op, tol):
        raise InvalidParameterError(f"{name} is not Hermitian to {tol:g}")
    return op


def poisson_tail(alpha: float, n_max: int) -> float:
    """Weight ``exp(-a^2) a^(2 n_max) / n_max!`` of the first dropped level."""
    if alpha == 0.0:
        return 0.0
    log_w = -alpha**2 + 2 * n_max * math.log(alpha) - math.lgamma(n_max + 1)
    return math.exp(log_w)


def required_n_max(alpha: float, tail_tol: float = TAIL_TOL) -> int:
    """Smallest truncation whose Poisson tail weight is below ``tail_tol``."""
    n = max(2, math.ceil(alpha**2))
    while poisson_tail(alpha, n) >= tail_tol:
        n += 1
    return n


def default_n_max(alpha_max: float, tail_tol: float = TAIL_TOL) -> int:
    """Truncation used when none is configured.

    ``ceil(a^2 + 6 a + 8)``, raised if needed so the tail stays below
    ``tail_tol``.
    """
    rule = math.ceil(alpha_max**2 + 6 * alpha_max + 8)
    return max(rule, required_n_max(alpha_max, tail_tol))


def _check_truncation(alpha: float, n_max: int, tail_tol: float | None):
    if alpha < 0:
        raise InvalidParameterError(f"alpha must be >= 0, got {alpha}")
    if n_max < 2:
        raise InvalidDimensionError(f"n_max must be >= 2, got {n_max}")
    if tail_tol is not None and poisson_tail(alpha, n_max) >= tail_tol:
        raise TruncationError(
            f"n_max={n_max} too small for alpha={alpha:g}",
            required_n_max(alpha, tail_tol),
        )


def _log_amplitudes(alpha: float, n: np.ndarray) -> np.ndarray:
    lgam = np.array([math.lgamma(k + 1) for k in n])
    return n * math.log(alpha) - 0.5 * lgam


def coherent_state(alpha: float, n_max: int, tail_tol: float | None = TAIL_TOL) -> np.ndarray:
    """Coherent state ``|alpha>`` truncated to ``n_max`` levels and renormalized.

    Raises :class:`TruncationError` when the dropped Poisson tail exceeds
    ``tail_tol``; pass ``tail_tol=None`` to skip the check.
    """
    _check_truncation(alpha, n_max, tail_tol)
    psi = np.zeros(n_max, dtype=complex)
    if alpha == 0.0:
        psi[0] = 1.0
        return psi
    logs = _log_amplitudes(alpha, np.arange(n_max))
    psi[:] = np.exp(logs - logs.max())
    return psi / np.linalg.norm(psi)


def cat_state(alpha: float, parity: str | int, n_max: int,
              tail_tol: float | None = TAIL_TOL) -> np.ndarray:
    """Even (``"+"``) or odd (``"-"``) cat state ``|C(alpha)>``.

    The even cat is supported on even Fock states with weights
    ``alpha^(2n) / sqrt((2n)!)``, the odd cat on odd states. Both are
    normalized after truncation, so the ``alpha -> 0`` limits are ``|0>``
    and ``|1>``.
    """
    sign = _parity_sign(parity)
    _check_truncation(alpha, n_max, tail_tol)
    offset = 0 if sign > 0 else 1
    if n_max <= offset:
        raise InvalidDimensionError("odd cat needs n_max >= 2")
    levels = np.arange(offset, n_max, 2)
    psi = np.zeros(n_max, dtype=complex)
    if alpha == 0.0 or (sign < 0 and alpha**2 < SMALL_ALPHA2):
        # series limit: leading term plus first correction
        psi[levels[0]] = 1.0
        if alpha > 0.0 and len(levels) > 1:
            x = alpha**2
            psi[levels[1]] = x / math.sqrt(math.factorial(levels[1]) / math.factorial(levels[0]))
        return psi / np.linalg.norm(psi)
    logs = _log_amplitudes(alpha, levels)
    psi[levels] = np.exp(logs - logs.max())
    return psi / np.linalg.norm(psi)


def _parity_sign(parity) -> int:
    if parity in ("+", 1, "even", "plus"):
        return 1
    if parity in ("-", -1, "odd", "minus"):
        return -1
    raise InvalidParameterError(f"parity must be '+' or '-', got {parity!r}")


def kron_embed(op, site: int, dims: Sequence[int]):
    """Place a single-mode operator on ``site`` of a tensor product space.

    Dense input gives a dense result, sparse input a CSR matrix.
    """
    dims = list(dims)
    if not 0 <= site < len(dims):
        raise InvalidDimensionError(f"site {site} out of range for {len(dims)} modes")
    if op.shape != (dims[site], dims[site]):
        raise InvalidDimensionError(
            f"operator shape {op.shape} does not match dims[{site}]={dims[site]}")
    left = math.prod(dims[:site])
    right = math.prod(dims[site + 1:])
    if sp.issparse(op):
        out = sp.kron(sp.identity(left, dtype=complex, format="csr"), op, format="csr")
        return sp.kron(out, sp.identity(right, dtype=complex, format="csr"), format="csr")
    out = np.kron(np.eye(left, dtype=complex), op)
    return np.kron(out, np.eye(right, dtype=complex))


def product_state(states: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones(1, dtype=complex)
    for s in states:
        out = np.kron(out, s)
    return out


def expectation(op, state: np.ndarray) -> complex:
    """``<psi|op|psi>`` for a vector, ``tr(op rho)`` for a density matrix."""
    if state.ndim == 1:
        return complex(np.vdot(state, op @ state))
    return complex(np.trace(op @ state)) if not sp.issparse(op) else complex((op @ state).trace())
