"""Projection of Kerr-oscillator operators onto the two-dimensional cat basis.

Spin-space matrices use the sigma-z basis ordered ``(+, -)``: index 0 is the
coherent state ``|+alpha>`` and index 1 is ``|-alpha>``. The cat states
``|C+>`` and ``|C->`` map to the sigma-x eigenvectors ``(1, 1)/sqrt2`` and
``(1, -1)/sqrt2``. Pass ``basis="x"`` to get the cat basis directly.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensionError, InvalidParameterError
from .fock_ops import SMALL_ALPHA2, TAIL_TOL, cat_state

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY2 = np.eye(2, dtype=complex)
# |+x><-x| and |-x><+x| written in the sigma-z basis
RAISE_X = 0.5 * np.array([[1, -1], [1, -1]], dtype=complex)
LOWER_X = 0.5 * np.array([[1, 1], [-1, -1]], dtype=complex)
# columns are |+x>, |-x> in the z basis; maps cat-basis matrices to z basis
X_TO_Z = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


@dataclass(frozen=True)
class SpinOperatorSet:
    """Closed-form cat-basis images of the single-mode KPO operators.

    ``P a P^dagger = c_offdiag_minus_plus |-><+| + c_offdiag_plus_minus |+><-|``
    and ``P n P^dagger = c_x sigma_x + c_id``; the two-photon and Kerr terms
    project to the scalars ``c_two_photon`` and ``c_kerr``.
    """

    alpha: float
    c_offdiag_minus_plus: float
    c_offdiag_plus_minus: float
    c_x: float
    c_id: float
    c_two_photon: float
    c_kerr: float

    @property
    def c_drive(self) -> float:
        """Coefficient of sigma_z in the projected ``a + a^dagger``."""
        return self.c_offdiag_minus_plus + self.c_offdiag_plus_minus

    def annihilator(self, basis: str = "z") -> np.ndarray:
        op = self.c_offdiag_minus_plus * LOWER_X + self.c_offdiag_plus_minus * RAISE_X
        return _from_z(op, basis)

    def number(self, basis: str = "z", drop_identity: bool = False) -> np.ndarray:
        op = self.c_x * SIGMA_X
        if not drop_identity:
            op = op + self.c_id * IDENTITY2
        return _from_z(op, basis)

    def drive(self, basis: str = "z") -> np.ndarray:
        return _from_z(self.c_drive * SIGMA_Z, basis)


def _from_z(op: np.ndarray, basis: str) -> np.ndarray:
    if basis == "z":
        return op
    if basis == "x":
        return X_TO_Z.conj().T @ op @ X_TO_Z
    raise InvalidParameterError(f"basis must be 'z' or 'x', got {basis!r}")


def spin_coefficients(alpha):
    """Vectorized closed-form coefficients.

    Returns ``(c_minus_plus, c_plus_minus, c_x, c_id)`` for scalar or array
    ``alpha``. Uses ``c_x = -x / sinh(2x)`` and ``c_id = x coth(2x)`` with
    ``x = alpha^2`` (equal to the tanh/coth forms, without the cancellation),
    and series limits for ``x < 1e-6``.
    """
    alpha = np.asarray(alpha, dtype=float)
    x = alpha**2
    small = x < SMALL_ALPHA2
    xs = np.where(small, 1.0, x)  # placeholder keeps the big-x branch finite
    tanh = np.tanh(xs)
    c_mp = np.where(small, x * (1 - x**2 / 6), alpha * np.sqrt(tanh))
    c_pm = np.where(small, 1 + x**2 / 6, alpha / np.sqrt(tanh))
    with np.errstate(over="ignore"):
        c_x = np.where(small, -0.5 * (1 - 2 * x**2 / 3), -xs / np.sinh(2 * xs))
        c_id = np.where(small, 0.5 * (1 + 4 * x**2 / 3), xs / np.tanh(2 * xs))
    return c_mp, c_pm, c_x, c_id


def spin_operators(alpha: float) -> SpinOperatorSet:
    """Projected annihilator, number, two-photon and Kerr terms at ``alpha``."""
    if alpha < 0:
        raise InvalidParameterError(f"alpha must be >= 0, got {alpha}")
    c_mp, c_pm, c_x, c_id = (float(v) for v in spin_coefficients(alpha))
    return SpinOperatorSet(
        alpha=float(alpha),
        c_offdiag_minus_plus=c_mp,
        c_offdiag_plus_minus=c_pm,
        c_x=c_x,
        c_id=c_id,
        c_two_photon=2 * alpha**2,
        c_kerr=alpha**4,
    )


def projector(alpha: float, n_max: int, basis: str = "z",
              tail_tol: float | None = TAIL_TOL) -> np.ndarray:
    """The ``2 x n_max`` map ``P(alpha) = |+><C+| + |-><C-|``.

    In the x basis row 0 is ``<C+|`` and row 1 is ``<C-|``; in the default z
    basis the rows are ``(<C+| + <C-|)/sqrt2`` (``~<alpha|``) and
    ``(<C+| - <C-|)/sqrt2`` (``~<-alpha|``).
    """
    rows = np.vstack([cat_state(alpha, "+", n_max, tail_tol).conj(),
                      cat_state(alpha, "-", n_max, tail_tol).conj()])
    if basis == "x":
        return rows
    if basis == "z":
        return X_TO_Z @ rows
    raise InvalidParameterError(f"basis must be 'z' or 'x', got {basis!r}")


def numerical_projection(op: np.ndarray, alpha: float, n_max: int, basis: str = "z",
                         tail_tol: float | None = TAIL_TOL) -> np.ndarray:
    """``P(alpha) op P(alpha)^dagger`` by explicit matrix products."""
    if op.shape != (n_max, n_max):
        raise InvalidDimensionError(f"operator shape {op.shape} != ({n_max}, {n_max})")
    P = projector(alpha, n_max, basis, tail_tol)
    return P @ op @ P.conj().T


def derivative_term(alpha: float, dalpha_dt: float, n_max: int, h: float = 1e-4,
                    tail_tol: float | None = TAIL_TOL) -> np.ndarray:
    """Central-difference ``(dP/dalpha) P^dagger * dalpha/dt`` in the cat basis.

    Diagnostic only: the term vanishes identically, which is what allows the
    spin Hamiltonian to be a plain projection.
    """
    if alpha - h <= 0:
        raise InvalidParameterError(f"need alpha - h > 0, got alpha={alpha}, h={h}")
    dP = (projector(alpha + h, n_max, "x", tail_tol)
          - projector(alpha - h, n_max, "x", tail_tol)) / (2 * h)
    return dalpha_dt * dP @ projector(alpha, n_max, "x", tail_tol).conj().T


def project_state(state: np.ndarray, projectors: Sequence[np.ndarray], dims: Sequence[int]):
    """Apply ``P_0 (x) P_1 (x) ...`` to a vector or to both sides of a density matrix."""
    dims = list(dims)
    n = len(dims)
    D = math.prod(dims)
    if state.shape[0] != D:
        raise InvalidDimensionError(f"state dimension {state.shape[0]} != prod(dims)={D}")
    if state.ndim == 1:
        psi = state.reshape(dims)
        for j, P in enumerate(projectors):
            psi = np.moveaxis(np.tensordot(P, psi, axes=(1, j)), 0, j)
        return psi.reshape(2**n)
    rho = state.reshape(dims + dims)
    for j, P in enumerate(projectors):
        rho = np.moveaxis(np.tensordot(P, rho, axes=(1, j)), 0, j)
        rho = np.moveaxis(np.tensordot(rho, P.conj().T, axes=(n + j, 0)), -1, n + j)
    return rho.reshape(2**n, 2**n)


def network_projectors(alphas: Sequence[float], dims: Sequence[int],
                       tail_tol: float | None = TAIL_TOL, basis: str = "z"):
    if len(alphas) != len(dims):
        raise InvalidDimensionError(f"{len(alphas)} amplitudes for {len(dims)} modes")
    return [projector(float(a), int(d), basis, tail_tol) for a, d in zip(alphas, dims)]


def leakage(state: np.ndarray, alphas: Sequence[float], dims: Sequence[int],
            tail_tol: float | None = TAIL_TOL) -> float:
    """Population outside the cat span, ``1 - <P^dagger P>``.

    ``state`` may be a (not necessarily normalized) vector or density matrix.
    """
    # the cat-span weight is basis independent; the x basis avoids the rotation round-off
    projected = project_state(state, network_projectors(alphas, dims, tail_tol, "x"), dims)
    if state.ndim == 1:
        inside = np.vdot(projected, projected).real / np.vdot(state, state).real
    else:
        inside = np.trace(projected).real / np.trace(state).real
    return float(min(1.0, max(0.0, 1.0 - inside)))


def estimate_alpha_analytic(p: float, delta: float, kerr: float) -> float:
    """Amplitude ``sqrt((delta tanh(p/delta) - p) / kerr)`` of a bare KPO.

    The ``delta -> 0`` limit is ``sqrt(-p / kerr)``; non-positive radicands
    give 0.
    """
    if kerr >= 0:
        raise InvalidParameterError(f"kerr must be negative, got {kerr}")
    if p <= 0:
        return 0.0
    if delta == 0:
        radicand = -p / kerr
    else:
        radicand = (delta * math.tanh(p / delta) - p) / kerr
    return math.sqrt(radicand) if radicand > 0 else 0.0
