"""Kernel ridge interpolation baseline for sparse grid reconstruction.

Per frequency, observed values y at microphone positions are fit with

    alpha = (K + lambda*I)^{-1} y,   K_ij = sinc(k * ||r_i - r_j||)

where sinc(x) = sin(x)/x with sinc(0) = 1 and k is the wavenumber
omega/c. The sinc kernel is the zeroth-order spherical Bessel function,
the translation-invariant reproducing kernel of solutions of the
Helmholtz equation, so interpolants are physical sound fields at that
frequency. Estimates anywhere follow from the representer expansion
sum_i alpha_i * sinc(k * ||q - r_i||).

K is symmetric positive definite; the solve uses one Cholesky
factorization shared by the real and imaginary right-hand sides. If
factorization fails at tiny regularization, the jitter is escalated
(lambda, 10*lambda, 100*lambda) before giving up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .data import MicMask, SampleRecord
from .errors import NumericalError
from .modal import FieldGrid, grid_coordinates

DEFAULT_LAMBDA = 0.01

_RESIDUAL_TOL = 1e-8


def helmholtz_kernel(dists, wavenumber: float) -> np.ndarray:
    """sinc(k * d) elementwise; exact 1 at zero distance."""
    x = np.asarray(dists, dtype=np.float64) * wavenumber
    # np.sinc is sin(pi t)/(pi t)
    return np.sinc(x / np.pi)


@dataclass
class KernelProblem:
    """Observations of one room at every frequency.

    positions: (m, 3) microphone coordinates; observations: (m, K)
    complex values; wavenumbers: (K,) omega/c per frequency.
    """

    positions: np.ndarray
    observations: np.ndarray
    wavenumbers: np.ndarray
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.observations = np.asarray(self.observations, dtype=np.complex128)
        self.wavenumbers = np.asarray(self.wavenumbers, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must have shape (m, 3)")
        m = self.positions.shape[0]
        if m < 1:
            raise ValueError("need at least one observation point")
        if self.observations.shape != (m, self.wavenumbers.size):
            raise ValueError("observations must have shape (m, K)")
        if np.any(self.wavenumbers <= 0):
            raise ValueError("wavenumbers must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


def _solve_spd(gram: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """alpha = (gram + lam I)^{-1} y.

    If the factorization or the residual check fails, the jitter is
    escalated (lambda, 10*lambda, 100*lambda); fails hard only when all
    levels are exhausted.
    """
    m = gram.shape[0]
    eye = np.eye(m)
    last = "factorization never attempted"
    for jitter in (lam, 10 * lam, 100 * lam):
        a = gram + jitter * eye
        try:
            factor = cho_factor(a, lower=True)
        except LinAlgError as exc:
            last = f"Cholesky failed at jitter {jitter:g}: {exc}"
            continue
        alpha = cho_solve(factor, y.real) + 1j * cho_solve(factor, y.imag)
        resid = np.linalg.norm(a @ alpha - y)
        if resid <= _RESIDUAL_TOL * max(np.linalg.norm(y), 1e-30):
            return alpha
        last = (f"residual {resid:.3e} at jitter {jitter:g} exceeds "
                f"{_RESIDUAL_TOL:g} * ||y||")
    raise NumericalError(f"ridge system unsolvable: {last}")


def fit(problem: KernelProblem) -> np.ndarray:
    """Coefficients alpha with shape (K, m), one solve per frequency."""
    d = cdist(problem.positions, problem.positions)
    alphas = np.empty((problem.wavenumbers.size, problem.positions.shape[0]),
                      dtype=np.complex128)
    for k, wn in enumerate(problem.wavenumbers):
        gram = helmholtz_kernel(d, wn)
        alphas[k] = _solve_spd(gram, problem.observations[:, k], problem.lam)
    return alphas


def interpolate(problem: KernelProblem, alphas: np.ndarray,
                query_points: np.ndarray) -> np.ndarray:
    """Field estimates at query points, shape (Q, K)."""
    query_points = np.asarray(query_points, dtype=np.float64)
    d = cdist(query_points, problem.positions)  # (Q, m)
    out = np.empty((query_points.shape[0], problem.wavenumbers.size),
                   dtype=np.complex128)
    for k, wn in enumerate(problem.wavenumbers):
        out[:, k] = helmholtz_kernel(d, wn) @ alphas[k]
    return out


def problem_from_record(record: SampleRecord, mask: MicMask | None = None,
                        lam: float = DEFAULT_LAMBDA) -> KernelProblem:
    mask = record.mask if mask is None else mask
    coords = grid_coordinates(record.room).reshape(
        record.room.grid_w, record.room.grid_h, 3)
    idx = [(w, h) for (w, h) in mask.observed]
    positions = np.array([coords[w, h] for (w, h) in idx])
    observations = np.array([record.field.data[w, h, :] for (w, h) in idx])
    wavenumbers = 2.0 * math.pi * np.asarray(record.field.freqs) \
        / record.room.speed_of_sound
    return KernelProblem(positions=positions, observations=observations,
                         wavenumbers=wavenumbers, lam=lam)


def reconstruct_field(record: SampleRecord, mask: MicMask | None = None,
                      lam: float = DEFAULT_LAMBDA) -> FieldGrid:
    """Ridge reconstruction of the full grid from the masked observations."""
    problem = problem_from_record(record, mask=mask, lam=lam)
    alphas = fit(problem)
    queries = grid_coordinates(record.room)
    est = interpolate(problem, alphas, queries)
    data = est.reshape(record.room.grid_w, record.room.grid_h, -1)
    return FieldGrid(data=data, freqs=record.field.freqs,
                     room_id=record.field.room_id)
