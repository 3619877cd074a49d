"""Guiding currents j_k and the crossing density rho.

For a wave function value psi, leaf normals n_1..n_N and particle k, the
current is the spinor bilinear

    j_k^mu = psibar (gamma_1.n_1) ... gamma_k^mu ... (gamma_N.n_N) psi ,

and rho = j_k.n_k (the same number for every k). Folding the Dirac adjoint
into the operator, each bilinear is psi^dag (B_1 x ... x B_N) psi with
per-particle factors B_l = gamma^0 (gamma.n_l) = n_l^0 I - n_l . alpha for
l != k and B_k = gamma^0 gamma^mu.

Two implementations are kept deliberately: a dense Kronecker-matrix path
(the obviously-correct reference, used by the public single-configuration
operations and as a test oracle) and a batched slot-product path used by
the integrator and the ensemble machinery. Tests pin their agreement.
"""

from __future__ import annotations

import numpy as np

from .errors import ConsistencyError
from .geometry import (
    SpinDimensionMode,
    alpha,
    apply_in_slot,
    gamma,
    minkowski_dot,
    slash,
)

__all__ = [
    "IMAG_TOLERANCE",
    "current_jk",
    "density_rho",
    "divergence_residual",
    "currents_all_batch",
    "density_batch",
]

# bilinears are mathematically real; anything above this (relative to the
# squared spinor norm) indicates a representation bug, not roundoff
IMAG_TOLERANCE = 1e-10


def _check_normals(normals, n_particles):
    normals = np.asarray(normals, dtype=float)
    if normals.shape != (n_particles, 4):
        raise ValueError(f"expected {n_particles} normals of 4 components")
    nn = minkowski_dot(normals, normals)
    if np.any(np.abs(nn - 1.0) > 1e-8) or np.any(normals[..., 0] <= 0):
        raise ValueError("normals must be unit timelike and future-oriented")
    return normals


def _real_part(value, scale, what):
    imag = np.abs(np.imag(value))
    if np.any(imag > IMAG_TOLERANCE * np.maximum(scale, 1e-300)):
        raise ConsistencyError(
            f"{what} has imaginary residue {np.max(imag):.3e} "
            f"above policy threshold")
    return np.real(value)


def _contraction_factor(n, mode):
    """Dense single-particle factor gamma^0 (gamma . n)."""
    return gamma(0, mode) @ slash(n, mode=mode)


def current_jk(psi, k, points, normals) -> np.ndarray:
    """Current of particle k at a point tuple, dense reference path.

    ``normals`` holds the unit leaf normals at the respective points.
    Returns a real four-vector; in D11 components 2 and 3 are zero.
    """
    n = psi.n_particles
    mode = psi.mode
    normals = _check_normals(normals, n)
    v = psi.evaluate(points).entries
    scale = float(np.real(np.vdot(v, v)))

    factors = [_contraction_factor(normals[l], mode) for l in range(n)]
    j = np.zeros(4)
    for mu in mode.vector_indices:
        slot_k = gamma(0, mode) @ gamma(mu, mode)
        op = None
        for l in range(n):
            f = slot_k if l == k - 1 else factors[l]
            op = f if op is None else np.kron(op, f)
        j[mu] = _real_part(np.vdot(v, op @ v), scale, f"j_{k}^{mu}")
    return j


def density_rho(psi, points, normals) -> float:
    """rho = psibar (gamma_1.n_1)...(gamma_N.n_N) psi, dense reference path."""
    n = psi.n_particles
    mode = psi.mode
    normals = _check_normals(normals, n)
    v = psi.evaluate(points).entries
    scale = float(np.real(np.vdot(v, v)))

    op = None
    for l in range(n):
        f = _contraction_factor(normals[l], mode)
        op = f if op is None else np.kron(op, f)
    return float(_real_part(np.vdot(v, op @ v), scale, "rho"))


# ---------------------------------------------------------------------------
# batched slot-product path
# ---------------------------------------------------------------------------

def _batch_factors(normals, mode):
    """Per-particle matrices B_l = n_l^0 I - n_l . alpha, shape (..., N, d, d)."""
    d = mode.spinor_dim
    lead = normals.shape[:-1]
    out = np.zeros(lead + (d, d), dtype=complex)
    eye = np.eye(d)
    out += normals[..., 0, None, None] * eye
    for i in range(1, 1 + mode.spatial_dims):
        out -= normals[..., i, None, None] * alpha(i, mode)
    return out


def _spin_inner(a, b):
    """sum over the spin axis of conj(a) * b, batched."""
    return np.sum(np.conj(a) * b, axis=-1)


def currents_all_batch(values, normals, n_particles, mode: SpinDimensionMode):
    """Currents j_k for all k at a batch of configurations.

    ``values`` has shape (..., D), ``normals`` (..., N, 4); returns
    (..., N, 4) real currents. Arithmetic is elementwise plus fixed-order
    small loops, so results are independent of how the batch is chunked.
    """
    values = np.asarray(values)
    lead = values.shape[:-1]
    factors = _batch_factors(np.asarray(normals, dtype=float), mode)
    scale = np.real(_spin_inner(values, values))

    j = np.zeros(lead + (n_particles, 4))
    for k in range(1, n_particles + 1):
        chi = values
        for l in range(1, n_particles + 1):
            if l == k:
                continue
            chi = apply_in_slot(chi, factors[..., l - 1, :, :], l,
                                n_particles, mode)
        j[..., k - 1, 0] = _real_part(_spin_inner(values, chi), scale,
                                      f"j_{k}^0")
        for i in range(1, 1 + mode.spatial_dims):
            comp = _spin_inner(values, apply_in_slot(chi, alpha(i, mode), k,
                                                     n_particles, mode))
            j[..., k - 1, i] = _real_part(comp, scale, f"j_{k}^{i}")
    return j


def density_batch(values, normals, n_particles, mode: SpinDimensionMode):
    """rho at a batch of configurations, shape (...,)."""
    values = np.asarray(values)
    factors = _batch_factors(np.asarray(normals, dtype=float), mode)
    scale = np.real(_spin_inner(values, values))
    chi = values
    for l in range(1, n_particles + 1):
        chi = apply_in_slot(chi, factors[..., l - 1, :, :], l, n_particles, mode)
    return _real_part(_spin_inner(values, chi), scale, "rho")


def divergence_residual(psi, k, points, normals, h) -> float:
    """Central-difference approximation of d_mu j_k^mu in the x_k slot.

    The other points and all normals are held fixed while x_k is displaced;
    the exact divergence vanishes identically, so the returned value decays
    as O(h^2). Used as a correctness oracle.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    n = psi.n_particles
    mode = psi.mode
    normals = _check_normals(normals, n)
    x = np.asarray(points, dtype=float)
    mus = list(mode.vector_indices)

    displaced = np.broadcast_to(x, (2 * len(mus), n, 4)).copy()
    for jidx, mu in enumerate(mus):
        displaced[2 * jidx, k - 1, mu] += h
        displaced[2 * jidx + 1, k - 1, mu] -= h
    vals = psi.evaluate_batch(displaced)
    normals_b = np.broadcast_to(normals, (2 * len(mus), n, 4))
    j = currents_all_batch(vals, normals_b, n, mode)[:, k - 1, :]

    div = 0.0
    for jidx, mu in enumerate(mus):
        div += (j[2 * jidx, mu] - j[2 * jidx + 1, mu]) / (2.0 * h)
    return float(abs(div))
