"""Free multi-time N-particle Dirac wave functions.

A wave function is a finite superposition of tensor products of plane-wave
modes. Each mode is an exact solution of the free one-particle Dirac
equation, so the superposition solves all N multi-time equations exactly and
can be evaluated at arbitrary spacetime point tuples - mixed coordinate
times included - without any PDE grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError
from .geometry import (
    MultiSpinor,
    SpinDimensionMode,
    apply_in_slot,
    gamma,
    minkowski_dot,
    slash,
)

__all__ = [
    "PlaneWaveMode",
    "NParticleWavefunction",
    "make_mode",
    "dirac_residual",
]


@dataclass(frozen=True)
class PlaneWaveMode:
    """One plane-wave Dirac mode: amplitude spinor w times exp(-i p.x).

    The four-momentum is (sign * E, p) with E = +sqrt(m^2 + |p|^2); the
    amplitude spinor spans the chosen vector of the degenerate eigenspace
    (two spin labels in D31, one in D11) and is normalized to w^dag w = 1.
    """

    p: tuple
    m: float
    energy_sign: int
    spin_label: int
    mode: SpinDimensionMode
    w: np.ndarray = field(compare=False)
    four_momentum: np.ndarray = field(compare=False)

    def key(self):
        return (self.p, self.m, self.energy_sign, self.spin_label, self.mode)


def _seed_index(sign: int, label: int, mode: SpinDimensionMode) -> int:
    if mode is SpinDimensionMode.D31:
        if label not in (1, 2):
            raise ValueError(f"spin label {label} invalid in D31 (use 1 or 2)")
        return (label - 1) if sign > 0 else (label + 1)
    if label != 1:
        raise ValueError(f"spin label {label} invalid in D11 (use 1)")
    return 0 if sign > 0 else 1


def make_mode(p, m, energy_sign, spin_label,
              mode: SpinDimensionMode) -> PlaneWaveMode:
    """Construct a plane-wave mode by solving the momentum-space eigenproblem.

    The amplitude spinor is the (normalized) image of a canonical basis
    vector under slash(p4) + m, which spans the solution space of
    (slash(p4) - m) w = 0; at p = 0 this reproduces the sparse rest spinors
    of the chosen representation exactly.
    """
    p = tuple(float(c) for c in np.atleast_1d(p))
    if len(p) != mode.spatial_dims:
        raise ValueError(f"momentum must have {mode.spatial_dims} components "
                         f"in {mode.value}, got {len(p)}")
    if m < 0:
        raise ValueError("mass must be nonnegative")
    if m == 0 and all(c == 0 for c in p):
        raise ValueError("massless mode needs nonzero momentum")
    if energy_sign not in (1, -1):
        raise ValueError("energy sign must be +1 or -1")

    energy = float(np.sqrt(m * m + sum(c * c for c in p)))
    p4 = np.zeros(4)
    p4[0] = energy_sign * energy
    p4[1:1 + len(p)] = p

    d = mode.spinor_dim
    seed = np.zeros(d, dtype=complex)
    seed[_seed_index(energy_sign, spin_label, mode)] = 1.0
    sl = slash(p4, mode=mode)
    raw = (sl + m * np.eye(d)) @ seed
    norm = np.linalg.norm(raw)
    if norm < 1e-300:
        raise ConsistencyError("degenerate amplitude spinor (cannot occur for "
                               "valid momentum/mass input)")
    w = raw / norm

    residual = np.linalg.norm(sl @ w - m * w)
    if residual > 1e-12 * (1.0 + energy + m):
        raise ConsistencyError(
            f"momentum-space Dirac residual {residual:.3e} too large")

    w.setflags(write=False)
    p4.setflags(write=False)
    return PlaneWaveMode(p=p, m=float(m), energy_sign=int(energy_sign),
                         spin_label=int(spin_label), mode=mode,
                         w=w, four_momentum=p4)


def _kron_vec(vectors):
    out = np.asarray(vectors[0], dtype=complex)
    for v in vectors[1:]:
        out = np.kron(out, v)
    return out


class NParticleWavefunction:
    """Finite sum of coefficient-weighted tensor products of plane-wave modes.

    ``terms`` is a sequence of (complex coefficient, tuple of N modes); all
    modes must share the mass and the dimension mode. Entanglement is
    realized by supplying more than one term. Wave functions are not
    normalized at construction; the ensemble layer normalizes by the total
    leaf flux where a probability reading is needed.
    """

    def __init__(self, terms, n_particles=None, branches=None):
        terms = [(complex(c), tuple(modes)) for c, modes in terms]
        if not terms:
            raise ValueError("wavefunction needs at least one term")
        if n_particles is None:
            n_particles = len(terms[0][1])
        if not all(len(modes) == n_particles for _, modes in terms):
            raise ValueError("every term must supply one mode per particle")
        if not any(c != 0 for c, _ in terms):
            raise ValueError("at least one coefficient must be nonzero")

        first = terms[0][1][0]
        self.mode = first.mode
        self.mass = first.m
        for _, modes in terms:
            for md in modes:
                if md.mode is not self.mode or md.m != self.mass:
                    raise ValueError("all modes must share mass and dimension mode")

        self.n_particles = int(n_particles)
        self.terms = tuple(terms)
        self.dim = self.mode.spin_space_dim(self.n_particles)
        self._branches = branches

        # Flat-path tables: per-slot distinct four-momenta plus, per term,
        # the kron'd amplitude spinor and the slot -> momentum index map.
        self._slot_p4 = []
        self._slot_index = np.zeros((len(terms), self.n_particles), dtype=int)
        for k in range(self.n_particles):
            seen = {}
            p4s = []
            for t, (_, modes) in enumerate(terms):
                key = modes[k].key()
                if key not in seen:
                    seen[key] = len(p4s)
                    p4s.append(modes[k].four_momentum)
                self._slot_index[t, k] = seen[key]
            self._slot_p4.append(np.array(p4s))
        self._coeffs = np.array([c for c, _ in terms])
        self._kron_spinors = np.array(
            [_kron_vec([md.w for md in modes]) for _, modes in terms])

    @classmethod
    def from_product_branches(cls, branches):
        """Build from a sum of product terms with per-particle mode packets.

        ``branches`` is a sequence of (complex coefficient, factors) where
        ``factors[k]`` is a list of (complex weight, PlaneWaveMode) for
        particle k+1. The flat term list is the full expansion; the branch
        structure is kept for fast factored evaluation.
        """
        branches = [(complex(c), tuple(tuple((complex(w), md) for w, md in f)
                                       for f in factors))
                    for c, factors in branches]
        terms = []
        for c, factors in branches:
            for combo in itertools.product(*factors):
                coeff = c
                for w, _ in combo:
                    coeff = coeff * w
                terms.append((coeff, tuple(md for _, md in combo)))
        return cls(terms, branches=branches)

    def _slot_phases(self, x, p4s):
        # exp(-i p.x) for a table of four-momenta, batched over leading axes
        arg = p4s[:, 0] * x[..., 0, None]
        for mu in self.mode.vector_indices:
            if mu == 0:
                continue
            arg = arg - p4s[:, mu] * x[..., mu, None]
        return np.exp(-1j * arg)

    def evaluate_batch(self, points) -> np.ndarray:
        """Values of psi at a batch of point tuples, shape (..., N, 4) -> (..., D).

        Uses the factored branch form when available (the two code paths
        agree to roundoff; tests pin that down).
        """
        x = np.asarray(points, dtype=float)
        if x.shape[-2:] != (self.n_particles, 4):
            raise ValueError(f"points must have shape (..., {self.n_particles}, 4)")
        if self._branches is not None:
            return self._evaluate_branches(x)
        return self._evaluate_flat(x)

    def _evaluate_flat(self, x):
        lead = x.shape[:-2]
        phases = [self._slot_phases(x[..., k, :], self._slot_p4[k])
                  for k in range(self.n_particles)]
        out = np.zeros(lead + (self.dim,), dtype=complex)
        for t in range(len(self.terms)):
            ph = phases[0][..., self._slot_index[t, 0]]
            for k in range(1, self.n_particles):
                ph = ph * phases[k][..., self._slot_index[t, k]]
            out += (self._coeffs[t] * ph)[..., None] * self._kron_spinors[t]
        return out

    def _evaluate_branches(self, x):
        lead = x.shape[:-2]
        d = self.mode.spinor_dim
        out = np.zeros(lead + (self.dim,), dtype=complex)
        for c_br, factors in self._branches:
            val = None
            for k, factor in enumerate(factors):
                p4s = np.array([md.four_momentum for _, md in factor])
                ph = self._slot_phases(x[..., k, :], p4s)
                fk = np.zeros(lead + (d,), dtype=complex)
                for a, (w_a, md) in enumerate(factor):
                    fk += (w_a * ph[..., a])[..., None] * md.w
                if val is None:
                    val = fk
                else:
                    dim_so_far = val.shape[-1]
                    val = (val[..., :, None] * fk[..., None, :]).reshape(
                        lead + (dim_so_far * d,))
            out += c_br * val
        return out

    def evaluate(self, points) -> MultiSpinor:
        """psi at one tuple of N spacetime points."""
        x = np.asarray(points, dtype=float)
        if x.shape != (self.n_particles, 4):
            raise ValueError(f"expected {self.n_particles} spacetime points")
        return MultiSpinor(self.evaluate_batch(x), self.n_particles, self.mode)

    def scaled(self, factor):
        return NParticleWavefunction(
            [(factor * c, modes) for c, modes in self.terms])


def superpose(coeff_a, psi_a: NParticleWavefunction,
              coeff_b, psi_b: NParticleWavefunction) -> NParticleWavefunction:
    """Linear combination coeff_a * psi_a + coeff_b * psi_b (term-list merge)."""
    if psi_a.n_particles != psi_b.n_particles or psi_a.mode is not psi_b.mode:
        raise ValueError("superposition needs matching particle count and mode")
    terms = [(coeff_a * c, modes) for c, modes in psi_a.terms]
    terms += [(coeff_b * c, modes) for c, modes in psi_b.terms]
    return NParticleWavefunction(terms)


def dirac_residual(psi: NParticleWavefunction, k: int, x, h: float) -> float:
    """Finite-difference residual of the k-th multi-time Dirac equation.

    Returns || i gamma_k . d_k psi - m psi || at the point tuple x with the
    slot-k partial derivatives replaced by central differences of step h.
    Second-order accurate; used as a test oracle only.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    n = psi.n_particles
    mus = list(psi.mode.vector_indices)

    displaced = np.broadcast_to(x, (2 * len(mus), n, 4)).copy()
    for j, mu in enumerate(mus):
        displaced[2 * j, k - 1, mu] += h
        displaced[2 * j + 1, k - 1, mu] -= h
    vals = psi.evaluate_batch(displaced)

    slashed = np.zeros(psi.dim, dtype=complex)
    for j, mu in enumerate(mus):
        dpsi = (vals[2 * j] - vals[2 * j + 1]) / (2.0 * h)
        slashed += apply_in_slot(dpsi, gamma(mu, psi.mode), k, n, psi.mode)
    center = psi.evaluate_batch(x)
    return float(np.linalg.norm(1j * slashed - psi.mass * center))


def mode_phase(md: PlaneWaveMode, x) -> complex:
    """Plane-wave phase factor exp(-i p.x) of a single mode."""
    return complex(np.exp(-1j * minkowski_dot(md.four_momentum, np.asarray(x))))
