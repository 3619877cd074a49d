"""Quantum-equilibrium machinery.

This module owns everything statistical: the crossing density rho times the
chart area element restricted to a leaf and a sampling box, reproducible
rejection sampling of initial configurations, extraction of leaf crossings
from trajectory ensembles, and the binned total-variation /
Kolmogorov-Smirnov comparison of empirical crossings against the predicted
leaf density. A finite-difference check of the flat-frame continuity
equation lives here too.

Randomness comes from counter-based Philox streams keyed by
(master seed, trajectory index); every trajectory consumes only its own
stream, so serial and parallel runs of any worker count produce identical
samples bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .currents import currents_all_batch, density_batch
from .errors import BoundaryLeak, EnvelopeBreach
from .geometry import alpha, apply_in_slot, minkowski_norm_sq
from .dynamics import NConfiguration, TrajectoryEnsemble

__all__ = [
    "trajectory_rng",
    "gauss_legendre_grid",
    "LeafDensity",
    "SampleSet",
    "sample_leaf",
    "CrossingSample",
    "CrossingSet",
    "crossings",
    "EquivarianceReport",
    "equivariance_test",
    "flat_continuity_residual",
]

BOUNDARY_FLUX_TOLERANCE = 1e-6


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for one trajectory's private stream."""
    key = np.array([master_seed & 0xFFFFFFFFFFFFFFFF, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def gauss_legendre_grid(boxes, order):
    """Tensor-product Gauss-Legendre nodes/weights over a list of intervals.

    ``boxes`` has shape (dims, 2); returns nodes (order**dims, dims) and the
    matching product weights.
    """
    boxes = np.asarray(boxes, dtype=float)
    axes_nodes = []
    axes_weights = []
    base_x, base_w = np.polynomial.legendre.leggauss(order)
    for lo, hi in boxes:
        half = 0.5 * (hi - lo)
        axes_nodes.append(lo + half * (base_x + 1.0))
        axes_weights.append(half * base_w)
    mesh = np.meshgrid(*axes_nodes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    wmesh = np.meshgrid(*axes_weights, indexing="ij")
    weights = np.ones(nodes.shape[0])
    for w in wmesh:
        weights = weights * w.ravel()
    return nodes, weights


def _auto_resolution(dims):
    return {1: 4097, 2: 401, 3: 61, 4: 23}.get(dims, 11)


class LeafDensity:
    """rho times the chart area element on one leaf, over a sampling box.

    The unnormalized weight at a chart tuple (xi_1, ..., xi_N) is
    rho(points, normals) * prod_k area_element(s, xi_k); the normalization
    constant Z is computed by tensor Gauss-Legendre quadrature over the box.
    With ``flat_normals=True`` the leaf normals are replaced by (1,0,0,0),
    which detunes the density: that variant exists purely as the negative
    control of the equivariance test.
    """

    def __init__(self, foliation, s, psi, boxes, quad_order=64,
                 scan_resolution=None, flat_normals=False):
        self.foliation = foliation
        self.s = float(s)
        self.psi = psi
        boxes = np.asarray(boxes, dtype=float)
        sd = foliation.spatial_dims
        if boxes.shape != (psi.n_particles, sd, 2):
            raise ValueError(
                f"boxes must have shape ({psi.n_particles}, {sd}, 2)")
        self.boxes = boxes
        self.dims = psi.n_particles * sd
        self.axis_boxes = boxes.reshape(self.dims, 2)
        self.quad_order = int(quad_order)
        self.scan_resolution = (int(scan_resolution) if scan_resolution
                                else _auto_resolution(self.dims))
        self.flat_normals = bool(flat_normals)
        if self.quad_order ** self.dims > 5e7:
            raise ValueError("joint quadrature grid too large; lower the order")
        self._scan = None
        self._z = None

    # -- geometry plumbing --------------------------------------------------
    def chart_tuples(self, flat):
        """(..., dims) chart vectors -> (..., N, sd) per-particle coordinates."""
        flat = np.asarray(flat, dtype=float)
        sd = self.foliation.spatial_dims
        return flat.reshape(flat.shape[:-1] + (self.psi.n_particles, sd))

    def points(self, xi):
        """Chart tuples (..., N, sd) -> spacetime points (..., N, 4)."""
        xi = np.asarray(xi, dtype=float)
        cols = [self.foliation.leaf_point(self.s, xi[..., k, :])
                for k in range(self.psi.n_particles)]
        return np.stack(cols, axis=-2)

    def _normals(self, pts):
        if self.flat_normals:
            n = np.zeros(pts.shape)
            n[..., 0] = 1.0
            return n
        return self.foliation.normal(pts)

    def weight(self, xi):
        """Unnormalized sampling weight at chart tuples (..., N, sd)."""
        xi = np.asarray(xi, dtype=float)
        pts = self.points(xi)
        vals = self.psi.evaluate_batch(pts)
        rho = density_batch(vals, self._normals(pts), self.psi.n_particles,
                            self.psi.mode)
        area = np.ones(xi.shape[:-2])
        for k in range(self.psi.n_particles):
            area = area * self.foliation.area_element(self.s, xi[..., k, :])
        return rho * area

    def weight_flat(self, u):
        return self.weight(self.chart_tuples(u))

    # -- scans and integrals -------------------------------------------------
    def _scan_axes(self, resolution):
        return [np.linspace(lo, hi, resolution) for lo, hi in self.axis_boxes]

    def scan(self):
        """Grid maxima of the weight and of rho over the box (cached)."""
        if self._scan is None:
            axes = self._scan_axes(self.scan_resolution)
            mesh = np.meshgrid(*axes, indexing="ij")
            u = np.stack([m.ravel() for m in mesh], axis=-1)
            xi = self.chart_tuples(u)
            w = self.weight(xi)
            pts = self.points(xi)
            vals = self.psi.evaluate_batch(pts)
            rho = density_batch(vals, self._normals(pts),
                                self.psi.n_particles, self.psi.mode)
            imax = int(np.argmax(w))
            self._scan = {
                "max_weight": float(w[imax]),
                "max_rho": float(np.max(rho)),
                "argmax": u[imax].copy(),
            }
        return self._scan

    def rescan(self, factor=2):
        self.scan_resolution = int(self.scan_resolution * factor) + 1
        self._scan = None
        return self.scan()

    def max_weight(self):
        return self.scan()["max_weight"]

    def max_rho(self):
        return self.scan()["max_rho"]

    def normalization(self):
        """Z = integral of the weight over the box (Gauss-Legendre, cached)."""
        if self._z is None:
            nodes, wq = gauss_legendre_grid(self.axis_boxes, self.quad_order)
            self._z = float(np.sum(self.weight_flat(nodes) * wq))
        return self._z

    def quadrature_mean(self, axis):
        """Mean of one joint-chart coordinate under the normalized density."""
        nodes, wq = gauss_legendre_grid(self.axis_boxes, self.quad_order)
        w = self.weight_flat(nodes) * wq
        return float(np.sum(w * nodes[:, axis]) / np.sum(w))

    def bin_masses(self, bins_per_axis, per_bin_order=8):
        """Normalized predicted masses on a regular joint binning.

        Returns (edges per axis, masses array of shape (bins,)*dims); the
        masses are normalized to sum to one over the box.
        """
        bins = int(bins_per_axis)
        edges = [np.linspace(lo, hi, bins + 1) for lo, hi in self.axis_boxes]
        base_x, base_w = np.polynomial.legendre.leggauss(per_bin_order)
        axes_nodes = []
        axes_weights = []
        for e in edges:
            half = 0.5 * np.diff(e)
            mid = 0.5 * (e[:-1] + e[1:])
            nodes = mid[:, None] + half[:, None] * base_x[None, :]
            axes_nodes.append(nodes.ravel())
            axes_weights.append(half[:, None] * base_w[None, :])
        mesh = np.meshgrid(*axes_nodes, indexing="ij")
        u = np.stack([m.ravel() for m in mesh], axis=-1)
        w = self.weight_flat(u).reshape(
            tuple(s for _ in range(self.dims) for s in (bins, per_bin_order)))
        for a in range(self.dims):
            shape = [1] * w.ndim
            shape[2 * a] = bins
            shape[2 * a + 1] = per_bin_order
            w = w * axes_weights[a].reshape(shape)
        masses = w.sum(axis=tuple(range(1, 2 * self.dims, 2))
                       if self.dims > 0 else ())
        total = masses.sum()
        return edges, masses / total

    def marginal_cdf(self, axis, resolution=2049, cross_order=None):
        """CDF of one joint coordinate on a fine grid (trapezoid-integrated)."""
        cross_order = cross_order or self.quad_order
        lo, hi = self.axis_boxes[axis]
        grid = np.linspace(lo, hi, resolution)
        other = [a for a in range(self.dims) if a != axis]
        if other:
            nodes, wq = gauss_legendre_grid(self.axis_boxes[other], cross_order)
            u = np.empty((resolution, nodes.shape[0], self.dims))
            u[..., axis] = grid[:, None]
            for j, a in enumerate(other):
                u[..., a] = nodes[:, j]
            pdf = np.sum(self.weight_flat(u) * wq, axis=-1)
        else:
            pdf = self.weight_flat(grid[:, None])
        dx = grid[1] - grid[0]
        cdf = np.concatenate(
            [[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * dx)])
        if cdf[-1] <= 0:
            raise ValueError("marginal has no mass on the box")
        return grid, cdf / cdf[-1]

    def boundary_relative_flux(self, resolution=None):
        """Largest outward probability flux through the box boundary,
        relative to the peak weight.

        The pointwise leakage rate through the face where coordinate a of
        particle k sits at its box edge is weight * (outward chart velocity)
        = prod(area) * (chart component of j_k) / |df(X_k)|, which is
        division-free and well defined even near nodes. A rest-like state
        (no flux anywhere) passes trivially however its weight looks at the
        boundary; a traveling packet passes only if its tails are negligible
        there.
        """
        sd = self.foliation.spatial_dims
        n = self.psi.n_particles
        face_dims = self.dims - 1
        res = resolution or _auto_resolution(max(face_dims, 1))
        worst = 0.0
        for a in range(self.dims):
            k, comp = divmod(a, sd)
            other = [b for b in range(self.dims) if b != a]
            if other:
                axes = [np.linspace(lo, hi, res) for lo, hi in
                        self.axis_boxes[other]]
                mesh = np.meshgrid(*axes, indexing="ij")
                base = np.stack([m.ravel() for m in mesh], axis=-1)
            else:
                base = np.zeros((1, 0))
            for side, edge in enumerate(self.axis_boxes[a]):
                u = np.empty((base.shape[0], self.dims))
                for j, b in enumerate(other):
                    u[:, b] = base[:, j]
                u[:, a] = edge
                xi = self.chart_tuples(u)
                pts = self.points(xi)
                vals = self.psi.evaluate_batch(pts)
                normals = self.foliation.normal(pts)
                j = currents_all_batch(vals, normals, n, self.psi.mode)
                grad_norm = np.sqrt(minkowski_norm_sq(
                    self.foliation.gradient(pts[:, k, :])))
                chart_v = self.foliation.chart_velocity(pts[:, k, :],
                                                        j[:, k, :])[:, comp]
                area = np.ones(u.shape[0])
                for kk in range(n):
                    area = area * self.foliation.area_element(self.s,
                                                              xi[:, kk, :])
                outward = chart_v if side == 1 else -chart_v
                flux = area * np.maximum(outward, 0.0) / grad_norm
                worst = max(worst, float(np.max(flux)))
        return worst / self.max_weight()


@dataclass
class SampleSet:
    """Initial-leaf samples in chart coordinates plus their provenance."""

    chart: np.ndarray            # (M, N, sd)
    density: LeafDensity
    seed: int
    envelope: float

    @property
    def n_samples(self):
        return self.chart.shape[0]

    def points(self):
        return self.density.points(self.chart)

    def configurations(self):
        pts = self.points()
        s = self.density.s
        return [NConfiguration(s, pts[i]) for i in range(pts.shape[0])]


def sample_leaf(density: LeafDensity, m_samples: int, seed: int,
                proposal_block: int = 64, envelope_factor: float = 1.1,
                max_restarts: int = 3,
                boundary_tolerance: float = BOUNDARY_FLUX_TOLERANCE) -> SampleSet:
    """Draw M independent configurations from the leaf density.

    Rejection sampling with a uniform proposal over the box and an envelope
    of (scanned max weight) * envelope_factor. Each sample i consumes only
    the Philox stream keyed by (seed, i), in fixed-size blocks, so the
    result is reproducible bit for bit for any execution order. A weight
    above the envelope triggers a finer rescan and a full deterministic
    restart.
    """
    if m_samples < 1:
        raise ValueError("need at least one sample")
    leak = density.boundary_relative_flux()
    if not leak < boundary_tolerance:
        raise BoundaryLeak(
            f"boundary flux {leak:.3e} of peak weight exceeds "
            f"{boundary_tolerance:.1e}; enlarge the sampling box")

    dims = density.dims
    lo = density.axis_boxes[:, 0]
    span = density.axis_boxes[:, 1] - density.axis_boxes[:, 0]

    last_exc = None
    for _ in range(max_restarts):
        envelope = envelope_factor * density.max_weight()
        try:
            flat = _rejection_fill(density, m_samples, seed, envelope,
                                   lo, span, dims, proposal_block)
            return SampleSet(chart=density.chart_tuples(flat), density=density,
                             seed=int(seed), envelope=float(envelope))
        except EnvelopeBreach as exc:
            last_exc = exc
            density.rescan()
    raise EnvelopeBreach(
        f"envelope still violated after {max_restarts} rescans: {last_exc}")


def _rejection_fill(density, m_samples, seed, envelope, lo, span, dims,
                    block):
    gens = [trajectory_rng(seed, i) for i in range(m_samples)]
    out = np.empty((m_samples, dims))
    pending = np.arange(m_samples)
    rounds = 0
    while pending.size:
        rounds += 1
        if rounds > 10000:
            raise EnvelopeBreach("rejection sampling failed to converge; "
                                 "acceptance rate is pathologically low")
        draws = np.stack([gens[i].random((block, dims + 1))
                          for i in pending])
        proposals = lo + draws[..., :dims] * span
        w = density.weight_flat(proposals)
        if np.any(w > envelope):
            raise EnvelopeBreach(
                f"weight {np.max(w):.6e} above envelope {envelope:.6e}")
        accept = draws[..., dims] * envelope < w
        has = accept.any(axis=1)
        first = accept.argmax(axis=1)
        rows = np.nonzero(has)[0]
        out[pending[has]] = proposals[rows, first[has]]
        pending = pending[~has]
    return out


@dataclass(frozen=True)
class CrossingSample:
    trajectory_id: int
    s: float
    chart: np.ndarray            # (N, sd)


@dataclass
class CrossingSet:
    """Leaf crossings of an ensemble, with exclusion bookkeeping."""

    s: float
    chart: np.ndarray            # (M_included, N, sd)
    trajectory_ids: np.ndarray   # (M_included,)
    excluded_ids: np.ndarray

    @property
    def n_included(self):
        return self.chart.shape[0]

    @property
    def n_excluded(self):
        return len(self.excluded_ids)

    def sample(self, i) -> CrossingSample:
        return CrossingSample(int(self.trajectory_ids[i]), self.s,
                              self.chart[i])


def crossings(ensemble: TrajectoryEnsemble, s_target: float) -> CrossingSet:
    """Interpolate every trajectory's crossing of the leaf Sigma_{s_target}.

    Linear interpolation between the bracketing grid configurations (exact
    when s_target is a grid value). Trajectories halted before the target
    leaf are excluded and counted.
    """
    s_grid = ensemble.s_grid
    if not (s_grid[0] - 1e-12 <= s_target <= s_grid[-1] + 1e-12):
        raise ValueError("target label outside the integrated range")
    i = int(np.searchsorted(s_grid, s_target, side="right")) - 1
    i = min(max(i, 0), len(s_grid) - 2)
    theta = (s_target - s_grid[i]) / (s_grid[i + 1] - s_grid[i])
    need = i + 1 if theta > 0 else i

    included = ensemble.valid_steps >= need
    x = (1.0 - theta) * ensemble.points[:, i] + theta * ensemble.points[:, i + 1]
    chart = ensemble.foliation.chart_coords(x)
    ids = np.nonzero(included)[0]
    return CrossingSet(s=float(s_target), chart=chart[included],
                       trajectory_ids=ids,
                       excluded_ids=np.nonzero(~included)[0])


@dataclass
class EquivarianceReport:
    """Binned TV and marginal KS comparison against a leaf density."""

    ensemble_size: int
    included: int
    excluded: int
    bins_per_axis: int
    tv_distance: float
    tv_threshold: float
    ks_stats: list
    ks_threshold: float
    leak_mass: float
    passed: bool
    bin_edges: list = field(repr=False, default=None)
    counts: np.ndarray = field(repr=False, default=None)
    predicted_masses: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {
            "ensemble_size": self.ensemble_size,
            "included": self.included,
            "excluded": self.excluded,
            "bins_per_axis": self.bins_per_axis,
            "tv_distance": self.tv_distance,
            "tv_threshold": self.tv_threshold,
            "ks_stats": list(self.ks_stats),
            "ks_threshold": self.ks_threshold,
            "leak_mass": self.leak_mass,
            "passed": self.passed,
        }


def equivariance_test(samples, density: LeafDensity, bins_per_axis: int,
                      tv_threshold: float = 0.05,
                      ks_coefficient: float = 1.63,
                      excluded: int = 0) -> EquivarianceReport:
    """Compare crossing samples against the predicted leaf density.

    ``samples`` is a CrossingSet or a chart array (M, N, sd). The test bins
    the joint chart coordinates (TV distance between empirical frequencies
    and quadrature bin masses, empirical mass falling outside the box
    counted against the match) and runs a one-sample KS test on every
    1-d marginal against the quadrature CDF.
    """
    if isinstance(samples, CrossingSet):
        excluded = samples.n_excluded
        chart = samples.chart
    else:
        chart = np.asarray(samples, dtype=float)
    m_inc = chart.shape[0]
    if m_inc < 1:
        raise ValueError("no samples to test")
    u = chart.reshape(m_inc, density.dims)

    edges, predicted = density.bin_masses(bins_per_axis)
    counts, _ = np.histogramdd(u, bins=edges)
    emp = counts / m_inc
    leak = 1.0 - counts.sum() / m_inc
    tv = 0.5 * (np.sum(np.abs(emp - predicted)) + leak)

    ks_stats = []
    for a in range(density.dims):
        xs = np.sort(u[:, a])
        grid, cdf = density.marginal_cdf(a)
        f = np.interp(xs, grid, cdf, left=0.0, right=1.0)
        steps = np.arange(1, m_inc + 1) / m_inc
        d_plus = np.max(steps - f)
        d_minus = np.max(f - (steps - 1.0 / m_inc))
        ks_stats.append(float(max(d_plus, d_minus)))

    ks_threshold = ks_coefficient / np.sqrt(m_inc)
    passed = bool(tv < tv_threshold
                  and all(k < ks_threshold for k in ks_stats))
    return EquivarianceReport(
        ensemble_size=m_inc + excluded, included=m_inc, excluded=excluded,
        bins_per_axis=int(bins_per_axis), tv_distance=float(tv),
        tv_threshold=float(tv_threshold), ks_stats=ks_stats,
        ks_threshold=float(ks_threshold), leak_mass=float(leak),
        passed=passed, bin_edges=edges, counts=counts,
        predicted_masses=predicted)


def flat_continuity_residual(psi, t, grid, h_t, h_x):
    """Residual of d rho / dt + sum_k div_k J_k in the flat frame.

    ``grid`` is an array (G, N, sd) of spatial configurations; rho = |psi|^2
    and J_k = psi^dag alpha_k psi are differenced centrally with steps h_t
    and h_x. Returns the (G,) residual field; second-order accurate, exact
    zero in the limit.
    """
    if h_t <= 0 or h_x <= 0:
        raise ValueError("steps must be positive")
    grid = np.asarray(grid, dtype=float)
    g_count, n, sd = grid.shape
    if sd != psi.mode.spatial_dims or n != psi.n_particles:
        raise ValueError("grid shape does not match the wave function")

    def values_at(dt, k=None, i=None, dx=0.0):
        pts = np.zeros((g_count, n, 4))
        pts[..., 0] = t + dt
        pts[..., 1:1 + sd] = grid
        if k is not None:
            pts[:, k - 1, 1 + i] += dx
        return psi.evaluate_batch(pts)

    def norm_sq(v):
        return np.real(np.sum(np.conj(v) * v, axis=-1))

    res = (norm_sq(values_at(h_t)) - norm_sq(values_at(-h_t))) / (2.0 * h_t)
    for k in range(1, n + 1):
        for i in range(sd):
            vp = values_at(0.0, k, i, +h_x)
            vm = values_at(0.0, k, i, -h_x)
            op = alpha(i + 1, psi.mode)
            jp = np.real(np.sum(
                np.conj(vp) * apply_in_slot(vp, op, k, n, psi.mode), axis=-1))
            jm = np.real(np.sum(
                np.conj(vm) * apply_in_slot(vm, op, k, n, psi.mode), axis=-1))
            res = res + (jp - jm) / (2.0 * h_x)
    return res
