"""Trajectory integration for the hypersurface-guided N-particle dynamics.

Trajectories are parametrized by the leaf label s: the configuration at s
is the N-tuple of intersection points of the particle paths with the leaf
Sigma_s, and it advances by

    dX_k/ds = j_k / (df(X_k) . j_k)

with j_k the guiding current evaluated at the configuration and df the
(contravariant) gradient of the generating function. The integrator is
classical fixed-step RK4; after each step every particle is pulled back
onto the target leaf by a single Newton correction along its own current,
which removes secular label drift without touching the order of the method.

The flat-frame law dQ_k/dt = psi^dag alpha_k psi / psi^dag psi is kept as a
separately coded oracle integrator; with a FlatTime foliation the two must
produce the same paths, which is one of the package's acceptance gates.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .currents import currents_all_batch
from .errors import ConsistencyError, NodeProximity, ValidityBreach
from .geometry import lift_to_particle, alpha, minkowski_dot, minkowski_norm_sq

__all__ = [
    "SYNC_TOLERANCE",
    "NConfiguration",
    "TrajectoryBundle",
    "TrajectoryEnsemble",
    "hbd_velocity",
    "integrate",
    "integrate_ensemble",
    "bd_flat_velocity",
    "integrate_flat_bd",
    "sample_path_at_times",
]

SYNC_TOLERANCE = 1e-9

EVENT_NODE = "node_proximity"
EVENT_VALIDITY = "validity_breach"


@dataclass(frozen=True)
class NConfiguration:
    """N particle points sharing one leaf label s."""

    s: float
    points: np.ndarray  # (N, 4)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError("points must have shape (N, 4)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_particles(self):
        return self.points.shape[0]

    def validate(self, foliation):
        labels = foliation.label(self.points)
        drift = float(np.max(np.abs(labels - self.s)))
        if drift > SYNC_TOLERANCE:
            raise ConsistencyError(
                f"configuration off its leaf by {drift:.3e} (> {SYNC_TOLERANCE})")


@dataclass
class TrajectoryBundle:
    """One trajectory sampled on an increasing grid of leaf labels."""

    s_grid: np.ndarray            # (T+1,)
    points: np.ndarray            # (T+1, N, 4)
    events: list                  # [(s, kind)]
    valid_steps: int              # index of the last trustworthy grid entry
    step: float
    node_threshold: float

    @property
    def completed(self) -> bool:
        return self.valid_steps == len(self.s_grid) - 1

    def configuration(self, i) -> NConfiguration:
        return NConfiguration(float(self.s_grid[i]), self.points[i])


@dataclass
class TrajectoryEnsemble:
    """A set of trajectories integrated on a common s-grid."""

    s_grid: np.ndarray            # (T+1,)
    points: np.ndarray            # (M, T+1, N, 4)
    valid_steps: np.ndarray       # (M,)
    events: list                  # [(trajectory, s, kind)]
    step: float
    node_threshold: float
    foliation: object = field(repr=False, default=None)

    @property
    def n_trajectories(self):
        return self.points.shape[0]

    def bundle(self, i) -> TrajectoryBundle:
        ev = [(s, kind) for t, s, kind in self.events if t == i]
        return TrajectoryBundle(self.s_grid, self.points[i], ev,
                                int(self.valid_steps[i]), self.step,
                                self.node_threshold)


def _flow(psi, foliation, x):
    """Velocity field data at a batch of configurations x (..., N, 4).

    Returns (v, rho, j, denom, grad_ok): the parametrized velocities
    j_k/(df.j_k), the density j_1.n_1, the raw currents, the denominators
    df.j_k, and a mask of rows whose gradient is timelike.
    """
    grads = foliation.gradient(x)
    nn = minkowski_norm_sq(grads)
    grad_ok = np.all(nn > 0, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        normals = grads / np.sqrt(nn)[..., None]
        values = psi.evaluate_batch(x)
        j = currents_all_batch(values, normals, psi.n_particles, psi.mode)
        rho = minkowski_dot(j[..., 0, :], normals[..., 0, :])
        denom = minkowski_dot(grads, j)
        v = j / denom[..., None]
    return v, rho, j, denom, grad_ok


def hbd_velocity(psi, foliation, config: NConfiguration,
                 node_threshold: float = 0.0) -> np.ndarray:
    """Parametrized velocities dX_k/ds at one configuration, shape (N, 4)."""
    config.validate(foliation)
    v, rho, _, _, grad_ok = _flow(psi, foliation, config.points[None])
    if not grad_ok[0]:
        raise ValidityBreach("foliation gradient not timelike at configuration",
                             point=config.points)
    if not rho[0] > node_threshold:
        raise NodeProximity(config.s)
    return v[0]


def _label_grid(s0, s_end, step):
    if step <= 0:
        raise ValueError("step must be positive")
    if s_end <= s0:
        raise ValueError("s_end must exceed the initial label")
    span = s_end - s0
    n_full = int(math.floor(span / step + 1e-9))
    grid = s0 + step * np.arange(n_full + 1)
    if s_end - grid[-1] > 1e-12 * max(1.0, abs(s_end)):
        grid = np.append(grid, s_end)
    return grid


def _integrate_batch(psi, foliation, pts0, s_grid, node_threshold):
    """Fixed-step RK4 with leaf re-projection for one batch of trajectories."""
    n_steps = len(s_grid) - 1
    batch = pts0.shape[0]
    out = np.empty((batch, n_steps + 1) + pts0.shape[1:])
    out[:, 0] = pts0
    valid = np.full(batch, n_steps, dtype=int)
    events = []

    active = np.arange(batch)
    y = pts0.copy()
    for i in range(n_steps):
        if active.size == 0:
            break
        s_here = float(s_grid[i])
        s_next = float(s_grid[i + 1])
        h = s_next - s_here

        bad_node = np.zeros(len(active), dtype=bool)
        bad_grad = np.zeros(len(active), dtype=bool)

        def stage(x):
            v, rho, j, denom, ok = _flow(psi, foliation, x)
            nonlocal bad_node, bad_grad
            bad_grad |= ~ok
            bad_node |= ok & ~(rho > node_threshold)
            return v, j, denom

        k1, _, _ = stage(y)
        k2, _, _ = stage(y + (0.5 * h) * k1)
        k3, _, _ = stage(y + (0.5 * h) * k2)
        k4, _, _ = stage(y + h * k3)
        y_end = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        # one Newton correction along j_k restores f(X_k) = s exactly enough
        _, j_end, denom_end = stage(y_end)
        lam = (s_next - foliation.label(y_end)) / denom_end
        y_proj = y_end + lam[..., None] * j_end

        bad = bad_node | bad_grad
        nun_ok = ~bad
        if np.any(bad):
            for row in np.nonzero(bad)[0]:
                traj = int(active[row])
                kind = EVENT_VALIDITY if bad_grad[row] else EVENT_NODE
                events.append((traj, s_here, kind))
                valid[traj] = i

        inside = np.all(foliation.contains_spatial(y_proj), axis=-1)
        breach = nun_ok & ~inside
        if np.any(breach):
            for row in np.nonzero(breach)[0]:
                traj = int(active[row])
                events.append((traj, s_next, EVENT_VALIDITY))
                valid[traj] = i
            out[active[breach], i + 1] = y_proj[breach]

        good = nun_ok & inside
        if np.any(good):
            drift = np.abs(foliation.label(y_proj[good]) - s_next)
            if np.max(drift) > SYNC_TOLERANCE:
                raise ConsistencyError(
                    f"leaf projection left residue {np.max(drift):.3e}")
            out[active[good], i + 1] = y_proj[good]

        active = active[good]
        y = y_proj[good]

    # freeze halted trajectories at their last valid configuration
    for t in range(batch):
        if valid[t] < n_steps:
            out[t, valid[t] + 1:] = out[t, valid[t]]
    return out, valid, events


def integrate_ensemble(psi, foliation, initial_points, s0, s_end, step,
                       node_threshold: float = 0.0, workers: int = 1,
                       batch_size: int = 1024) -> TrajectoryEnsemble:
    """Integrate many trajectories from a common initial leaf.

    ``initial_points`` has shape (M, N, 4) with every point on Sigma_{s0}.
    Work is split into fixed-size batches whose boundaries do not depend on
    ``workers``; together with the chunking-independent arithmetic of the
    batch kernels this makes the output bit-identical for any worker count.
    """
    pts = np.asarray(initial_points, dtype=float)
    if pts.ndim != 3 or pts.shape[2] != 4:
        raise ValueError("initial points must have shape (M, N, 4)")
    drift = np.max(np.abs(foliation.label(pts) - s0))
    if drift > SYNC_TOLERANCE:
        raise ConsistencyError(
            f"initial configuration off the leaf by {drift:.3e}")
    s_grid = _label_grid(s0, s_end, step)

    m_total = pts.shape[0]
    starts = list(range(0, m_total, batch_size))
    jobs = [(lo, min(lo + batch_size, m_total)) for lo in starts]

    def run(job):
        lo, hi = job
        return _integrate_batch(psi, foliation, pts[lo:hi], s_grid,
                                node_threshold)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    points = np.concatenate([r[0] for r in results], axis=0)
    valid = np.concatenate([r[1] for r in results], axis=0)
    events = []
    for (lo, _), (_, _, ev) in zip(jobs, results):
        events.extend((t + lo, s, kind) for t, s, kind in ev)
    return TrajectoryEnsemble(s_grid=s_grid, points=points, valid_steps=valid,
                              events=events, step=float(step),
                              node_threshold=float(node_threshold),
                              foliation=foliation)


def integrate(psi, foliation, initial: NConfiguration, s_end, step,
              node_threshold: float = 0.0) -> TrajectoryBundle:
    """Integrate a single trajectory; see integrate_ensemble for the rules."""
    initial.validate(foliation)
    ens = integrate_ensemble(psi, foliation, initial.points[None], initial.s,
                             s_end, step, node_threshold)
    return ens.bundle(0)


# ---------------------------------------------------------------------------
# flat-frame oracle
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _lifted_alphas(n_particles, mode):
    """Dense alpha_k^i on the N-particle spin space, indexed [k-1][i-1]."""
    return tuple(
        tuple(lift_to_particle(alpha(i, mode), k, n_particles)
              for i in range(1, 1 + mode.spatial_dims))
        for k in range(1, n_particles + 1))


def bd_flat_velocity(psi, t, positions, node_threshold: float = 0.0):
    """Flat-frame guiding velocities dQ_k/dt = psi^dag alpha_k psi / psi^dag psi.

    ``positions`` has shape (N, spatial_dims); returns the same shape.
    Coded against dense lifted matrices, independent of the covariant path.
    """
    sd = psi.mode.spatial_dims
    q = np.asarray(positions, dtype=float)
    x = np.zeros((psi.n_particles, 4))
    x[:, 0] = t
    x[:, 1:1 + sd] = q
    v = psi.evaluate(x).entries
    norm_sq = float(np.real(np.vdot(v, v)))
    if not norm_sq > node_threshold:
        raise NodeProximity(t, f"psi^dag psi below node threshold at t={t}")
    ops = _lifted_alphas(psi.n_particles, psi.mode)
    vel = np.empty((psi.n_particles, sd))
    for k in range(psi.n_particles):
        for i in range(sd):
            vel[k, i] = np.real(np.vdot(v, ops[k][i] @ v)) / norm_sq
    return vel


def integrate_flat_bd(psi, t0, t_end, step, positions0,
                      node_threshold: float = 0.0):
    """RK4 for the flat-frame law; returns (t_grid, positions (T+1, N, sd))."""
    t_grid = _label_grid(t0, t_end, step)
    q = np.asarray(positions0, dtype=float).copy()
    out = np.empty((len(t_grid),) + q.shape)
    out[0] = q
    for i in range(len(t_grid) - 1):
        t = float(t_grid[i])
        h = float(t_grid[i + 1] - t_grid[i])
        k1 = bd_flat_velocity(psi, t, q, node_threshold)
        k2 = bd_flat_velocity(psi, t + 0.5 * h, q + (0.5 * h) * k1, node_threshold)
        k3 = bd_flat_velocity(psi, t + 0.5 * h, q + (0.5 * h) * k2, node_threshold)
        k4 = bd_flat_velocity(psi, t + h, q + h * k3, node_threshold)
        q = q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = q
    return t_grid, out


# ---------------------------------------------------------------------------
# parametrization-free path comparison
# ---------------------------------------------------------------------------

def sample_path_at_times(psi, foliation, bundle: TrajectoryBundle, k, times):
    """Spatial position of particle k at given coordinate times x^0.

    Reparametrizes the path by its own time component using cubic Hermite
    interpolation (slopes from the guiding field), so paths integrated
    against different foliations can be compared pointwise. ``times`` must
    lie inside the path's time span.
    """
    top = bundle.valid_steps + 1
    pts = bundle.points[:top, k - 1, :]
    v, _, _, _, _ = _flow(psi, foliation, bundle.points[:top])
    vk = v[:, k - 1, :]
    tgrid = pts[:, 0]
    if np.any(np.diff(tgrid) <= 0):
        raise ConsistencyError("path time component not strictly increasing")
    slopes = vk[:, 1:] / vk[:, 0:1]       # dx^i/dx^0

    times = np.asarray(times, dtype=float)
    if np.any(times < tgrid[0] - 1e-12) or np.any(times > tgrid[-1] + 1e-12):
        raise ValueError("requested times outside the path's span")
    idx = np.clip(np.searchsorted(tgrid, times, side="right") - 1,
                  0, len(tgrid) - 2)
    t0 = tgrid[idx]
    dt = tgrid[idx + 1] - t0
    u = np.clip((times - t0) / dt, 0.0, 1.0)

    h00 = (1 + 2 * u) * (1 - u) ** 2
    h10 = u * (1 - u) ** 2
    h01 = u * u * (3 - 2 * u)
    h11 = u * u * (u - 1)
    y0 = pts[idx, 1:]
    y1 = pts[idx + 1, 1:]
    m0 = slopes[idx]
    m1 = slopes[idx + 1]
    return (h00[:, None] * y0 + h10[:, None] * (dt[:, None] * m0)
            + h01[:, None] * y1 + h11[:, None] * (dt[:, None] * m1))
