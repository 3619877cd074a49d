"""Acceptance gate: one test per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one summary line
per criterion. The heavy items (ensemble equivariance, foliation
independence) run at full size; expect a few minutes total.
"""

import json
import time
from pathlib import Path

import numpy as np

from hbdsim import checks
from hbdsim.cli import run_equilibrium, run_simulate
from hbdsim.dynamics import (
    NConfiguration,
    integrate,
    integrate_ensemble,
    integrate_flat_bd,
    sample_path_at_times,
)
from hbdsim.ensemble import LeafDensity, crossings, equivariance_test, sample_leaf
from hbdsim.foliation import FlatTime, GraphLeaf, TanhProfile, frobenius_residual, twisted_field
from hbdsim.geometry import SpinDimensionMode
from hbdsim.scenario import bundled_scenario_path, load_scenario
from hbdsim.wavefunction import NParticleWavefunction, make_mode

D11 = SpinDimensionMode.D11


def report(num, name, passed, detail):
    line = f"[acceptance] criterion {num:2d} ({name}): " \
           f"{'PASS' if passed else 'FAIL'} - {detail}"
    print(line)
    assert passed, line


def test_criterion_01_clifford_suite():
    t0 = time.perf_counter()
    dev = checks.clifford_deviation()
    herm = checks.hermiticity_deviation()
    elapsed = time.perf_counter() - t0
    ok = dev < 1e-12 and herm == 0.0 and elapsed < 1.0
    report(1, "clifford algebra", ok,
           f"anticommutator dev {dev:.2e} (< 1e-12), hermiticity dev {herm}"
           f" (exact), runtime {elapsed:.3f}s (< 1s)")


def test_criterion_02_k_independence():
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    spread = checks.k_independence_spread(rng, draws=1000)
    elapsed = time.perf_counter() - t0
    ok = spread < 1e-10 and elapsed < 10.0
    report(2, "k-independence", ok,
           f"max relative spread of j_k.n_k over 1000 draws: {spread:.2e}"
           f" (< 1e-10), runtime {elapsed:.2f}s (< 10s)")


def test_criterion_03_positivity():
    rng = np.random.default_rng(1002)
    min_rho, min_causal, min_j0 = checks.positivity_stats(rng, draws=10000)
    ok = min_rho >= -1e-12 and min_causal >= -1e-10 and min_j0 > 0.0
    report(3, "positivity and causal flow", ok,
           f"min rho/scale {min_rho:.2e} (>= -1e-12); causal margin "
           f"{min_causal:.2e} (>= -1e-10); min j^0 {min_j0:.2e} (> 0); "
           f"10^4 draws")


def test_criterion_04_divergence_free():
    rng = np.random.default_rng(1003)
    ratios = checks.divergence_richardson_ratios(rng, configs=100)
    ok = len(ratios) >= 90 and np.all((ratios > 3.2) & (ratios < 4.8))
    report(4, "divergence-free currents", ok,
           f"Richardson ratios on {len(ratios)} configurations in "
           f"[{ratios.min():.3f}, {ratios.max():.3f}] (within 4 +- 20%)")


def test_criterion_05_flat_reduction():
    worst = []
    for name in ("flat_n1_rest", "flat_n1_beat", "flat_n2_entangled"):
        sc = load_scenario(bundled_scenario_path(name))
        h = sc.integration.step
        s0, s1 = sc.integration.s0, sc.integration.s1
        flat = sc.foliation
        for xi in sc.integration.initial_positions:
            pts0 = np.stack([flat.leaf_point(s0, xi[k])
                             for k in range(sc.n_particles)])
            covariant = integrate(sc.psi, flat, NConfiguration(s0, pts0),
                                  s1, h)
            t, q = integrate_flat_bd(sc.psi, s0, s1, h, xi)
            dev = float(np.max(np.abs(covariant.points[:, :, 1] - q[:, :, 0])))

            cov2 = integrate(sc.psi, flat, NConfiguration(s0, pts0), s1,
                             h / 2)
            _, q2 = integrate_flat_bd(sc.psi, s0, s1, h / 2, xi)
            est = (np.max(np.abs(covariant.points[:, :, 1]
                                 - cov2.points[::2, :, 1]))
                   + np.max(np.abs(q[:, :, 0] - q2[::2, :, 0])))
            worst.append((name, dev, 10.0 * (est + 1e-12)))
    ok = all(dev < tol for _, dev, tol in worst)
    per_scenario = {}
    for n, d, t in worst:
        prev = per_scenario.get(n, (0.0, np.inf))
        per_scenario[n] = (max(prev[0], d), min(prev[1], t))
    detail = "; ".join(f"{n}: dev {d:.2e} < tol {t:.2e}"
                       for n, (d, t) in per_scenario.items())
    report(5, "flat reduction vs independent integrator", ok,
           f"{len(worst)} trajectories over 3 bundled scenarios; {detail}")


def test_criterion_06_rk4_order():
    sc = load_scenario(bundled_scenario_path("curved_n2_entangled"))
    fol = sc.foliation
    xi = np.array([[[-5.2], [5.0]], [[2.0], [-2.4]], [[-5.8], [5.7]]])
    ratios = []
    for x in xi:
        pts0 = np.stack([fol.leaf_point(0.0, x[k]) for k in range(2)])
        cfg = NConfiguration(0.0, pts0)
        ref = integrate(sc.psi, fol, cfg, 2.0, 0.1 / 16).points[-1]
        e1 = np.max(np.abs(integrate(sc.psi, fol, cfg, 2.0, 0.1).points[-1]
                           - ref))
        e2 = np.max(np.abs(integrate(sc.psi, fol, cfg, 2.0, 0.05).points[-1]
                           - ref))
        ratios.append(e1 / e2)
    ratios = np.array(ratios)
    ok = np.all((ratios > 16 * 0.7) & (ratios < 16 * 1.3))
    report(6, "RK4 global order", ok,
           f"step-halving error ratios {np.round(ratios, 2).tolist()} "
           f"(within 16 +- 30%)")


def _independence_runs(n_traj_n1=60, n_traj_prod=40, step=0.04, t_span=2.5):
    rng = np.random.default_rng(1007)
    curved = GraphLeaf(TanhProfile(0.8, 0.6), validity_box=[[-60.0, 60.0]],
                       spatial_dims=1)
    flat = FlatTime(spatial_dims=1)
    results = []

    # one-particle runs: same spacetime start, flat vs curved foliation
    psi1 = NParticleWavefunction([
        (1.0, (make_mode([0.9], 1.0, 1, 1, D11),)),
        (0.7j, (make_mode([0.3], 1.0, 1, 1, D11),)),
        (0.4, (make_mode([-0.2], 1.0, 1, 1, D11),)),
        (0.25 - 0.3j, (make_mode([-0.9], 1.0, -1, 1, D11),)),
    ])
    xi1 = rng.uniform(-2.0, 2.0, size=(n_traj_n1, 1, 1))
    pts0 = curved.leaf_point(0.0, xi1[:, :, :])
    ens_c = integrate_ensemble(psi1, curved, pts0, 0.0, 2.0 * t_span, step)
    ens_c2 = integrate_ensemble(psi1, curved, pts0[:8], 0.0, 2.0 * t_span,
                                step / 2)
    est = 1e-11
    for i in range(n_traj_n1):
        x0 = pts0[i, 0]
        t0 = float(x0[0])
        bf = integrate(psi1, flat, NConfiguration(t0, x0[None]),
                       t0 + 2.0 * t_span, step)
        bc = ens_c.bundle(i)
        t_lo = max(bf.points[0, 0, 0], bc.points[0, 0, 0])
        times = np.linspace(t_lo + 1e-9, t_lo + t_span, 33)
        qa = sample_path_at_times(psi1, flat, bf, 1, times)
        qb = sample_path_at_times(psi1, curved, bc, 1, times)
        dev = float(np.max(np.abs(qa - qb)))
        if i < 8:
            bf2 = integrate(psi1, flat, NConfiguration(t0, x0[None]),
                            t0 + 2.0 * t_span, step / 2)
            qa2 = sample_path_at_times(psi1, flat, bf2, 1, times)
            qb2 = sample_path_at_times(psi1, curved, ens_c2.bundle(i), 1,
                                       times)
            est = max(est, float(np.max(np.abs(qa - qa2))),
                      float(np.max(np.abs(qb - qb2))))
        results.append(("n1", i, dev))

    # product-state runs: each particle of the curved N=2 run must follow
    # the flat one-particle run of its own factor
    factors = [
        [(1.0, make_mode([0.8], 1.0, 1, 1, D11)),
         (0.5, make_mode([0.2], 1.0, 1, 1, D11)),
         (0.2j, make_mode([1.2], 1.0, 1, 1, D11))],
        [(1.0, make_mode([-0.6], 1.0, 1, 1, D11)),
         (0.4j, make_mode([-0.1], 1.0, 1, 1, D11))],
    ]
    psi_prod = NParticleWavefunction.from_product_branches([(1.0, factors)])
    singles = [NParticleWavefunction([(w, (md,)) for w, md in f])
               for f in factors]
    xi2 = rng.uniform(-2.0, 2.0, size=(n_traj_prod, 2, 1))
    pts0 = np.stack([curved.leaf_point(0.0, xi2[:, k]) for k in range(2)],
                    axis=1)
    ens_c = integrate_ensemble(psi_prod, curved, pts0, 0.0, 2.0 * t_span,
                               step)
    ens_c2 = integrate_ensemble(psi_prod, curved, pts0[:4], 0.0,
                                2.0 * t_span, step / 2)
    for i in range(n_traj_prod):
        bc = ens_c.bundle(i)
        dev = 0.0
        for k in (1, 2):
            x0 = pts0[i, k - 1]
            t0 = float(x0[0])
            bf = integrate(singles[k - 1], flat, NConfiguration(t0, x0[None]),
                           t0 + 2.0 * t_span, step)
            t_lo = max(bf.points[0, 0, 0], bc.points[0, k - 1, 0])
            times = np.linspace(t_lo + 1e-9, t_lo + t_span, 33)
            qa = sample_path_at_times(singles[k - 1], flat, bf, 1, times)
            qb = sample_path_at_times(psi_prod, curved, bc, k, times)
            dev = max(dev, float(np.max(np.abs(qa - qb))))
            if i < 4:
                bf2 = integrate(singles[k - 1], flat,
                                NConfiguration(t0, x0[None]),
                                t0 + 2.0 * t_span, step / 2)
                qa2 = sample_path_at_times(singles[k - 1], flat, bf2, 1, times)
                qb2 = sample_path_at_times(psi_prod, curved, ens_c2.bundle(i),
                                           k, times)
                est = max(est, float(np.max(np.abs(qa - qa2))),
                          float(np.max(np.abs(qb - qb2))))
        results.append(("product", i, dev))
    return results, 10.0 * est


def test_criterion_07_foliation_independence():
    results, tol = _independence_runs()
    devs = np.array([d for _, _, d in results])
    ok = len(results) == 100 and np.all(devs < tol)
    report(7, "foliation independence (N=1 and product)", ok,
           f"{len(results)} trajectories, max deviation {devs.max():.2e} "
           f"< tolerance {tol:.2e} (10x combined step-halving error)")


def test_criterion_08_equivariance(tmp_path):
    t0 = time.perf_counter()
    sc = load_scenario(bundled_scenario_path("curved_n2_entangled"))
    ens_block = sc.ensemble
    density0 = LeafDensity(sc.foliation, sc.integration.s0, sc.psi,
                           ens_block.boxes, ens_block.quadrature_order)
    samples = sample_leaf(density0, ens_block.size, ens_block.seed)
    threshold = sc.integration.node_threshold_factor * density0.max_rho()
    ens = integrate_ensemble(sc.psi, sc.foliation, samples.points(),
                             sc.integration.s0, sc.integration.s1,
                             sc.integration.step, threshold, workers=2)
    cross = crossings(ens, sc.integration.s1)

    density1 = LeafDensity(sc.foliation, sc.integration.s1, sc.psi,
                           ens_block.target_boxes,
                           ens_block.quadrature_order)
    rep = equivariance_test(cross, density1, ens_block.bins_per_axis,
                            ens_block.tv_threshold, ens_block.ks_coefficient)

    wrong = LeafDensity(sc.foliation, sc.integration.s1, sc.psi,
                        ens_block.target_boxes, ens_block.quadrature_order,
                        flat_normals=True)
    rep_neg = equivariance_test(cross, wrong, ens_block.bins_per_axis,
                                ens_block.tv_threshold,
                                ens_block.ks_coefficient)
    elapsed = time.perf_counter() - t0

    span = sc.integration.s1 - sc.integration.s0
    wavelength = 2 * np.pi / 1.8          # de Broglie of the fast packets
    ok = (rep.ensemble_size == 10000 and rep.passed
          and rep.tv_distance < 0.05
          and all(k < 1.63 / np.sqrt(rep.included) for k in rep.ks_stats)
          and not rep_neg.passed
          and span >= 2 * wavelength
          and elapsed < 300.0)
    report(8, "equivariance of crossing statistics", ok,
           f"TV {rep.tv_distance:.4f} (< 0.05, 20 bins/axis), "
           f"KS {[round(k, 4) for k in rep.ks_stats]} "
           f"(< {1.63 / np.sqrt(rep.included):.4f}); negative control TV "
           f"{rep_neg.tv_distance:.4f} fails as required; span {span} >= "
           f"2 wavelengths ({2 * wavelength:.1f}); runtime {elapsed:.0f}s "
           f"(< 300s)")


def test_criterion_09_flat_continuity():
    rng = np.random.default_rng(1009)
    flat_res, ratios = checks.continuity_residuals(rng)
    ok = (flat_res < 1e-8 and len(ratios) > 0
          and np.all((ratios > 3.2) & (ratios < 4.8)))
    report(9, "flat-frame continuity equation", ok,
           f"product plane-wave residual {flat_res:.2e} (< 1e-8 at h=1e-3); "
           f"entangled Richardson ratios in [{ratios.min():.3f}, "
           f"{ratios.max():.3f}] (4 +- 20%)")


def test_criterion_10_frobenius():
    fols = [FlatTime(spatial_dims=1),
            GraphLeaf(TanhProfile(0.9, 0.7), validity_box=[[-6, 6]],
                      spatial_dims=1),
            load_scenario(bundled_scenario_path("ripple_n2_product")).foliation]
    xs = [np.array([0.3, 0.4, 0.0, 0.0]), np.array([-1.0, 1.7, 0.0, 0.0])]
    worst_h = 0.0
    ratios = []
    for fol in fols:
        for x in xs:
            r1 = frobenius_residual(fol.gradient, x, 2e-3)
            r2 = frobenius_residual(fol.gradient, x, 1e-3)
            worst_h = max(worst_h, r2)
            if r1 > 1e-11:
                ratios.append(r1 / r2)

    # an integrable field with enough active coordinates that the
    # discretized wedge is nonzero: exercises the genuine O(h^2) decay
    from test_foliation import scaled_two_ridge_gradient
    for x in (np.array([0.4, 0.7, -0.3, 0.9]),
              np.array([-0.8, 0.2, 1.1, -0.5])):
        r1 = frobenius_residual(scaled_two_ridge_gradient, x, 2e-3)
        r2 = frobenius_residual(scaled_two_ridge_gradient, x, 1e-3)
        worst_h = max(worst_h, r2)
        if r1 > 1e-9:
            ratios.append(r1 / r2)
    ratios = np.array(ratios)
    twisted = frobenius_residual(twisted_field(0.5),
                                 np.array([0.2, 0.1, -0.4, 1.3]), 1e-4)
    ok = (worst_h < 1e-5 and len(ratios) > 0
          and np.all((ratios > 3.2) & (ratios < 4.8)) and twisted > 0.1)
    report(10, "Frobenius integrability", ok,
           f"integrable-field residual {worst_h:.2e} at h=1e-3, halving "
           f"ratios in [{ratios.min():.2f}, {ratios.max():.2f}] (O(h^2)); "
           f"non-integrable field residual {twisted:.2f} stays > 0.1")


def test_criterion_11_determinism(tmp_path):
    raw = {
        "schema_version": 1, "name": "determinism_probe", "mode": "D11",
        "mass": 1.0,
        "wavefunction": {"branches": [
            {"coefficient": [1.0, 0.0],
             "factors": [{"packet": {"p0": [1.0], "sigma_p": 0.4, "dp": 0.25,
                                     "half_modes": 10, "center_xi": [-1.0],
                                     "center_s": 0.0}}]}]},
        "foliation": {"variant": "graph_tanh", "a": 0.8, "b": 0.6,
                      "validity_box": [[-30.0, 30.0]]},
        "integration": {"s0": 0.0, "s1": 1.0, "step": 0.05,
                        "node_threshold_factor": 1e-10,
                        "initial_positions": [[[-1.0]], [[0.3]]]},
        "ensemble": {"size": 150, "seed": 987654, "boxes": [[[-8.5, 7.0]]],
                     "target_boxes": [[[-8.0, 8.0]]], "bins_per_axis": 8,
                     "quadrature_order": 32, "tv_threshold": 0.25,
                     "ks_coefficient": 1.63},
    }
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(raw))

    def strip_ts(p):
        return "\n".join(l for l in Path(p).read_text().splitlines()
                         if '"timestamp"' not in l)

    outs = []
    for i, workers in enumerate((1, 1, 4)):
        out = tmp_path / f"eq{i}"
        run_equilibrium(load_scenario(path), out, workers=workers)
        sim = tmp_path / f"sim{i}"
        run_simulate(load_scenario(path), sim, workers=workers)
        outs.append((out, sim))
    same = True
    for out, sim in outs[1:]:
        same &= (Path(outs[0][0] / "crossings.csv").read_bytes()
                 == Path(out / "crossings.csv").read_bytes())
        same &= (Path(outs[0][0] / "histogram.json").read_bytes()
                 == Path(out / "histogram.json").read_bytes())
        same &= strip_ts(outs[0][0] / "report.json") == strip_ts(out / "report.json")
        same &= (Path(outs[0][1] / "trajectories.csv").read_bytes()
                 == Path(sim / "trajectories.csv").read_bytes())
    report(11, "byte-level determinism", same,
           "equilibrium and simulate outputs byte-identical across reruns "
           "and worker counts 1/4 (timestamp field excluded)")
