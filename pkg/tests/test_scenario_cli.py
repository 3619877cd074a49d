import copy
import json
import time
from pathlib import Path

import numpy as np
import pytest

from hbdsim.cli import main, run_equilibrium, run_simulate
from hbdsim.errors import ScenarioError
from hbdsim.scenario import (
    bundled_scenario_names,
    bundled_scenario_path,
    load_scenario,
    parse_scenario,
    read_csv_table,
    read_json_report,
    scenario_hash,
)

BUNDLED = ["curved_n1_packet", "curved_n2_entangled", "flat_n1_beat",
           "flat_n1_rest", "flat_n2_entangled", "ripple_n2_product",
           "tilted_n1_drift"]


def small_scenario_dict(size=120, s1=1.0):
    """A fast curved one-particle equilibrium scenario for CLI tests."""
    return {
        "schema_version": 1,
        "name": "test_small",
        "mode": "D11",
        "mass": 1.0,
        "wavefunction": {
            "branches": [
                {"coefficient": [1.0, 0.0],
                 "factors": [
                     {"packet": {"p0": [1.0], "sigma_p": 0.4, "dp": 0.25,
                                 "half_modes": 10, "center_xi": [-1.0],
                                 "center_s": 0.0}}
                 ]}
            ]
        },
        "foliation": {"variant": "graph_tanh", "a": 0.8, "b": 0.6,
                      "validity_box": [[-30.0, 30.0]]},
        "integration": {"s0": 0.0, "s1": s1, "step": 0.05,
                        "node_threshold_factor": 1e-10,
                        "initial_positions": [[[-1.0]], [[0.2]]]},
        "ensemble": {"size": size, "seed": 424242,
                     "boxes": [[[-8.5, 7.0]]],
                     "target_boxes": [[[-8.0, 8.0]]],
                     "bins_per_axis": 8,
                     "quadrature_order": 32,
                     "tv_threshold": 0.25,
                     "ks_coefficient": 1.63},
    }


def test_bundled_scenarios_all_load():
    assert bundled_scenario_names() == BUNDLED
    for name in BUNDLED:
        sc = load_scenario(bundled_scenario_path(name))
        assert sc.name == name
        assert len(sc.content_hash) == 16


def test_hash_tracks_content():
    raw = small_scenario_dict()
    h1 = scenario_hash(raw)
    raw2 = copy.deepcopy(raw)
    raw2["ensemble"]["seed"] += 1
    assert scenario_hash(raw2) != h1
    # key order is irrelevant to the canonical hash
    shuffled = json.loads(json.dumps(raw, sort_keys=True))
    assert scenario_hash(shuffled) == h1


@pytest.mark.parametrize("mutate, kind", [
    (lambda r: r.update(schema_version=99), "validation"),
    (lambda r: r.update(mode="D21"), "validation"),
    (lambda r: r.update(mass=-1.0), "validation"),
    (lambda r: r["wavefunction"].update(branches=[]), "wavefunction"),
    (lambda r: r.update(foliation={"variant": "nope"}), "foliation"),
    (lambda r: r["foliation"].update(a=2.5), "validity_breach"),
    (lambda r: r["integration"].update(s1=-1.0), "integration"),
    (lambda r: r["integration"].update(step=0.0), "integration"),
    (lambda r: r["ensemble"].update(size=0), "ensemble"),
    (lambda r: r["ensemble"].update(boxes=[[[2.0, -2.0]]]), "ensemble"),
])
def test_validation_error_kinds(mutate, kind):
    raw = small_scenario_dict()
    mutate(raw)
    with pytest.raises(ScenarioError) as err:
        parse_scenario(raw)
    assert err.value.kind == kind


def test_terms_form_equivalent_to_branches(tmp_path):
    raw = small_scenario_dict()
    sc_b = parse_scenario(raw)
    flat_terms = []
    for c, modes in sc_b.psi.terms:
        flat_terms.append({
            "coefficient": [c.real, c.imag],
            "modes": [{"p": list(md.p), "energy_sign": md.energy_sign,
                       "spin_label": md.spin_label} for md in modes],
        })
    # the flat form drops the packet weights into the coefficients
    raw2 = copy.deepcopy(raw)
    raw2["wavefunction"] = {"terms": flat_terms}
    sc_t = parse_scenario(raw2)
    x = np.array([[[0.3, -0.8, 0.0, 0.0]]])
    a = sc_b.psi.evaluate_batch(x)
    b = sc_t.psi.evaluate_batch(x)
    assert np.max(np.abs(a - b)) < 1e-12 * np.max(np.abs(b))


def test_run_simulate_rest_worldline(tmp_path):
    sc = load_scenario(bundled_scenario_path("flat_n1_rest"))
    out = run_simulate(sc, tmp_path)
    meta, cols = read_csv_table(out["trajectories"])
    assert meta["kind"] == "trajectories"
    assert meta["scenario"] == sc.content_hash
    traj0 = cols["trajectory"] == 0
    # rest mode: straight vertical worldline (x1 frozen, x0 = s)
    assert np.max(np.abs(cols["x1"][traj0] - 0.0)) < 1e-12
    assert np.max(np.abs(cols["x0"][traj0] - cols["s"][traj0])) < 1e-12
    meta_e, cols_e = read_csv_table(out["events"])
    assert meta_e["kind"] == "events"
    assert len(cols_e["trajectory"]) == 0


def test_csv_round_trip(tmp_path):
    raw = small_scenario_dict(size=40)
    sc = parse_scenario(raw)
    payload = run_equilibrium(sc, tmp_path)
    meta, cols = read_csv_table(tmp_path / "crossings.csv")
    assert meta["kind"] == "crossings"
    assert meta["seed"] == str(raw["ensemble"]["seed"])
    assert len(cols["trajectory"]) == payload["report"]["included"]
    assert np.all(cols["s"] == raw["integration"]["s1"])
    hist = read_json_report(tmp_path / "histogram.json")
    assert np.isclose(sum(hist["predicted_masses"]), 1.0)


def test_cli_exit_codes(tmp_path):
    # validation failure: nonzero exit and a machine-readable error line
    bad = small_scenario_dict()
    bad["foliation"]["a"] = 2.5
    bad_path = tmp_path / "bad.json"
    bad_path.write_text(json.dumps(bad))
    assert main(["simulate", "--scenario", str(bad_path),
                 "--out", str(tmp_path / "o1")]) == 2

    good = tmp_path / "good.json"
    good.write_text(json.dumps(small_scenario_dict(size=30)))
    assert main(["simulate", "--scenario", str(good),
                 "--out", str(tmp_path / "o2")]) == 0
    assert main(["equilibrium", "--scenario", str(good),
                 "--out", str(tmp_path / "o3")]) == 0

    missing = tmp_path / "missing.json"
    assert main(["simulate", "--scenario", str(missing),
                 "--out", str(tmp_path / "o4")]) == 2


def negcontrol_scenario_dict():
    """A packet launched across the steep part of the curved foliation:
    large enough, and distorted enough by wrong normals, to discriminate."""
    raw = small_scenario_dict(size=2000, s1=2.0)
    raw["name"] = "test_negcontrol"
    packet = raw["wavefunction"]["branches"][0]["factors"][0]["packet"]
    packet.update({"p0": [1.6], "sigma_p": 0.5})
    raw["foliation"].update({"a": 0.9, "b": 0.7})
    raw["ensemble"].update({"boxes": [[[-8.0, 8.5]]],
                            "target_boxes": [[[-7.0, 10.0]]],
                            "bins_per_axis": 20, "quadrature_order": 64,
                            "tv_threshold": 0.05})
    return raw


def test_cli_negative_control_flag(tmp_path):
    # the negative control must fail the test; with the flag that is the
    # expected outcome, so the command exits 0 and records the failure
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(negcontrol_scenario_dict()))
    code = main(["equilibrium", "--scenario", str(path),
                 "--out", str(tmp_path / "neg"), "--negative-control"])
    rep = read_json_report(tmp_path / "neg" / "report.json")
    assert rep["negative_control"] is True
    assert rep["report"]["passed"] is False
    assert code == 0
    # the same scenario passes against the correct density
    assert main(["equilibrium", "--scenario", str(path),
                 "--out", str(tmp_path / "pos")]) == 0


def _strip_timestamp(path):
    lines = Path(path).read_text().splitlines()
    return "\n".join(l for l in lines if '"timestamp"' not in l)


def test_equilibrium_outputs_deterministic(tmp_path):
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(small_scenario_dict(size=150, s1=1.0)))
    sc = load_scenario(path)
    outs = []
    for i, workers in enumerate((1, 1, 3)):
        out = tmp_path / f"run{i}"
        run_equilibrium(load_scenario(path), out, workers=workers)
        outs.append(out)
    for other in outs[1:]:
        assert (Path(outs[0] / "crossings.csv").read_bytes()
                == Path(other / "crossings.csv").read_bytes())
        assert (Path(outs[0] / "histogram.json").read_bytes()
                == Path(other / "histogram.json").read_bytes())
        assert (_strip_timestamp(outs[0] / "report.json")
                == _strip_timestamp(other / "report.json"))
    del sc


def test_seed_override_changes_samples(tmp_path):
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(small_scenario_dict(size=60)))
    a = run_equilibrium(load_scenario(path), tmp_path / "a")
    b = run_equilibrium(load_scenario(path), tmp_path / "b",
                        seed_override=777)
    assert a["master_seed"] != b["master_seed"]
    assert (Path(tmp_path / "a" / "crossings.csv").read_bytes()
            != Path(tmp_path / "b" / "crossings.csv").read_bytes())


def test_smoke_equilibrium_run_is_fast(tmp_path):
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(small_scenario_dict(size=10, s1=0.5)))
    sc = load_scenario(path)
    t0 = time.perf_counter()
    payload = run_equilibrium(sc, tmp_path / "out")
    elapsed = time.perf_counter() - t0
    assert payload["report"]["included"] == 10
    assert elapsed < 1.0


def test_report_schema_stable(tmp_path):
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(small_scenario_dict(size=40)))
    payload = run_equilibrium(load_scenario(path), tmp_path / "out")
    assert payload["schema_version"] == 1
    assert payload["kind"] == "equivariance_report"
    assert set(payload["report"]) == {
        "ensemble_size", "included", "excluded", "bins_per_axis",
        "tv_distance", "tv_threshold", "ks_stats", "ks_threshold",
        "leak_mass", "passed"}


def test_checks_cli(tmp_path):
    # the checks subcommand runs the invariant suites and exits 0; a
    # corrupted gamma representation must fail the algebra suite
    from hbdsim import checks as checks_mod
    from hbdsim import geometry

    rep = checks_mod.run_all(seed=5, draws_scale=0.05)
    assert rep["all_passed"]

    def corrupt(mu, mode):
        g = np.array(geometry.gamma(mu, mode))
        if mu == 1:
            g = g + 0.01
        return g

    rep_bad = checks_mod.run_all(seed=5, draws_scale=0.05, gamma_fn=corrupt)
    bad = {c["name"]: c["passed"] for c in rep_bad["checks"]}
    assert not bad["clifford"]
    assert not rep_bad["all_passed"]
