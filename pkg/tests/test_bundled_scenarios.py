"""Every bundled scenario with an ensemble block must hold equilibrium.

The headline curved entangled case runs at full size in the acceptance
gate; here the remaining scenarios run end to end (sample, propagate,
crossing statistics) at their bundled sizes and thresholds.
"""

import pytest

from hbdsim.cli import run_equilibrium, run_simulate
from hbdsim.errors import ScenarioError
from hbdsim.scenario import bundled_scenario_path, load_scenario

EQUILIBRIUM_SCENARIOS = [
    "flat_n1_rest",
    "curved_n1_packet",
    "tilted_n1_drift",
    "ripple_n2_product",
    "flat_n2_entangled",
]


@pytest.mark.parametrize("name", EQUILIBRIUM_SCENARIOS)
def test_bundled_equilibrium_passes(name, tmp_path):
    sc = load_scenario(bundled_scenario_path(name))
    payload = run_equilibrium(sc, tmp_path, workers=2)
    rep = payload["report"]
    assert rep["passed"], rep
    assert rep["tv_distance"] < rep["tv_threshold"]
    assert all(k < rep["ks_threshold"] for k in rep["ks_stats"])
    # equilibrium scenarios must not visit nodes or leave the certified
    # region: the excluded fraction stays below 0.1%
    assert rep["excluded"] <= 0.001 * rep["ensemble_size"]


@pytest.mark.parametrize("name", ["flat_n1_beat", "curved_n2_entangled"])
def test_bundled_simulate_runs(name, tmp_path):
    sc = load_scenario(bundled_scenario_path(name))
    out = run_simulate(sc, tmp_path)
    assert out["n_trajectories"] == len(sc.integration.initial_positions)
    assert out["n_events"] == 0


def test_equilibrium_requires_ensemble_block(tmp_path):
    sc = load_scenario(bundled_scenario_path("flat_n1_beat"))
    with pytest.raises(ScenarioError) as err:
        run_equilibrium(sc, tmp_path)
    assert err.value.kind == "ensemble"
