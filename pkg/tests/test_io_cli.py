import json

import numpy as np
import pytest

from heisenberg_transport import io
from heisenberg_transport.beckmann import linear_oracle, mollified_source
from heisenberg_transport.cli import main
from heisenberg_transport.grid import Grid, GridField, HorizontalGridField
from heisenberg_transport.kantorovich import DiscreteMeasure, solve_mk
from heisenberg_transport.moser import FlowExitError, TrafficPlan

PAIR = {"mu": {"points": [[-0.25, 0.0, 0.0]]}, "nu": {"points": [[0.25, 0.0, 0.0]]}}
SAME = {"mu": {"points": [[-0.2, 0.0, 0.0], [0.1, 0.1, 0.0]], "weights": [0.4, 0.6]},
        "nu": {"points": [[-0.2, 0.0, 0.0], [0.1, 0.1, 0.0]], "weights": [0.4, 0.6]}}
SMALL = ["--grid", "8", "--eps", "0.2"]


@pytest.fixture
def files(tmp_path):
    out = {}
    for name, rec in (("pair", PAIR), ("same", SAME)):
        out[name] = tmp_path / f"{name}.json"
        out[name].write_text(json.dumps(rec))
    return out


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, (json.loads(cap.out) if cap.out.strip() else None), cap.err


# ---------------------------------------------------------------------------
# io


def test_config_hash_is_stable_and_sensitive():
    a = io.config_hash({"p": 2.0, "grid": 32})
    assert a == io.config_hash({"grid": 32, "p": 2.0})
    assert a != io.config_hash({"p": 3.0, "grid": 32})


def test_measures_round_trip(files):
    mu, nu = io.read_measures(files["same"])
    assert np.allclose(mu.weights, [0.4, 0.6])
    back = io.measure_from_dict(json.loads(io.dumps(io.measure_to_dict(mu))))
    assert np.array_equal(back.points, mu.points) and np.array_equal(back.weights, mu.weights)


def test_plan_round_trip():
    mu = DiscreteMeasure.uniform([[0, 0, 0], [0.2, 0, 0]])
    nu = DiscreteMeasure.uniform([[0, 0.3, 0], [0.1, 0, 0.1]])
    plan, _, _ = solve_mk(mu, nu)
    back = io.plan_from_dict(json.loads(io.dumps(io.plan_to_dict(plan))))
    assert np.array_equal(back.pairs, plan.pairs)


def test_traffic_plan_round_trip():
    q = TrafficPlan.from_curves([np.zeros((2, 3)), np.ones((3, 3))], [0.25, 0.75], mass=1.5)
    back = io.traffic_plan_from_dict(json.loads(io.dumps(io.traffic_plan_to_dict(q))))
    assert np.array_equal(back.vertices, q.vertices) and back.mass == 1.5


@pytest.mark.parametrize("vector", [False, True])
def test_field_csv_round_trip(tmp_path, vector):
    g = Grid.from_spacing((0,) * 3, (1,) * 3, 0.25)
    rng = np.random.default_rng(0)
    fld = HorizontalGridField(g, rng.normal(size=g.shape + (2,))) if vector else GridField(g, rng.normal(size=g.shape))
    io.write_field_csv(tmp_path / "f.csv", fld, {"config_hash": "abc"})
    back, header = io.read_field_csv(tmp_path / "f.csv")
    assert header["config_hash"] == "abc" and back.grid == g
    assert np.array_equal(back.components if vector else back.values, fld.components if vector else fld.values)


def test_bad_json_is_an_input_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(io.InputError):
        io.read_json(p)


# ---------------------------------------------------------------------------
# cli


def test_distance_horizontal(capsys):
    code, rep, _ = run(capsys, "distance", 0, 0, 0, 1, 0, 0)
    assert code == 0 and rep["distance"] == pytest.approx(1.0, abs=1e-12) and rep["unique"]
    assert len(rep["config_hash"]) == 16


def test_distance_vertical_is_not_unique(capsys):
    code, rep, _ = run(capsys, "distance", 0, 0, 0, 0, 0, 1)
    assert code == 0 and rep["distance"] == pytest.approx(np.sqrt(4 * np.pi), abs=1e-12)
    assert rep["unique"] is False and rep["geodesic"]["selection_dependent"]


def test_distance_malformed(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["distance", "a", "b", "c", "1", "0", "0"])
    assert exc.value.code == 2


def test_geodesic_command(capsys):
    code, rep, _ = run(capsys, "geodesic", 0, 0, 0, 0.3, 0.1, 0.05, "--steps", 8)
    assert code == 0 and len(rep["points"]) == 9
    assert np.allclose(rep["points"][-1], [0.3, 0.1, 0.05], atol=1e-12)


def test_mk_single_pair(capsys, files, tmp_path):
    code, rep, _ = run(capsys, "mk", files["pair"], "--grid", 16, "--out", tmp_path / "mk")
    assert code == 0 and abs(rep["mk_value"] - rep["dp_value"]) <= 1e-8
    assert rep["mk_value"] == pytest.approx(0.5)
    for name in ("plan.json", "potential.json", "density_scalar.csv", "density_vector.csv", "report.json"):
        assert (tmp_path / "mk" / name).is_file()


def test_mk_identical_measures(capsys, files):
    code, rep, _ = run(capsys, "mk", files["same"], "--grid", 8)
    assert code == 0 and rep["mk_value"] == 0.0 and rep["dp_value"] == 0.0 and rep["bp_from_density"] == 0.0


def test_mk_missing_file(capsys, tmp_path):
    code, rep, err = run(capsys, "mk", tmp_path / "nope.json")
    assert code == 2 and rep is None and "no such file" in err


def test_beckmann_q2_matches_linear_oracle(capsys, files, tmp_path):
    code, rep, _ = run(capsys, "beckmann", files["pair"], *SMALL, "--out", tmp_path / "b")
    assert code == 0 and abs(rep["gap"]) <= 1e-6
    phi, header = io.read_field_csv(tmp_path / "b" / "phi0.csv")
    assert header["config_hash"] == rep["config_hash"]
    mu, nu = io.read_measures(files["pair"])
    ref = linear_oracle(mollified_source(mu, nu, 0.2, phi.grid))
    assert np.abs(phi.values - ref.values).max() <= 1e-7


def test_beckmann_zero_source(capsys, files):
    code, rep, _ = run(capsys, "beckmann", files["same"], *SMALL)
    assert code == 0 and rep["primal"] == 0.0 and rep["dual"] == 0.0


def test_beckmann_nonzero_mean_is_infeasible(capsys, tmp_path):
    g = Grid.from_spacing((-0.5,) * 3, (0.5,) * 3, 1 / 8)
    io.write_field_csv(tmp_path / "f.csv", GridField(g, np.ones(g.shape)))
    code, _, err = run(capsys, "beckmann", "--source", tmp_path / "f.csv", "--grid", 8)
    assert code == 3 and "zero mean" in err


def test_qlaplace(capsys, files):
    code, rep, _ = run(capsys, "qlaplace", files["pair"], *SMALL, "--q", 3)
    assert code == 0 and rep["weak_form_residual"] <= 1e-8
    code, _, _ = run(capsys, "qlaplace", files["pair"], *SMALL, "--q", 1.5)
    assert code == 2


def test_moser_zero_field(capsys, files):
    code, rep, _ = run(capsys, "moser", files["same"], *SMALL, "--samples", 200, "--steps", 5)
    assert code == 0 and rep["moser_l1"] == 0.0 and rep["congested_cost"] == 0.0


def test_moser_grid_exit_is_a_numerical_failure(capsys, files, monkeypatch):
    from heisenberg_transport import moser

    def leave(*args, **kwargs):
        raise FlowExitError("trajectory 7 left the grid")

    monkeypatch.setattr(moser, "build_traffic_plan", leave)
    code, _, err = run(capsys, "moser", files["pair"], *SMALL, "--samples", 10, "--steps", 2)
    assert code == 4 and "trajectory 7" in err


def test_outputs_are_byte_identical(capsys, files, tmp_path):
    for d in ("a", "b"):
        assert run(capsys, "moser", files["pair"], *SMALL, "--samples", 300, "--steps", 10,
                   "--out", tmp_path / d)[0] == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_selftest_subset(capsys):
    code, rep, err = run(capsys, "selftest", "--only", 2, 11)
    assert code == 0 and rep["passed"] == rep["total"] == 2
    assert "[PASS]  2" in err and "[PASS] 11" in err
