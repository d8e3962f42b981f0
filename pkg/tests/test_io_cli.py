import json
from dataclasses import replace

import numpy as np
import pytest

from innergeo import io
from innergeo.cli import main
from innergeo.errors import FormatError
from innergeo.fit import FitConfig
from innergeo.gradcheck import small_scene_spec
from innergeo.synthetic import gen_scene, init_student_state


def test_float_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(3, 4)) * 1e-3
    x[0, 0] = 0.1
    io.write_document(tmp_path / "a.json", "blob", {"x": x, "flag": np.array([True, False]), "k": 3, "u": 1.0})
    doc = io.read_document(tmp_path / "a.json", "blob")
    assert np.array_equal(io._array(doc, "x"), x)
    assert io._array(doc, "flag").tolist() == [True, False]
    assert doc["k"] == 3 and doc["u"] == 1.0 and isinstance(doc["u"], float)
    text = (tmp_path / "a.json").read_text()
    assert '"format_version": 1' in text and "0.10000000000000001" in text


def test_scene_and_state_round_trip(tmp_path):
    scene = gen_scene(small_scene_spec(1))
    io.save_scene(tmp_path / "s.json", scene)
    back = io.load_scene(tmp_path / "s.json")
    assert io.dumps(io.scene_to_doc(back)) == io.dumps(io.scene_to_doc(scene))
    state = init_student_state(scene, scene.spec, "random")
    io.save_state(tmp_path / "st.json", state)
    again = io.load_state(tmp_path / "st.json", scene.spec.bev)
    assert all(np.array_equal(a.probs, b.probs) for a, b in zip(state.depth_maps, again.depth_maps))


def test_config_documents(tmp_path):
    cfg = FitConfig(steps=12, learning_rate=0.5)
    io.write_document(tmp_path / "c.json", "fit_config", io.fit_config_to_doc(cfg))
    assert io.load_fit_config(tmp_path / "c.json") == cfg
    (tmp_path / "bad.json").write_text(json.dumps({"format_version": 1, "kind": "fit_config", "stepz": 3}))
    with pytest.raises(FormatError) as exc:
        io.load_fit_config(tmp_path / "bad.json")
    assert exc.value.field == "stepz"
    (tmp_path / "bad2.json").write_text(json.dumps({"format_version": 1, "kind": "fit_config", "weights": {"w_ic": -1}}))
    with pytest.raises(FormatError):
        io.load_fit_config(tmp_path / "bad2.json")


def write_small_spec(path, seed=3):
    spec = replace(small_scene_spec(seed), target_amplitude=4.0, background_amplitude=0.5)
    io.write_document(path, "scene_spec", io.scene_spec_to_doc(spec))
    return spec


def run(argv):
    return main([str(a) for a in argv])


def test_full_cli_pipeline_is_reproducible(tmp_path, capsys):
    write_small_spec(tmp_path / "spec.json")
    for run_dir in ("r1", "r2"):
        out = tmp_path / run_dir
        assert run(["gen", "--config", tmp_path / "spec.json", "--out", out]) == 0
        assert run(["losses", "--scene", out / "scene.json", "--out", out]) == 0
        assert run(["init", "--scene", out / "scene.json", "--init", "random", "--out", out]) == 0
        assert run(["losses", "--scene", out / "scene.json", "--state", out / "state.json",
                    "--weights", "1,1,1,0.5,0.5", "--out", out / "l2"]) == 0
        assert run(["fit", "--scene", out / "scene.json", "--steps", 40, "--lr", 0.02,
                    "--seed", 4, "--out", out / "fit"]) == 0
        assert run(["gradcheck", "--instances", 2, "--coords", 10, "--out", out]) == 0
    names = ["scene.json", "losses.json", "state.json", "l2/losses.json", "fit/trace.json", "fit/report.json",
             "fit/state.json", "gradcheck.json"]
    for name in names:
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes(), name
    report = io.read_document(tmp_path / "r1" / "losses.json", "loss_report")
    assert report["terms"]["inner_depth"] > 0
    trace = io.read_document(tmp_path / "r1" / "fit" / "trace.json", "fit_trace")
    assert trace["status"] == "ok" and trace["records"][-1]["total"] < trace["records"][0]["total"]
    grad = io.read_document(tmp_path / "r1" / "gradcheck.json", "gradcheck_report")
    assert all(row["max_rel_error"] < 1e-5 for row in grad["rows"])


def test_gen_seed_override(tmp_path):
    write_small_spec(tmp_path / "spec.json")
    assert run(["gen", "--config", tmp_path / "spec.json", "--seed", 9, "--out", tmp_path]) == 0
    assert io.load_scene(tmp_path / "scene.json").spec.seed == 9


def depth_doc(path, depth, valid=None):
    body = {"depth": np.asarray(depth, dtype=float)}
    if valid is not None:
        body["valid"] = np.asarray(valid, dtype=bool)
    io.write_document(path, "depth_values", body)


def test_metrics_command(tmp_path):
    depth_doc(tmp_path / "gt.json", [[2.0, 5.0], [9.0, 0.0]], [[True, True], [True, False]])
    assert run(["metrics", "--pred", tmp_path / "gt.json", "--gt", tmp_path / "gt.json", "--out", tmp_path / "m"]) == 0
    rep = io.read_document(tmp_path / "m" / "metrics.json", "metric_report")
    assert rep["rmse"] == rep["abs_rel"] == rep["silog"] == 0 and rep["delta1"] == 1 and rep["n"] == 3
    depth_doc(tmp_path / "pred.json", [[4.0, 10.0], [18.0, 1.0]])
    assert run(["metrics", "--pred", tmp_path / "pred.json", "--gt", tmp_path / "gt.json", "--out", tmp_path / "m2"]) == 0
    rep = io.read_document(tmp_path / "m2" / "metrics.json", "metric_report")
    assert rep["abs_rel"] == 1.0


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"]


def test_malformed_input_exits_2(tmp_path, capsys):
    (tmp_path / "x.json").write_text("{ not json")
    assert run(["metrics", "--pred", tmp_path / "x.json", "--gt", tmp_path / "x.json"]) == 2
    assert error_of(capsys)["kind"] == "format_error"
    (tmp_path / "y.json").write_text(json.dumps({"format_version": 1, "kind": "depth_values"}))
    assert run(["metrics", "--pred", tmp_path / "y.json", "--gt", tmp_path / "y.json"]) == 2
    assert error_of(capsys)["field"] == "depth"
    (tmp_path / "spec.json").write_text(json.dumps({"format_version": 1, "kind": "scene_spec", "bins": {"K": "many"}}))
    assert run(["gen", "--config", tmp_path / "spec.json", "--out", tmp_path]) == 2
    assert error_of(capsys)["field"] == "bins"
    assert run(["losses", "--scene", tmp_path / "missing.json"]) == 2


def test_numeric_domain_error_exits_3(tmp_path, capsys):
    depth_doc(tmp_path / "gt.json", [1.0, -2.0])
    assert run(["metrics", "--pred", tmp_path / "gt.json", "--gt", tmp_path / "gt.json", "--out", tmp_path]) == 3
    assert error_of(capsys)["kind"] == "domain_error"
    (tmp_path / "spec.json").write_text(json.dumps({"format_version": 1, "kind": "scene_spec",
                                                    "length_range": [60, 70]}))
    assert run(["gen", "--config", tmp_path / "spec.json", "--out", tmp_path]) == 3
