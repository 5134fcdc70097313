import json
import math

import numpy as np
import pytest

import grca

SAMPLE = (
    '{"answer": "chair", "description": "a chair", "bbox2d": [1, 2, 30, 40], '
    '"bbox3d": [1, 2, 3, 40, 50, 60], "kpts2d": [[5, 6]], "kpts3d": [[1, 2, 3]]}'
)


def cube_camera():
    K = np.array([[100.0, 0, 100], [0, 100, 100], [0, 0, 1]])
    return grca.CameraCalibration(K, np.eye(3), np.array([0.0, 0, 5]))


def test_iou():
    a = grca.Box2D(0, 0, 2, 2)
    assert grca.iou_2d(a, grca.Box2D(1, 0, 3, 2)) == pytest.approx(1 / 3)
    c = grca.Box3D(0, 0, 0, 1, 1, 1)
    assert grca.iou_3d(c, c) == pytest.approx(1.0)
    assert grca.keypoint_containment_2d([[0.5, 0.5], [3, 3]], a) == pytest.approx(0.5)


def test_projection():
    box = grca.project_corners(grca.Box3D(-0.5, -0.5, -0.5, 0.5, 0.5, 0.5), cube_camera())
    assert box.x_min == pytest.approx(88.889, abs=1e-3)
    assert box.y_max == pytest.approx(111.111, abs=1e-3)
    with pytest.raises(ValueError):
        grca.CameraCalibration(np.eye(3) * 2, np.eye(3), np.zeros(3))


def test_quantization():
    assert grca.quantize(0.0) == 0
    assert grca.quantize(1.0) == 1000
    assert abs(grca.dequantize(grca.quantize(0.3337)) - 0.3337) <= 0.0005


def test_parse_and_roles():
    p = grca.parse_structured_output(SAMPLE)
    assert p["status"]["bbox2d"] == "ok"
    start, end = p["spans"]["bbox2d"]
    assert SAMPLE[start:end] == "[1, 2, 30, 40]"
    pieces = grca.tokenize(SAMPLE, "boundary")
    assert "".join(pieces) == SAMPLE
    roles = grca.token_roles(pieces)
    assert len(roles) == len(pieces)
    assert {"bbox2d", "bbox3d", "kpts2d", "kpts3d", "background"} <= set(roles)
    bad = grca.parse_structured_output('{"bbox3d": [1, 2]}')
    assert bad["status"]["bbox3d"] == "malformed"
    assert bad["spans"]["bbox3d"] is None


def test_routing():
    assert grca.standardize_group([0.0, 1.0])[1] == pytest.approx(0.9998, abs=1e-4)
    pieces = grca.tokenize(SAMPLE, "char")
    r0 = {"bbox2d": 0.0, "bbox3d": 1.0, "kpts2d": 0.0, "kpts3d": 1.0, "rpc": 0.0}
    r1 = {"bbox2d": 1.0, "bbox3d": 0.0, "kpts2d": 1.0, "kpts3d": 0.0, "rpc": 1.0}
    out = grca.route_group([(pieces, r0), (pieces, r1)])
    roles = grca.token_roles(pieces)
    a = 0.5 / (0.5 + 1e-4)
    for t, role in enumerate(roles):
        if role == "bbox2d":
            assert out["per_token"][0][t] == pytest.approx(-a)
            assert out["per_token"][1][t] == pytest.approx(a)
    same = grca.route_group([(pieces, r0), (pieces, r0)], mode="broadcast")
    assert all(v == 0.0 for row in same["per_token"] for v in row)


def test_simulate_small():
    c = grca.SimConfig()
    c.scene_count = 6
    c.scenes_per_step = 3
    c.steps = 2
    c.warmup_steps = 5
    report = grca.simulate(c)
    assert report["config"]["scenes"] == 6
    assert len(report["curve"]) >= 2
    assert math.isfinite(report["final"]["kpa_3d"])
    assert report == grca.simulate(c)
    c.lambda_ = 1.5
    with pytest.raises(ValueError, match="lambda"):
        grca.simulate(c)


def test_variance_small():
    c = grca.SimConfig()
    c.scene_count = 4
    c.scenes_per_step = 2
    c.warmup_steps = 5
    study = grca.analyze_variance(c, mid_steps=1, rollouts=64)
    for field in ("bbox2d", "bbox3d", "kpts2d", "kpts3d"):
        assert study["fields"][field]["identity_residual"] <= 1e-9


def test_score_round_trip(tmp_path):
    gt = tmp_path / "gt.jsonl"
    line = json.loads(SAMPLE)
    line["id"] = "a"
    gt.write_text(json.dumps(line) + "\n")
    calib = tmp_path / "calib.json"
    calib.write_text(json.dumps({"K": [100, 0, 100, 0, 100, 100, 0, 0, 1],
                                 "R": [1, 0, 0, 0, 1, 0, 0, 0, 1], "t": [0, 0, 5]}))
    report = grca.score(gt, gt, calib)
    assert report["aggregate"]["iou_2d"] == 1.0
    assert report["matched"] == 1
