import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from b2dr import scenario
from b2dr.scenario import (
    ScenarioError,
    ego_to_global,
    global_to_ego,
    load_scenario,
    make_camera,
    make_ego_state,
    save_scenario,
    validate_scenario,
    wrap_angle,
)


def test_load_minimal_fixture(straight_path):
    log = load_scenario(straight_path)
    assert len(log.frames) >= 2
    assert log.rig.cameras[0].name == "front"
    assert validate_scenario(log) == []


def test_all_shipped_fixtures_validate(all_scenario_paths):
    for path in all_scenario_paths:
        assert validate_scenario(load_scenario(path)) == []


def test_unsorted_frame_times_error(straight_path, tmp_path):
    doc = json.load(open(straight_path))
    doc["frames"][1]["time"], doc["frames"][2]["time"] = (
        doc["frames"][2]["time"],
        doc["frames"][1]["time"],
    )
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(ScenarioError, match="frame 2"):
        load_scenario(str(bad))


def test_missing_file_and_bad_json(tmp_path):
    with pytest.raises(ScenarioError, match="missing.json"):
        load_scenario(str(tmp_path / "missing.json"))
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    with pytest.raises(ScenarioError, match="line 1"):
        load_scenario(str(bad))


def test_round_trip_is_fixed_point(all_scenario_paths, tmp_path):
    for i, path in enumerate(all_scenario_paths):
        log = load_scenario(path)
        # re-serialize next to the original so image paths stay resolvable
        copy = f"{path}.roundtrip{i}.json"
        save_scenario(log, copy)
        again = load_scenario(copy)
        assert again == log


def test_validate_polygon_needs_three_vertices(straight_log):
    from dataclasses import replace

    bad = scenario.MapElement(vertices=((0.0, 0.0), (1.0, 0.0)), class_id=0, kind="polygon")
    log = replace(straight_log, map_elements=straight_log.map_elements + (bad,))
    report = validate_scenario(log)
    assert any("polygon needs >=3 vertices" in v.rule for v in report)


def test_validate_self_intersecting_polygon(straight_log):
    from dataclasses import replace

    bowtie = scenario.MapElement(
        vertices=((0.0, 0.0), (2.0, 2.0), (2.0, 0.0), (0.0, 2.0)), class_id=0, kind="polygon"
    )
    log = replace(straight_log, map_elements=straight_log.map_elements + (bowtie,))
    assert any("self-intersecting" in v.rule for v in validate_scenario(log))


def test_validate_perturbed_camera_matrix(straight_log):
    from dataclasses import replace

    cam = straight_log.rig.cameras[0]
    K = np.array(cam.K)
    K[0, 1] += 1e-3
    bad_cam = replace(cam, K=scenario.to_mat4(K))
    log = replace(straight_log, rig=scenario.CameraRig((bad_cam,) + straight_log.rig.cameras[1:]))
    report = validate_scenario(log)
    assert [v for v in report if "K is not intrinsic @ extrinsic" in v.rule]
    assert any(cam.name in v.entity for v in report)


def test_camera_k_composition_within_tolerance():
    cam = make_camera("c", 100.0, 100.0, 200.0, 112.0, 400, 224, scenario.to_mat4(np.eye(4)))
    recomposed = cam.intrinsic_matrix() @ cam.extrinsic_matrix()
    assert np.allclose(recomposed, cam.k_matrix(), atol=1e-9)
    assert abs(np.linalg.det(cam.k_matrix())) > 1e-9


# ---------------------------------------------------------------------------
# transforms


def test_global_to_ego_identity():
    ego = make_ego_state((0.0, 0.0), 0.0)
    assert global_to_ego((3.0, 4.0), ego) == (3.0, 4.0)


def test_global_to_ego_rotation():
    ego = make_ego_state((10.0, 0.0), math.pi / 2)
    x, y = global_to_ego((10.0, 5.0), ego)
    assert abs(x - 5.0) < 1e-12 and abs(y) < 1e-12


def test_ego_to_global_trivials():
    ego = make_ego_state((2.0, 7.0), 0.0)
    assert ego_to_global((0.0, 0.0), ego) == (2.0, 7.0)
    assert ego_to_global((1.0, 0.0), ego) == (3.0, 7.0)


def test_transform_round_trip_many_points():
    rng = np.random.default_rng(3)
    for _ in range(20):
        ego = make_ego_state(tuple(rng.uniform(-50, 50, 2)), rng.uniform(-math.pi, math.pi))
        pts = rng.uniform(-100, 100, (50, 2))
        for p in pts:
            q = ego_to_global(global_to_ego(tuple(p), ego), ego)
            assert math.dist(p, q) < 1e-9


@settings(max_examples=60, deadline=None)
@given(
    hx=st.floats(-100, 100),
    hy=st.floats(-100, 100),
    heading=st.floats(-math.pi, math.pi - 1e-9),
    ax=st.floats(-100, 100),
    ay=st.floats(-100, 100),
    bx=st.floats(-100, 100),
    by=st.floats(-100, 100),
)
def test_transform_is_rigid(hx, hy, heading, ax, ay, bx, by):
    ego = make_ego_state((hx, hy), heading)
    pa = global_to_ego((ax, ay), ego)
    pb = global_to_ego((bx, by), ego)
    assert abs(math.dist(pa, pb) - math.dist((ax, ay), (bx, by))) < 1e-9


def test_ego_matrix_consistency():
    ego = make_ego_state((1.0, 2.0), 0.7)
    m = ego.global_matrix()
    p = m @ np.array([3.0, -1.0, 1.0])
    q = ego_to_global((3.0, -1.0), ego)
    assert np.allclose(p[:2], q, atol=1e-12)


def test_wrap_angle_range_and_idempotence():
    for a in np.linspace(-10, 10, 401):
        w = wrap_angle(a)
        assert -math.pi <= w < math.pi
        assert wrap_angle(w) == w  # exact no-op once in range


def test_3d_point_transform_keeps_z():
    ego = make_ego_state((5.0, -3.0), 1.1)
    p = global_to_ego((7.0, 2.0, 4.5), ego)
    assert p[2] == 4.5
    back = ego_to_global(p, ego)
    assert abs(back[0] - 7.0) < 1e-9 and abs(back[1] - 2.0) < 1e-9 and back[2] == 4.5
