import copy
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from mona.config import PipelineConfig, config_from_dict, config_to_dict
from mona.dynamic import FlowSampleSet, PointTrack
from mona.errors import SchemaError, ValidationError
from mona.formats import (
    detections_from_json,
    detections_to_json,
    dump_json,
    filtered_from_json,
    filtered_to_json,
    flow_from_json,
    flow_to_json,
    format_tum,
    groundtruth_from_json,
    groundtruth_to_json,
    load_json,
    masks_from_json,
    masks_to_json,
    parse_tum,
    read_scene,
    tracks_from_json,
    tracks_to_json,
    write_scene,
)
from mona.geometry import Pose, Trajectory
from mona.objects import BoundingBox, ObjectMask, filter_boxes

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def json_roundtrip(doc):
    return json.loads(json.dumps(doc, allow_nan=False))


@st.composite
def track_lists(draw):
    s = draw(st.integers(2, 6))
    d = draw(st.integers(1, 4))
    n = draw(st.integers(1, 5))
    out = []
    for i in range(n):
        out.append(PointTrack(
            track_id=i * 3 + 1,
            query_frame=draw(st.integers(0, s - 1)),
            positions=draw(st.lists(finite, min_size=2 * s, max_size=2 * s)),
            visibility=draw(st.lists(st.floats(0, 1), min_size=s, max_size=s)),
            features=np.array(draw(st.lists(finite, min_size=d * s, max_size=d * s))).reshape(d, s),
            is_anchor=draw(st.booleans()),
        ))
    return out


@given(track_lists())
def test_tracks_roundtrip(tracks):
    assert tracks_from_json(json_roundtrip(tracks_to_json(tracks))) == tracks


@given(st.lists(st.integers(0, 8), min_size=1, max_size=5), st.integers(0, 2**31))
def test_flow_roundtrip(sizes, seed):
    r = np.random.default_rng(seed)
    flow = [FlowSampleSet(t, r.normal(size=(n, 2)) * 100, r.normal(size=(n, 2))) for t, n in enumerate(sizes)]
    assert flow_from_json(json_roundtrip(flow_to_json(flow))) == flow


def test_detections_roundtrip():
    dets = [[BoundingBox(0, 1.5, 2, 30, 40, 3, 0.9, True)], [], [BoundingBox(2, 0, 0, 1, 1)]]
    got, w, h = detections_from_json(json_roundtrip(detections_to_json(dets, 64, 48)))
    assert (w, h) == (64, 48)
    assert got == dets


def test_filtered_roundtrip_keeps_infinite_thresholds():
    def boxes(t):
        return [BoundingBox(t, 0.0, 0.0, 10.0, 10.0), BoundingBox(t, 20.0, 20.0, 60.0, 60.0)]

    pts = np.array([[1, 1], [2, 2], [3, 3], [4, 4], [5, 5], [30, 30]], dtype=float)
    sets = [filter_boxes(boxes(0), pts, 5.0, 0), filter_boxes(boxes(1), pts[:2], 5.0, 1)]
    doc = json_roundtrip(filtered_to_json(sets))
    assert doc["frames"][1]["boxes"][0]["tau"] is None
    assert filtered_from_json(doc) == sets


@given(st.integers(1, 12), st.integers(1, 9), st.integers(0, 2**31))
def test_masks_roundtrip(w, h, seed):
    bitmap = np.random.default_rng(seed).random((h, w)) < 0.4
    masks = [ObjectMask.from_array(0, bitmap), ObjectMask.empty(1, w, h)]
    got = masks_from_json(json_roundtrip(masks_to_json(masks)))
    assert got == masks
    assert_array_equal(got[0].to_array(), bitmap)


def test_groundtruth_roundtrip(scene):
    k, ids, labels, oids, landmarks = groundtruth_from_json(json_roundtrip(groundtruth_to_json(scene)))
    assert k == scene.intrinsics
    assert ids == [t.track_id for t in scene.tracks]
    assert list(labels) == list(scene.gt_dynamic_labels)


def test_scene_directory_roundtrip(scene, tmp_path):
    write_scene(scene, tmp_path)
    back = read_scene(tmp_path)
    assert back.tracks == scene.tracks
    assert back.flow == scene.flow
    assert back.detections == scene.detections
    assert back.gt_trajectory == scene.gt_trajectory
    write_scene(back, tmp_path / "again")
    for name in ("tracks.json", "flow.json", "detections.json", "groundtruth.json", "trajectory_gt.txt"):
        assert (tmp_path / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_read_scene_missing_file(scene, tmp_path):
    write_scene(scene, tmp_path)
    (tmp_path / "flow.json").unlink()
    with pytest.raises(ValidationError, match="flow.json"):
        read_scene(tmp_path)


# ---------------------------------------------------------------------------
# strictness
# ---------------------------------------------------------------------------


@pytest.fixture
def tracks_doc():
    t = PointTrack(7, 0, [[1, 2], [3, 4]], [1, 1], [[0.5, 0.5]])
    return json_roundtrip(tracks_to_json([t]))


def test_unknown_field_rejected(tracks_doc):
    tracks_doc["tracks"][0]["colour"] = "red"
    with pytest.raises(SchemaError, match="colour") as exc:
        tracks_from_json(tracks_doc)
    assert exc.value.where == "tracks.json.tracks[0]"


def test_missing_field_rejected(tracks_doc):
    del tracks_doc["tracks"][0]["t_q"]
    with pytest.raises(SchemaError, match="t_q"):
        tracks_from_json(tracks_doc)


def test_out_of_range_visibility(tracks_doc):
    tracks_doc["tracks"][0]["visibility"][1] = 1.5
    with pytest.raises(SchemaError) as exc:
        tracks_from_json(tracks_doc)
    assert "visibility" in str(exc.value)


def test_wrong_format_tag(tracks_doc):
    tracks_doc["format"] = "mona.flow"
    with pytest.raises(SchemaError, match="mona.tracks"):
        tracks_from_json(tracks_doc)


def test_wrong_version(tracks_doc):
    tracks_doc["version"] = 2
    with pytest.raises(SchemaError, match="version"):
        tracks_from_json(tracks_doc)


def test_duplicate_track_ids(tracks_doc):
    tracks_doc["tracks"].append(copy.deepcopy(tracks_doc["tracks"][0]))
    with pytest.raises(SchemaError, match="duplicate"):
        tracks_from_json(tracks_doc)


def test_booleans_are_not_numbers(tracks_doc):
    tracks_doc["tracks"][0]["t_q"] = True
    with pytest.raises(SchemaError, match="t_q"):
        tracks_from_json(tracks_doc)


def test_invalid_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "a": [1, 2,\n}\n')
    with pytest.raises(SchemaError, match="line 3"):
        load_json(p)


def test_dump_rejects_nan(tmp_path):
    with pytest.raises(ValueError):
        dump_json({"x": float("nan")}, tmp_path / "x.json")


# ---------------------------------------------------------------------------
# TUM trajectories
# ---------------------------------------------------------------------------


def traj_strategy():
    pose = st.builds(
        lambda rv, tr: Pose.from_rotvec(rv, tr),
        st.lists(st.floats(-3, 3), min_size=3, max_size=3),
        st.lists(finite, min_size=3, max_size=3),
    )
    return st.lists(pose, min_size=1, max_size=6).flatmap(
        lambda poses: st.lists(st.integers(0, 50), min_size=len(poses), max_size=len(poses), unique=True).map(
            lambda fr: Trajectory.from_poses(poses, frames=sorted(fr))
        )
    )


@given(traj_strategy())
def test_tum_roundtrip_exact(traj):
    assert parse_tum(format_tum(traj)) == traj


def test_tum_plain_file_uses_line_order():
    text = "# comment\n0.5 1 2 3 0 0 0 1\n\n1.5 4 5 6 0 0 0 1\n"
    t = parse_tum(text)
    assert t.frames == (0, 1)
    assert t.timestamps == (0.5, 1.5)


@pytest.mark.parametrize(
    "text, line",
    [
        ("0 1 2 3 0 0 0 1\n0 1 2 3 0 0 1\n", 2),
        ("# x\n0 1 2 nan 0 0 0 1\n", 2),
        ("0 1 2 3 0 0 0 abc\n", 1),
        ("0 1 2 3 0 0 0 0\n", 1),
        ("# frames: 0 x\n", 1),
    ],
)
def test_tum_errors_name_line(text, line):
    with pytest.raises(SchemaError) as exc:
        parse_tum(text, "est.txt")
    assert exc.value.where == f"est.txt:{line}"


def test_tum_frames_directive_count_mismatch():
    with pytest.raises(SchemaError, match="frames directive"):
        parse_tum("# frames: 0 2 4\n0 1 2 3 0 0 0 1\n")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_config_roundtrip():
    cfg = PipelineConfig(seed=5)
    assert config_from_dict(json_roundtrip(config_to_dict(cfg))) == cfg


def test_config_defaults_from_empty():
    assert config_from_dict({}) == PipelineConfig()


@pytest.mark.parametrize(
    "doc, where",
    [
        ({"filter": {"tau0": 3}}, "config.filter"),
        ({"dynamic": {"lambda": "big"}}, "config.dynamic.lambda"),
        ({"scene": {"num_frames": 1}}, "config.scene"),
        ({"eval": {"align": "affine"}}, "config.eval"),
        ({"seed": -1}, "config.seed"),
        ({"scene": {"moving_objects": [{"box_dims": [1, 2]}]}}, "config.scene.moving_objects[0].box_dims"),
    ],
)
def test_config_errors_name_key(doc, where):
    with pytest.raises(SchemaError) as exc:
        config_from_dict(doc)
    assert exc.value.where == where
