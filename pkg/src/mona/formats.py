"""On-disk formats.

Structured artifacts are single JSON objects tagged with ``format`` and
``version``; trajectories are TUM text (``timestamp tx ty tz qx qy qz qw``).
Readers are strict: unknown keys, missing keys and out-of-range values raise
:class:`~mona.errors.SchemaError` naming the offending record and field.
Floats are written with ``repr`` precision so every writer/reader pair
round-trips exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .dynamic import DynamicScore, FlowFrameStats, FlowSampleSet, PointTrack
from .errors import SchemaError, ValidationError
from .geometry import CameraIntrinsics, Pose, Trajectory
from .objects import BoundingBox, BoxDynamics, FilteredBoxSet, ObjectMask

VERSION = 1

TRACKS_FILE = "tracks.json"
FLOW_FILE = "flow.json"
DETECTIONS_FILE = "detections.json"
GROUNDTRUTH_FILE = "groundtruth.json"
GT_TRAJECTORY_FILE = "trajectory_gt.txt"
DYNAMIC_FILE = "dynamic.json"
FILTERED_FILE = "filtered.json"
MASKS_FILE = "masks.json"


# ---------------------------------------------------------------------------
# strict-schema helpers
# ---------------------------------------------------------------------------


def _fields(obj: Any, where: str, required: Iterable[str], optional: Iterable[str] = ()) -> dict:
    if not isinstance(obj, dict):
        raise SchemaError("expected an object", where)
    required, optional = set(required), set(optional)
    unknown = sorted(set(obj) - required - optional)
    if unknown:
        raise SchemaError(f"unknown field(s) {unknown}", where)
    missing = sorted(required - set(obj))
    if missing:
        raise SchemaError(f"missing field(s) {missing}", where)
    return obj


def _num(v: Any, where: str, lo: float | None = None, hi: float | None = None, strict_lo: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(f"expected a finite number, got {v!r}", where)
    v = float(v)
    if lo is not None and (v <= lo if strict_lo else v < lo):
        raise SchemaError(f"value {v!r} must be {'>' if strict_lo else '>='} {lo}", where)
    if hi is not None and v > hi:
        raise SchemaError(f"value {v!r} must be <= {hi}", where)
    return v


def _int(v: Any, where: str, lo: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"expected an integer, got {v!r}", where)
    if lo is not None and v < lo:
        raise SchemaError(f"value {v} must be >= {lo}", where)
    return v


def _bool(v: Any, where: str) -> bool:
    if not isinstance(v, bool):
        raise SchemaError(f"expected true/false, got {v!r}", where)
    return v


def _vec(v: Any, n: int, where: str) -> list[float]:
    if not isinstance(v, list) or len(v) != n:
        raise SchemaError(f"expected a list of {n} numbers", where)
    return [_num(x, f"{where}[{i}]") for i, x in enumerate(v)]


def _list(v: Any, where: str) -> list:
    if not isinstance(v, list):
        raise SchemaError("expected a list", where)
    return v


def _header(doc: Any, kind: str, where: str, required: Iterable[str], optional: Iterable[str] = ()) -> dict:
    doc = _fields(doc, where, {"format", "version", *required}, optional)
    if doc["format"] != f"mona.{kind}":
        raise SchemaError(f"expected format 'mona.{kind}', got {doc['format']!r}", where)
    if doc["version"] != VERSION:
        raise SchemaError(f"unsupported version {doc['version']!r}", where)
    return doc


def _doc(kind: str, **body) -> dict:
    return {"format": f"mona.{kind}", "version": VERSION, **body}


def dump_json(doc: Any, path: str | Path) -> None:
    text = json.dumps(doc, indent=1, sort_keys=False, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_json(path: str | Path) -> Any:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", str(path)) from None


def _opt_float(x: float | None):
    return None if x is None or not math.isfinite(x) else float(x)


# ---------------------------------------------------------------------------
# tracks
# ---------------------------------------------------------------------------


def tracks_to_json(tracks: Sequence[PointTrack]) -> dict:
    s = tracks[0].num_frames if tracks else 0
    return _doc(
        "tracks",
        num_frames=s,
        tracks=[
            {
                "track_id": tr.track_id,
                "t_q": tr.query_frame,
                "positions": tr.positions.tolist(),
                "visibility": tr.visibility.tolist(),
                "features": tr.features.tolist(),
                "is_anchor": tr.is_anchor,
            }
            for tr in tracks
        ],
    )


def tracks_from_json(doc: Any, where: str = TRACKS_FILE) -> list[PointTrack]:
    doc = _header(doc, "tracks", where, {"num_frames", "tracks"})
    s = _int(doc["num_frames"], f"{where}.num_frames", 2)
    out = []
    seen = set()
    for i, rec in enumerate(_list(doc["tracks"], f"{where}.tracks")):
        w = f"{where}.tracks[{i}]"
        rec = _fields(rec, w, {"track_id", "t_q", "positions", "visibility", "features", "is_anchor"})
        tid = _int(rec["track_id"], f"{w}.track_id", 0)
        if tid in seen:
            raise SchemaError(f"duplicate track_id {tid}", w)
        seen.add(tid)
        pos = _list(rec["positions"], f"{w}.positions")
        vis = _list(rec["visibility"], f"{w}.visibility")
        if len(pos) != s or len(vis) != s:
            raise SchemaError(f"positions/visibility must have {s} entries (got {len(pos)}/{len(vis)})", w)
        positions = [_vec(p, 2, f"{w}.positions[{j}]") for j, p in enumerate(pos)]
        visibility = [_num(v, f"{w}.visibility[{j}]", 0.0, 1.0) for j, v in enumerate(vis)]
        feats = _list(rec["features"], f"{w}.features")
        if not feats:
            raise SchemaError("features must have at least one row", f"{w}.features")
        features = [_vec(r, s, f"{w}.features[{j}]") for j, r in enumerate(feats)]
        t_q = _int(rec["t_q"], f"{w}.t_q", 0)
        if t_q >= s:
            raise SchemaError(f"t_q {t_q} outside the {s}-frame window", f"{w}.t_q")
        out.append(PointTrack(tid, t_q, positions, visibility, features, _bool(rec["is_anchor"], f"{w}.is_anchor")))
    return out


# ---------------------------------------------------------------------------
# flow
# ---------------------------------------------------------------------------


def flow_to_json(flow: Sequence[FlowSampleSet]) -> dict:
    return _doc(
        "flow",
        frames=[
            {"t": fs.t, "samples": [{"x": p, "u": u} for p, u in zip(fs.positions.tolist(), fs.flows.tolist())]}
            for fs in flow
        ],
    )


def flow_from_json(doc: Any, where: str = FLOW_FILE) -> list[FlowSampleSet]:
    doc = _header(doc, "flow", where, {"frames"})
    out = []
    for i, fr in enumerate(_list(doc["frames"], f"{where}.frames")):
        w = f"{where}.frames[{i}]"
        fr = _fields(fr, w, {"t", "samples"})
        pos, flo = [], []
        for j, smp in enumerate(_list(fr["samples"], f"{w}.samples")):
            ws = f"{w}.samples[{j}]"
            smp = _fields(smp, ws, {"x", "u"})
            pos.append(_vec(smp["x"], 2, f"{ws}.x"))
            flo.append(_vec(smp["u"], 2, f"{ws}.u"))
        out.append(FlowSampleSet(_int(fr["t"], f"{w}.t", 0), pos, flo))
    return out


# ---------------------------------------------------------------------------
# detections / boxes
# ---------------------------------------------------------------------------


def _box_json(b: BoundingBox) -> dict:
    d = {"xyxy": list(b.xyxy), "class_id": b.class_id, "score": b.score}
    if b.gt_moving is not None:
        d["gt_moving"] = b.gt_moving
    return d


def _box_from(rec: Any, t: int, w: str, extra: Iterable[str] = ()) -> tuple[BoundingBox, dict]:
    rec = _fields(rec, w, {"xyxy", "class_id", "score", *extra}, {"gt_moving"})
    x0, y0, x1, y1 = _vec(rec["xyxy"], 4, f"{w}.xyxy")
    if not (x0 < x1 and y0 < y1):
        raise SchemaError("box must have x_min < x_max and y_min < y_max", f"{w}.xyxy")
    gm = rec.get("gt_moving")
    box = BoundingBox(t, x0, y0, x1, y1, _int(rec["class_id"], f"{w}.class_id"),
                      _num(rec["score"], f"{w}.score", 0.0, 1.0),
                      None if gm is None else _bool(gm, f"{w}.gt_moving"))
    return box, rec


def detections_to_json(detections: Sequence[Sequence[BoundingBox]], width: int, height: int) -> dict:
    return _doc(
        "detections",
        width=width,
        height=height,
        frames=[{"t": t, "boxes": [_box_json(b) for b in boxes]} for t, boxes in enumerate(detections)],
    )


def detections_from_json(doc: Any, where: str = DETECTIONS_FILE) -> tuple[list[list[BoundingBox]], int, int]:
    doc = _header(doc, "detections", where, {"width", "height", "frames"})
    width = _int(doc["width"], f"{where}.width", 1)
    height = _int(doc["height"], f"{where}.height", 1)
    frames = []
    for i, fr in enumerate(_list(doc["frames"], f"{where}.frames")):
        w = f"{where}.frames[{i}]"
        fr = _fields(fr, w, {"t", "boxes"})
        t = _int(fr["t"], f"{w}.t", 0)
        if t != i:
            raise SchemaError(f"frames must be listed in order; expected t={i}", f"{w}.t")
        frames.append([_box_from(b, t, f"{w}.boxes[{j}]")[0] for j, b in enumerate(_list(fr["boxes"], f"{w}.boxes"))])
    return frames, width, height


def filtered_to_json(sets: Sequence[FilteredBoxSet]) -> dict:
    tau_0 = sets[0].tau_0 if sets else None
    frames = []
    for fs in sets:
        boxes = []
        for i, bd in enumerate(fs.boxes):
            d = _box_json(bd.box)
            d.update(count=bd.count, tau=_opt_float(bd.tau), kept=i in fs.kept_indices)
            boxes.append(d)
        frames.append({"t": fs.t, "unit_index": fs.unit_index, "boxes": boxes})
    return _doc("filtered", tau_0=tau_0, frames=frames)


def filtered_from_json(doc: Any, where: str = FILTERED_FILE) -> list[FilteredBoxSet]:
    doc = _header(doc, "filtered", where, {"tau_0", "frames"})
    frames = _list(doc["frames"], f"{where}.frames")
    tau_0 = None if doc["tau_0"] is None and not frames else _num(doc["tau_0"], f"{where}.tau_0", 0.0, strict_lo=True)
    out = []
    for i, fr in enumerate(frames):
        w = f"{where}.frames[{i}]"
        fr = _fields(fr, w, {"t", "unit_index", "boxes"})
        t = _int(fr["t"], f"{w}.t", 0)
        boxes, kept = [], []
        for j, rec in enumerate(_list(fr["boxes"], f"{w}.boxes")):
            wb = f"{w}.boxes[{j}]"
            box, rec = _box_from(rec, t, wb, ("count", "tau", "kept"))
            tau = math.inf if rec["tau"] is None else _num(rec["tau"], f"{wb}.tau", 0.0)
            boxes.append(BoxDynamics(box, _int(rec["count"], f"{wb}.count", 0), tau))
            if _bool(rec["kept"], f"{wb}.kept"):
                kept.append(j)
        u = fr["unit_index"]
        if u is not None:
            u = _int(u, f"{w}.unit_index", 0)
            if u >= len(boxes):
                raise SchemaError(f"unit_index {u} out of range", f"{w}.unit_index")
        out.append(FilteredBoxSet(t, tau_0, tuple(boxes), tuple(kept), u))
    return out


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


def masks_to_json(masks: Sequence[ObjectMask]) -> dict:
    w = masks[0].width if masks else 0
    h = masks[0].height if masks else 0
    return _doc("masks", width=w, height=h,
                frames=[{"t": m.t, "rows": [list(r) for r in m.rows]} for m in masks])


def masks_from_json(doc: Any, where: str = MASKS_FILE) -> list[ObjectMask]:
    doc = _header(doc, "masks", where, {"width", "height", "frames"})
    frames = _list(doc["frames"], f"{where}.frames")
    if not frames:
        return []
    width = _int(doc["width"], f"{where}.width", 1)
    height = _int(doc["height"], f"{where}.height", 1)
    out = []
    for i, fr in enumerate(frames):
        w = f"{where}.frames[{i}]"
        fr = _fields(fr, w, {"t", "rows"})
        rows = _list(fr["rows"], f"{w}.rows")
        if len(rows) != height:
            raise SchemaError(f"expected {height} rows, got {len(rows)}", f"{w}.rows")
        parsed = []
        for r, runs in enumerate(rows):
            runs = _list(runs, f"{w}.rows[{r}]")
            vals = tuple(_int(x, f"{w}.rows[{r}]", 0) for x in runs)
            if sum(vals) != width:
                raise SchemaError(f"runs sum to {sum(vals)}, expected width {width}", f"{w}.rows[{r}]")
            parsed.append(vals)
        out.append(ObjectMask(_int(fr["t"], f"{w}.t", 0), width, height, tuple(parsed)))
    return out


# ---------------------------------------------------------------------------
# dynamic points
# ---------------------------------------------------------------------------


def dynamic_to_json(scores: Sequence[DynamicScore], stats: Sequence[FlowFrameStats],
                    tracks: Sequence[PointTrack], config: dict) -> dict:
    by_id = {tr.track_id: tr for tr in tracks}
    s = tracks[0].num_frames if tracks else 0
    frames = []
    for t in range(s):
        pts = [{"track_id": sc.track_id, "xy": by_id[sc.track_id].positions[t].tolist()} for sc in scores if sc.flags[t]]
        frames.append({"t": t, "points": pts})
    return _doc(
        "dynamic",
        config=config,
        flow_stats=[{"t": st.t, "mean_magnitude": st.mean_magnitude, "threshold": st.threshold} for st in stats],
        scores=[{"track_id": sc.track_id, "p": sc.p, "flags": [int(f) for f in sc.flags]} for sc in scores],
        frames=frames,
    )


def dynamic_from_json(doc: Any, where: str = DYNAMIC_FILE):
    """Returns ``(scores, flow_stats, points_per_frame, config)``."""
    doc = _header(doc, "dynamic", where, {"config", "flow_stats", "scores", "frames"})
    stats = []
    for i, rec in enumerate(_list(doc["flow_stats"], f"{where}.flow_stats")):
        w = f"{where}.flow_stats[{i}]"
        rec = _fields(rec, w, {"t", "mean_magnitude", "threshold"})
        stats.append(FlowFrameStats(_int(rec["t"], f"{w}.t", 0), _num(rec["mean_magnitude"], f"{w}.mean_magnitude", 0.0),
                                    _num(rec["threshold"], f"{w}.threshold", 0.0)))
    scores = []
    for i, rec in enumerate(_list(doc["scores"], f"{where}.scores")):
        w = f"{where}.scores[{i}]"
        rec = _fields(rec, w, {"track_id", "p", "flags"})
        p = None if rec["p"] is None else _num(rec["p"], f"{w}.p", 0.0, 1.0)
        flags = tuple(bool(_int(f, f"{w}.flags", 0)) for f in _list(rec["flags"], f"{w}.flags"))
        scores.append(DynamicScore(_int(rec["track_id"], f"{w}.track_id", 0), p, flags))
    points = []
    for i, fr in enumerate(_list(doc["frames"], f"{where}.frames")):
        w = f"{where}.frames[{i}]"
        fr = _fields(fr, w, {"t", "points"})
        pts = []
        for j, p in enumerate(_list(fr["points"], f"{w}.points")):
            p = _fields(p, f"{w}.points[{j}]", {"track_id", "xy"})
            pts.append((_int(p["track_id"], f"{w}.points[{j}].track_id", 0), _vec(p["xy"], 2, f"{w}.points[{j}].xy")))
        points.append(pts)
    if not isinstance(doc["config"], dict):
        raise SchemaError("expected an object", f"{where}.config")
    return scores, stats, points, doc["config"]


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


def intrinsics_to_json(k: CameraIntrinsics) -> dict:
    return {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height}


def intrinsics_from_json(d: Any, where: str) -> CameraIntrinsics:
    d = _fields(d, where, {"fx", "fy", "cx", "cy", "width", "height"})
    try:
        return CameraIntrinsics(
            _num(d["fx"], f"{where}.fx", 0.0, strict_lo=True), _num(d["fy"], f"{where}.fy", 0.0, strict_lo=True),
            _num(d["cx"], f"{where}.cx"), _num(d["cy"], f"{where}.cy"),
            _int(d["width"], f"{where}.width", 1), _int(d["height"], f"{where}.height", 1),
        )
    except SchemaError:
        raise
    except ValidationError as exc:
        raise SchemaError(str(exc), where) from None


def groundtruth_to_json(scene) -> dict:
    return _doc(
        "groundtruth",
        intrinsics=intrinsics_to_json(scene.intrinsics),
        labels=[
            {"track_id": tr.track_id, "dynamic": bool(lab), "object_id": int(oid)}
            for tr, lab, oid in zip(scene.tracks, scene.gt_dynamic_labels, scene.object_ids)
        ],
        landmarks=scene.landmarks.tolist(),
    )


def groundtruth_from_json(doc: Any, where: str = GROUNDTRUTH_FILE):
    """Returns ``(intrinsics, labels, object_ids, landmarks)`` in track order."""
    doc = _header(doc, "groundtruth", where, {"intrinsics", "labels", "landmarks"})
    k = intrinsics_from_json(doc["intrinsics"], f"{where}.intrinsics")
    labels, oids, ids = [], [], []
    for i, rec in enumerate(_list(doc["labels"], f"{where}.labels")):
        w = f"{where}.labels[{i}]"
        rec = _fields(rec, w, {"track_id", "dynamic", "object_id"})
        ids.append(_int(rec["track_id"], f"{w}.track_id", 0))
        labels.append(_bool(rec["dynamic"], f"{w}.dynamic"))
        oids.append(_int(rec["object_id"], f"{w}.object_id", -1))
    lm = _list(doc["landmarks"], f"{where}.landmarks")
    if len(lm) != len(labels):
        raise SchemaError(f"{len(lm)} landmark tracks for {len(labels)} labels", f"{where}.landmarks")
    arr = np.array(lm, dtype=np.float64) if lm else np.zeros((0, 0, 3))
    if arr.ndim != 3 or arr.shape[2] != 3 or not np.all(np.isfinite(arr)):
        raise SchemaError("landmarks must be tracks x frames x 3 finite numbers", f"{where}.landmarks")
    return k, ids, labels, oids, arr


# ---------------------------------------------------------------------------
# TUM trajectories
# ---------------------------------------------------------------------------

_FRAMES_DIRECTIVE = "# frames:"


def format_tum(traj: Trajectory) -> str:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    if traj.frames != tuple(range(len(traj))):
        # other TUM tools skip this as a comment
        lines.append(_FRAMES_DIRECTIVE + " " + " ".join(str(f) for f in traj.frames))
    for ts, pose in zip(traj.timestamps, traj.poses):
        vals = [ts, *pose.translation.tolist(), *pose.rotation.tolist()]
        lines.append(" ".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def parse_tum(text: str, where: str = "trajectory") -> Trajectory:
    """Parse TUM text; frame indices follow line order unless a ``# frames:`` line is present."""
    frames = None
    stamps, poses = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith(_FRAMES_DIRECTIVE):
            try:
                frames = [int(x) for x in s[len(_FRAMES_DIRECTIVE):].split()]
            except ValueError:
                raise SchemaError("malformed frames directive", f"{where}:{lineno}") from None
            continue
        if s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 8:
            raise SchemaError(f"expected 8 columns, got {len(parts)}", f"{where}:{lineno}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise SchemaError("non-numeric value", f"{where}:{lineno}") from None
        if not all(math.isfinite(v) for v in vals):
            raise SchemaError("non-finite value", f"{where}:{lineno}")
        try:
            poses.append(Pose(vals[4:8], vals[1:4]))
        except ValidationError as exc:
            raise SchemaError(str(exc), f"{where}:{lineno}") from None
        stamps.append(vals[0])
    if frames is None:
        frames = list(range(len(poses)))
    if len(frames) != len(poses):
        raise SchemaError(f"frames directive lists {len(frames)} indices for {len(poses)} poses", where)
    try:
        return Trajectory(tuple(frames), tuple(poses), tuple(stamps))
    except ValidationError as exc:
        raise SchemaError(str(exc), where) from None


def write_tum(traj: Trajectory, path: str | Path) -> None:
    Path(path).write_text(format_tum(traj), encoding="utf-8")


def read_tum(path: str | Path) -> Trajectory:
    return parse_tum(Path(path).read_text(encoding="utf-8"), str(path))


# ---------------------------------------------------------------------------
# whole scene packages
# ---------------------------------------------------------------------------


def write_scene(scene, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = scene.intrinsics
    paths = [out / TRACKS_FILE, out / FLOW_FILE, out / DETECTIONS_FILE, out / GT_TRAJECTORY_FILE, out / GROUNDTRUTH_FILE]
    dump_json(tracks_to_json(scene.tracks), paths[0])
    dump_json(flow_to_json(scene.flow), paths[1])
    dump_json(detections_to_json(scene.detections, k.width, k.height), paths[2])
    write_tum(scene.gt_trajectory, paths[3])
    dump_json(groundtruth_to_json(scene), paths[4])
    return paths


def read_scene(in_dir: str | Path):
    """Load a scene package written by :func:`write_scene` (without its generator config)."""
    from .scene import ScenePackage

    d = Path(in_dir)

    for name in (TRACKS_FILE, FLOW_FILE, DETECTIONS_FILE, GT_TRAJECTORY_FILE, GROUNDTRUTH_FILE):
        if not (d / name).is_file():
            raise ValidationError(f"missing input file {str(d / name)!r}")

    def read(parse, name):
        return parse(load_json(d / name), str(d / name))

    tracks = read(tracks_from_json, TRACKS_FILE)
    flow = read(flow_from_json, FLOW_FILE)
    detections, _, _ = read(detections_from_json, DETECTIONS_FILE)
    traj = read_tum(d / GT_TRAJECTORY_FILE)
    k, ids, labels, oids, landmarks = read(groundtruth_from_json, GROUNDTRUTH_FILE)
    if ids != [t.track_id for t in tracks]:
        raise SchemaError("label track ids do not match tracks file order", GROUNDTRUTH_FILE)
    if landmarks.size and landmarks.shape[1] != len(traj):
        raise SchemaError("landmark frame count differs from trajectory length", GROUNDTRUTH_FILE)
    return ScenePackage(k, traj, tracks, labels, oids, landmarks, flow, detections)
