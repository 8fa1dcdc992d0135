"""File-to-file pipeline stages.

Each stage reads its inputs from disk and writes its outputs to an output
directory, so running the stages one by one and running :func:`run_pipeline`
produce identical bytes. Inputs are looked up first in ``in_dir`` and then in
``out_dir``.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import FilterConfig, PipelineConfig, config_to_dict, dynamic_to_dict
from .dynamic import DynamicConfig, classify_dynamic_points, f1_score, flow_frame_stats
from .errors import ValidationError
from .evaluation import (
    aligned_errors,
    build_observations,
    compare_masked_vs_unmasked,
    trajectory_metrics,
)
from .formats import (
    DETECTIONS_FILE,
    DYNAMIC_FILE,
    FILTERED_FILE,
    FLOW_FILE,
    MASKS_FILE,
    TRACKS_FILE,
    detections_from_json,
    dump_json,
    dynamic_from_json,
    dynamic_to_json,
    filtered_from_json,
    filtered_to_json,
    flow_from_json,
    load_json,
    masks_from_json,
    masks_to_json,
    read_scene,
    read_tum,
    tracks_from_json,
    write_scene,
    write_tum,
)
from .objects import BoxSegmenter, filter_boxes, rasterize_masks
from .scene import generate_scene

log = logging.getLogger("mona")

REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
PLOT_DATA = "plot_data.txt"
UNMASKED_TRAJ = "trajectory_unmasked.txt"
MASKED_TRAJ = "trajectory_masked.txt"
BATCH_JSON = "batch_summary.json"

# significant digits kept in reports so golden files survive last-ulp BLAS differences
REPORT_DIGITS = 9


def _find(name: str, *dirs: str | Path | None) -> Path:
    for d in dirs:
        if d is not None and (Path(d) / name).is_file():
            return Path(d) / name
    searched = ", ".join(str(d) for d in dirs if d is not None)
    raise ValidationError(f"missing input file {name!r} (searched {searched})")


def _read(parse, name: str, *dirs):
    path = _find(name, *dirs)
    return parse(load_json(path), str(path))


def _round(x):
    if isinstance(x, float):
        if not math.isfinite(x):
            return None
        # absolute floor first so round-off noise around zero prints as 0
        return float(f"{round(x, 12) + 0.0:.{REPORT_DIGITS}g}")
    if isinstance(x, dict):
        return {k: _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    return x


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def run_simulate(cfg: PipelineConfig, out_dir: str | Path) -> list[Path]:
    log.info("simulating scene (seed %d)", cfg.seed)
    scene = generate_scene(cfg.scene)
    return write_scene(scene, out_dir)


def run_extract_dynamic(cfg: DynamicConfig, out_dir: str | Path, in_dir: str | Path | None = None) -> Path:
    tracks = _read(tracks_from_json, TRACKS_FILE, in_dir, out_dir)
    flow = _read(flow_from_json, FLOW_FILE, in_dir, out_dir)
    anchors = [t for t in tracks if t.is_anchor]
    detection = [t for t in tracks if not t.is_anchor]
    log.info("scoring %d detection tracks against %d anchors", len(detection), len(anchors))
    scores = classify_dynamic_points(detection, anchors, flow, cfg)
    stats = flow_frame_stats(flow, cfg.flow_scale, cfg.theta_min)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(dynamic_to_json(scores, stats, tracks, dynamic_to_dict(cfg)), out / DYNAMIC_FILE)
    return out / DYNAMIC_FILE


def run_filter_objects(cfg: FilterConfig, out_dir: str | Path, in_dir: str | Path | None = None) -> tuple[Path, Path]:
    detections, width, height = _read(detections_from_json, DETECTIONS_FILE, in_dir, out_dir)
    _, _, points, _ = _read(dynamic_from_json, DYNAMIC_FILE, out_dir, in_dir)
    if len(points) != len(detections):
        raise ValidationError(f"{DYNAMIC_FILE} covers {len(points)} frames but {DETECTIONS_FILE} has {len(detections)}")
    segmenter = BoxSegmenter(cfg.mask_margin)
    sets, masks = [], []
    for t, boxes in enumerate(detections):
        pts = np.array([xy for _, xy in points[t]], dtype=np.float64).reshape(-1, 2)
        fs = filter_boxes(boxes, pts, cfg.tau_0, t)
        sets.append(fs)
        masks.append(rasterize_masks(fs, width, height, segmenter))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(filtered_to_json(sets), out / FILTERED_FILE)
    dump_json(masks_to_json(masks), out / MASKS_FILE)
    return out / FILTERED_FILE, out / MASKS_FILE


def _frame_table(scene, scores, stats, points, filtered) -> list[dict]:
    stat = {st.t: st for st in stats}
    rows = []
    for t in range(scene.num_frames):
        vis = [tr for tr in scene.tracks if tr.visible[t]]
        st = stat.get(t)
        fs = filtered[t] if t < len(filtered) else None
        rows.append({
            "t": t,
            "detection_points": sum(1 for tr in vis if not tr.is_anchor),
            "anchors": sum(1 for tr in vis if tr.is_anchor),
            "dynamic_points": len(points[t]) if t < len(points) else 0,
            "boxes": len(fs.boxes) if fs else 0,
            "kept_boxes": len(fs.kept_indices) if fs else 0,
            "mean_flow": None if st is None else st.mean_magnitude,
            "flow_threshold": None if st is None else st.threshold,
        })
    return rows


def _metrics_dict(m) -> dict:
    return {"ate_rmse": m.ate_rmse, "rpe_trans": m.rpe_trans, "rpe_rot_deg": m.rpe_rot}


def run_evaluate(cfg: PipelineConfig, out_dir: str | Path, in_dir: str | Path | None = None) -> dict:
    """Pipeline-mode evaluation: counts, classification and masked-vs-unmasked PnP."""
    scene = read_scene(_find(TRACKS_FILE, in_dir, out_dir).parent)
    scores, stats, points, _ = _read(dynamic_from_json, DYNAMIC_FILE, out_dir, in_dir)
    filtered = _read(filtered_from_json, FILTERED_FILE, out_dir, in_dir)
    masks = _read(masks_from_json, MASKS_FILE, out_dir, in_dir)

    pred = {s.track_id: s.is_dynamic for s in scores}
    det = scene.detection_tracks
    truth = scene.labels_for(det)
    guess = [pred.get(tr.track_id, False) for tr in det]
    tp = sum(g and y for g, y in zip(guess, truth))
    classification = {
        "f1": f1_score(guess, truth),
        "precision": tp / sum(guess) if any(guess) else None,
        "recall": tp / sum(truth) if any(truth) else None,
        "predicted_dynamic": int(sum(guess)),
        "true_dynamic": int(sum(truth)),
    }
    static_kept = [sum(1 for bd in fs.kept if bd.box.gt_moving is False) for fs in filtered]
    static_seen = sum(1 for fs in filtered for bd in fs.boxes if bd.box.gt_moving is False)

    obs = build_observations(scene)
    moving_ids = {tr.track_id for tr, y in zip(scene.tracks, scene.gt_dynamic_labels) if y}
    n_total = sum(len(fo) for fo in obs.frames.values())
    n_moving = sum(int(np.isin(fo.track_ids, list(moving_ids)).sum()) for fo in obs.frames.values())

    cmp = compare_masked_vs_unmasked(scene, masks, mode=cfg.eval.align, delta=cfg.eval.rpe_delta)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tum(cmp.unmasked_trajectory, out / UNMASKED_TRAJ)
    write_tum(cmp.masked_trajectory, out / MASKED_TRAJ)

    report = {
        "tool": "mona",
        "version": __version__,
        "seed": cfg.seed,
        "mode": "pipeline",
        "config": config_to_dict(cfg),
        "frames": _frame_table(scene, scores, stats, points, filtered),
        "classification": classification,
        "static_boxes_detected": static_seen,
        "static_boxes_kept": sum(static_kept),
        "frames_with_static_kept": sum(1 for n in static_kept if n),
        "correspondences": {
            "total": n_total,
            "moving": n_moving,
            "moving_share": n_moving / n_total if n_total else None,
        },
        "metrics": {
            "align": cfg.eval.align,
            "rpe_delta": cfg.eval.rpe_delta,
            "unmasked": _metrics_dict(cmp.unmasked),
            "masked": _metrics_dict(cmp.masked),
            "improvement_pct": {
                "ate": 100.0 * cmp.ate_improvement,
                "rpe_trans": 100.0 * cmp.rpe_trans_improvement,
                "rpe_rot": 100.0 * cmp.rpe_rot_improvement,
            },
        },
    }
    report = _round(report)
    series = {
        "frame": list(scene.gt_trajectory.frames),
        "timestamp": list(scene.gt_trajectory.timestamps),
        "err_unmasked": cmp.unmasked_errors.tolist(),
        "err_masked": cmp.masked_errors.tolist(),
    }
    _write_reports(report, series, out)
    return report


def run_evaluate_trajectories(est_path: str | Path, ref_path: str | Path, out_dir: str | Path,
                              align: str = "sim3", delta: int = 1, seed: int | None = None) -> dict:
    """Metrics for an estimated trajectory against a reference, both TUM files."""
    for p in (est_path, ref_path):
        if not Path(p).is_file():
            raise ValidationError(f"missing trajectory file {str(p)!r}")
    est, ref = read_tum(est_path), read_tum(ref_path)
    if est.frames != ref.frames:
        only_est = sorted(set(est.frames) - set(ref.frames))[:5]
        only_ref = sorted(set(ref.frames) - set(est.frames))[:5]
        raise ValidationError(f"frame indices differ (only in est: {only_est}, only in ref: {only_ref})")
    m = trajectory_metrics(est, ref, align, delta)
    frames, errs = aligned_errors(est, ref, align)
    report = _round({
        "tool": "mona",
        "version": __version__,
        "seed": seed,
        "mode": "trajectories",
        "metrics": {"align": align, "rpe_delta": delta, "estimate": _metrics_dict(m)},
    })
    stamps = dict(zip(ref.frames, ref.timestamps))
    series = {"frame": frames, "timestamp": [stamps[f] for f in frames], "err": errs.tolist()}
    _write_reports(report, series, Path(out_dir))
    return report


def run_pipeline(cfg: PipelineConfig, out_dir: str | Path, in_dir: str | Path | None = None) -> dict:
    """simulate (unless ``in_dir`` supplies inputs), extract, filter, evaluate."""
    if in_dir is None:
        run_simulate(cfg, out_dir)
    run_extract_dynamic(cfg.dynamic, out_dir, in_dir)
    run_filter_objects(cfg.filter, out_dir, in_dir)
    return run_evaluate(cfg, out_dir, in_dir)


def _batch_one(args):
    cfg, out = args
    return run_pipeline(cfg, out)


def run_batch(cfg: PipelineConfig, out_dir: str | Path, seeds: int, jobs: int = 1) -> dict:
    """Run seeds ``cfg.seed .. cfg.seed + seeds - 1``, each into its own subdirectory."""
    if seeds < 1:
        raise ValidationError(f"--seeds must be >= 1, got {seeds}")
    out = Path(out_dir)
    todo = [(cfg.with_seed(cfg.seed + i), out / f"seed_{cfg.seed + i:04d}") for i in range(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            reports = list(ex.map(_batch_one, todo))
    else:
        reports = [_batch_one(a) for a in todo]
    ate = [r["metrics"]["improvement_pct"]["ate"] for r in reports]
    f1 = [r["classification"]["f1"] for r in reports]
    better = [r["metrics"]["masked"]["ate_rmse"] <= r["metrics"]["unmasked"]["ate_rmse"] for r in reports]
    summary = _round({
        "tool": "mona",
        "version": __version__,
        "seeds": [c.seed for c, _ in todo],
        "ate_improvement_pct": ate,
        "f1": f1,
        "median_ate_improvement_pct": float(np.median(ate)),
        "median_f1": float(np.median(f1)),
        "fraction_masked_not_worse": float(np.mean(better)),
    })
    out.mkdir(parents=True, exist_ok=True)
    dump_json(summary, out / BATCH_JSON)
    return summary


# ---------------------------------------------------------------------------
# report rendering
# ---------------------------------------------------------------------------


def _fmt(x, spec=".4f") -> str:
    return "-" if x is None else format(x, spec)


def render_report_text(report: dict) -> str:
    lines = [f"mona {report['version']}  mode={report['mode']}  seed={report['seed']}"]
    m = report["metrics"]
    lines.append(f"alignment={m['align']}  rpe_delta={m['rpe_delta']}")
    lines.append("")
    lines.append(f"{'run':<10} {'ATE (m)':>10} {'RPE trans (m)':>14} {'RPE rot (deg)':>14}")
    runs = [("estimate", m.get("estimate"))] if "estimate" in m else [("unmasked", m["unmasked"]), ("masked", m["masked"])]
    for name, r in runs:
        lines.append(f"{name:<10} {_fmt(r['ate_rmse']):>10} {_fmt(r['rpe_trans']):>14} {_fmt(r['rpe_rot_deg']):>14}")
    if "improvement_pct" in m:
        imp = m["improvement_pct"]
        lines.append(f"{'gain %':<10} {_fmt(imp['ate'], '.1f'):>10} {_fmt(imp['rpe_trans'], '.1f'):>14} "
                     f"{_fmt(imp['rpe_rot'], '.1f'):>14}")
    if "classification" in report:
        c = report["classification"]
        lines += ["", f"dynamic-point F1 {_fmt(c['f1'], '.3f')}  precision {_fmt(c['precision'], '.3f')}  "
                      f"recall {_fmt(c['recall'], '.3f')}",
                  f"static boxes kept {report['static_boxes_kept']} of {report['static_boxes_detected']}  "
                  f"moving-object correspondences {_fmt(report['correspondences']['moving_share'], '.1%')}"]
    if "frames" in report:
        lines += ["", f"{'t':>3} {'n':>5} {'m':>4} {'|x_d|':>6} {'|B|':>4} {'kept':>5} {'flow':>8} {'theta':>8}"]
        for r in report["frames"]:
            lines.append(f"{r['t']:>3} {r['detection_points']:>5} {r['anchors']:>4} {r['dynamic_points']:>6} "
                         f"{r['boxes']:>4} {r['kept_boxes']:>5} {_fmt(r['mean_flow'], '.3f'):>8} "
                         f"{_fmt(r['flow_threshold'], '.3f'):>8}")
    return "\n".join(lines) + "\n"


def render_plot_data(series: dict) -> str:
    cols = list(series)
    lines = ["# " + " ".join(cols)]
    for row in zip(*series.values()):
        lines.append(" ".join(str(v) if isinstance(v, int) else f"{v:.{REPORT_DIGITS}g}" for v in row))
    return "\n".join(lines) + "\n"


def _write_reports(report: dict, series: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    dump_json(report, out / REPORT_JSON)
    (out / REPORT_TXT).write_text(render_report_text(report), encoding="utf-8")
    (out / PLOT_DATA).write_text(render_plot_data(series), encoding="utf-8")


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
