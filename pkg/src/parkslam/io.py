"""Line-oriented JSON files for maps, datasets, traces and reports.

Every file starts with a header record naming the format and its
``format_version``, then one record per line, then an ``end`` record that
repeats the record count so truncation is detected.  Floats go through
``repr`` and therefore round-trip exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .association import SlotDetection, SlotId
from .evaluation import FORMAT_VERSION, EvalReport, MapSlotEntry, MapTag, SemanticMap
from .exceptions import IoFailure, ParseError, VersionMismatch
from .fiducial import CameraIntrinsics, TagDetection
from .geometry import Pose2
from .simulator import Dataset, LotSpec, NoiseModel, ObservationFrame, Odometry, TagPlacement, generate_lot

MAP_FORMAT = "parkslam-map"
DATASET_FORMAT = "parkslam-dataset"
TRACE_FORMAT = "parkslam-trace"
REPORT_FORMAT = "parkslam-report"


# ---------------------------------------------------------------------------
# low-level record stream


def _dump(obj) -> str:
    return json.dumps(obj, allow_nan=False, separators=(",", ":"))


def _write_lines(path, header: dict, records) -> None:
    try:
        lines = [_dump(header)]
        lines.extend(_dump(rec) for rec in records)
    except ValueError as exc:  # NaN or infinity
        raise IoFailure(f"cannot serialize non-finite value to {path}: {exc}") from exc
    lines.append(_dump({"record": "end", "count": len(lines) - 1}))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_lines(path, fmt: str):
    """Header plus the body records; validates the framing."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    raw = text.splitlines()
    if not raw:
        raise ParseError("empty file", line=1, field="format")
    recs = []
    for i, line in enumerate(raw, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed record: {exc.msg}", line=i) from exc
        if not isinstance(rec, dict):
            raise ParseError("record is not an object", line=i)
        recs.append((i, rec))
    line0, header = recs[0]
    if header.get("format") != fmt:
        raise ParseError(f"expected format {fmt!r}, found {header.get('format')!r}", line=line0, field="format")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format_version {version!r} is not supported (expected {FORMAT_VERSION})")
    last_line, last = recs[-1]
    if len(recs) < 2 or last.get("record") != "end":
        raise ParseError("file is truncated: no end record", line=last_line, field="record")
    body = recs[1:-1]
    if last.get("count") != len(body):
        raise ParseError(f"end record expects {last.get('count')} records, found {len(body)}",
                         line=last_line, field="count")
    return header, body


def _get(rec: dict, key: str, line: int, kind=None):
    if key not in rec:
        raise ParseError(f"missing field in {rec.get('record', 'record')!r}", line=line, field=key)
    val = rec[key]
    if kind is not None and not isinstance(val, kind):
        raise ParseError(f"wrong type {type(val).__name__}", line=line, field=key)
    return val


def _floats(rec: dict, key: str, line: int, shape) -> np.ndarray:
    val = _get(rec, key, line)
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError("not numeric", line=line, field=key) from exc
    if arr.shape != tuple(shape) or not np.all(np.isfinite(arr)):
        raise ParseError(f"expected finite array of shape {tuple(shape)}, got {arr.shape}", line=line, field=key)
    return arr


def _expect_count(header: dict, key: str, body, kind: str, line: int) -> None:
    n = sum(1 for _, r in body if r.get("record") == kind)
    if header.get(key) != n:
        raise ParseError(f"header announces {header.get(key)} {kind} records, found {n}", line=line, field=key)


# ---------------------------------------------------------------------------
# semantic map


def export_map(smap: SemanticMap, path, check: bool = True) -> None:
    """Write ``smap``; with ``check`` the map invariants are enforced first."""
    if check:
        smap.check()
    header = {"format": MAP_FORMAT, "format_version": smap.format_version,
              "slots": len(smap.slots), "tags": len(smap.tags), "poses": len(smap.reference_trace)}
    recs = [{"record": "slot", "id": s.label, "corners": s.corners.tolist()} for s in smap.slots]
    recs += [{"record": "tag", "tag_id": t.tag_id, "position": t.position.tolist()} for t in smap.tags]
    recs += [{"record": "pose", "pose": p.tolist()} for p in smap.reference_trace]
    _write_lines(path, header, recs)


def import_map(path) -> SemanticMap:
    header, body = _read_lines(path, MAP_FORMAT)
    slots, tags, poses = [], [], []
    for line, rec in body:
        kind = rec.get("record")
        if kind == "slot":
            slots.append(MapSlotEntry(_get(rec, "id", line, str), _floats(rec, "corners", line, (4, 2))))
        elif kind == "tag":
            tid = _get(rec, "tag_id", line, int)
            tags.append(MapTag(tid, _floats(rec, "position", line, (2,))))
        elif kind == "pose":
            poses.append(_floats(rec, "pose", line, (3,)))
        else:
            raise ParseError(f"unknown record type {kind!r}", line=line, field="record")
    for key, kind in (("slots", "slot"), ("tags", "tag"), ("poses", "pose")):
        _expect_count(header, key, body, kind, 1)
    trace = np.array(poses).reshape(-1, 3)
    return SemanticMap(slots, tags, trace, header["format_version"])


# ---------------------------------------------------------------------------
# traces and reports


def export_trace(trace, path) -> None:
    arr = np.asarray(trace, dtype=float).reshape(-1, 3)
    _write_lines(path, {"format": TRACE_FORMAT, "format_version": FORMAT_VERSION, "poses": len(arr)},
                 ({"record": "pose", "pose": p.tolist()} for p in arr))


def import_trace(path) -> np.ndarray:
    header, body = _read_lines(path, TRACE_FORMAT)
    poses = []
    for line, rec in body:
        if rec.get("record") != "pose":
            raise ParseError(f"unknown record type {rec.get('record')!r}", line=line, field="record")
        poses.append(_floats(rec, "pose", line, (3,)))
    _expect_count(header, "poses", body, "pose", 1)
    return np.array(poses).reshape(-1, 3)


def export_report(report: EvalReport, path) -> None:
    data = {"format": REPORT_FORMAT, **report.to_dict()}
    try:
        Path(path).write_text(json.dumps(data, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def import_report(path) -> EvalReport:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed report: {exc.msg}", line=exc.lineno) from exc
    if data.get("format") != REPORT_FORMAT:
        raise ParseError("not a report file", line=1, field="format")
    if data.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: report format_version {data.get('format_version')!r} is not supported")
    names = {f.name for f in fields(EvalReport)}
    return EvalReport(**{k: v for k, v in data.items() if k in names})


# ---------------------------------------------------------------------------
# datasets


def _lot_record(lot) -> dict:
    spec = lot.spec
    return {
        "rows": spec.rows,
        "slots_per_row": spec.slots_per_row,
        "slot_width": spec.slot_width,
        "slot_depth": spec.slot_depth,
        "aisle_width": spec.aisle_width,
        "free_zone_length": spec.free_zone_length,
        "n_tags": spec.n_tags,
        # stored explicitly so the file does not depend on default layouts
        "id_assignment": [[i, s.slot_id] for i, s in enumerate(lot.slots)],
        "tags": [[t.tag_id, list(t.position), t.facing] for t in lot.tags],
    }


def _lot_from_record(rec: dict, line: int):
    try:
        spec = LotSpec(
            rows=int(rec["rows"]),
            slots_per_row=int(rec["slots_per_row"]),
            slot_width=float(rec["slot_width"]),
            slot_depth=float(rec["slot_depth"]),
            aisle_width=float(rec["aisle_width"]),
            free_zone_length=float(rec["free_zone_length"]),
            n_tags=int(rec["n_tags"]),
            id_assignment={int(i): int(v) for i, v in rec["id_assignment"]},
            tag_placements=[TagPlacement(int(t), (float(p[0]), float(p[1])), float(f)) for t, p, f in rec["tags"]],
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"bad lot description: {exc}", line=line, field="lot") from exc
    return generate_lot(spec)


def _slot_det_record(det: SlotDetection) -> dict:
    return {"corners": det.corners.tolist(), "digits": list(det.slot_id.digits),
            "confidence": list(det.slot_id.confidence), "truth": det.truth_id}


def _tag_det_record(det: TagDetection) -> dict:
    return {"tag_id": det.tag_id, "corners": det.corners.tolist(), "center_x": det.center_x}


def export_dataset(ds: Dataset, path) -> None:
    header = {
        "format": DATASET_FORMAT,
        "format_version": FORMAT_VERSION,
        "frames": len(ds.frames),
        "seed": ds.seed,
        "dt": ds.dt,
        "wheelbase": ds.wheelbase,
        "origin": ds.origin.as_array().tolist(),
        "tag_side": ds.tag_side,
        "camera": asdict(ds.camera),
        "noise": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(ds.noise).items()},
        "lot": _lot_record(ds.lot),
    }
    recs = (
        {
            "record": "frame",
            "t": f.timestamp,
            "odom": [f.odom.speed, f.odom.steering, f.odom.compass],
            "slots": [_slot_det_record(d) for d in f.slot_detections],
            "tags": [_tag_det_record(d) for d in f.tag_detections],
            "truth": f.ground_truth_pose.as_array().tolist(),
        }
        for f in ds.frames
    )
    _write_lines(path, header, recs)


def import_dataset(path) -> Dataset:
    header, body = _read_lines(path, DATASET_FORMAT)
    for key in ("frames", "seed", "dt", "wheelbase", "origin", "tag_side", "camera", "noise", "lot"):
        _get(header, key, 1)
    lot = _lot_from_record(header["lot"], 1)
    try:
        camera = CameraIntrinsics(**header["camera"])
        noise = NoiseModel(**header["noise"])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad header: {exc}", line=1) from exc
    frames = []
    for line, rec in body:
        if rec.get("record") != "frame":
            raise ParseError(f"unknown record type {rec.get('record')!r}", line=line, field="record")
        odom = _floats(rec, "odom", line, (3,))
        slots = []
        for d in _get(rec, "slots", line, list):
            try:
                sid = SlotId(tuple(d["digits"]), tuple(d["confidence"]))
                slots.append(SlotDetection(np.array(d["corners"], dtype=float), sid, d.get("truth")))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad slot detection: {exc}", line=line, field="slots") from exc
        tags = []
        for d in _get(rec, "tags", line, list):
            try:
                tags.append(TagDetection(int(d["tag_id"]), np.array(d["corners"], dtype=float), d["center_x"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad tag detection: {exc}", line=line, field="tags") from exc
        t = _get(rec, "t", line)
        if not isinstance(t, (int, float)) or not math.isfinite(t):
            raise ParseError("timestamp is not a finite number", line=line, field="t")
        truth = Pose2.from_array(_floats(rec, "truth", line, (3,)))
        frames.append(ObservationFrame(float(t), Odometry(*map(float, odom)), slots, tags, truth))
    _expect_count(header, "frames", body, "frame", 1)
    origin = Pose2.from_array(_floats(header, "origin", 1, (3,)))
    return Dataset(frames, lot, header["seed"], origin, float(header["dt"]), float(header["wheelbase"]),
                   camera, float(header["tag_side"]), noise)
