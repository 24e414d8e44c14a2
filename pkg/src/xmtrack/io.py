"""File formats: weights, scenarios, sequences, track runs, filter configs.

Everything is line-oriented JSON (diff-friendly, no timestamps, stable key
order) except images, which are either base64 inline or binary PGM/PPM
sidecar files next to the sequence.  All writers are byte-deterministic
given identical inputs.
"""

from __future__ import annotations

import base64
import json
import os
from pathlib import Path

import numpy as np

from .ctp import BBox, SessionConfig, MotionKind, MotionModel
from .metrics import TrackRun
from .sim import FrameRecord, Scenario, Sequence, scenario_from_dict, scenario_to_dict
from .state_switch import Image

WEIGHTS_FORMAT = "xmtrack-weights-v1"
TRACKRUN_FORMAT = "xmtrack-trackrun-v1"

CONFIG_DIR_ENV = "XMTRACK_CONFIG_DIR"


class DataError(Exception):
    """Malformed or inconsistent input data (CLI exit code 2)."""


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _load_json(path: str | Path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON in {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


def save_weights(path: str | Path, tensors: dict[str, np.ndarray]):
    payload = {
        "format": WEIGHTS_FORMAT,
        "tensors": {
            name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in sorted(tensors.items())
        },
    }
    Path(path).write_text(_dump(payload) + "\n", encoding="utf-8")


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    payload = _load_json(path)
    if payload.get("format") != WEIGHTS_FORMAT:
        raise DataError(f"{path}: not a {WEIGHTS_FORMAT} file")
    tensors = {}
    for name, entry in payload.get("tensors", {}).items():
        try:
            shape = tuple(entry["shape"])
            data = np.asarray(entry["data"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad tensor entry {name!r}") from exc
        if data.size != int(np.prod(shape)):
            raise DataError(f"{path}: tensor {name!r} data does not match shape {shape}")
        tensors[name] = data.reshape(shape)
    return tensors


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------


def save_scenario(path: str | Path, sc: Scenario):
    Path(path).write_text(_dump(scenario_to_dict(sc)) + "\n", encoding="utf-8")


def load_scenario(path: str | Path) -> Scenario:
    d = _load_json(path)
    try:
        return scenario_from_dict(d)
    except (TypeError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: invalid scenario: {exc}") from exc


# ---------------------------------------------------------------------------
# images (PGM/PPM sidecars)
# ---------------------------------------------------------------------------


def write_pnm(path: str | Path, img: Image):
    """Binary PGM (1 channel) or PPM (3 channels)."""
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


def read_pnm(path: str | Path) -> Image:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"missing image file: {path}") from exc
    try:
        magic, rest = raw.split(None, 1)
        dims, rest = rest.split(b"\n", 1)
        # dims may be "w h" with maxval on the next token
        parts = dims.split()
        if len(parts) == 2:
            width, height = int(parts[0]), int(parts[1])
            maxval, rest = rest.split(b"\n", 1)
            maxval = int(maxval)
        else:
            width, height, maxval = int(parts[0]), int(parts[1]), int(parts[2])
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed PNM header") from exc
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise DataError(f"{path}: unsupported PNM variant")
    channels = 1 if magic == b"P5" else 3
    want = width * height * channels
    pixels = np.frombuffer(rest[:want], dtype=np.uint8)
    if pixels.size != want:
        raise DataError(f"{path}: truncated pixel data")
    return Image(width=width, height=height, channels=channels, pixels=pixels.copy())


# ---------------------------------------------------------------------------
# sequence (JSON lines: header record then one record per frame)
# ---------------------------------------------------------------------------


def _box_list(b: BBox) -> list[float]:
    return [b.cx, b.cy, b.w, b.h]


def _box_from(v) -> BBox:
    try:
        cx, cy, w, h = (float(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad box value {v!r}") from exc
    return BBox(cx=cx, cy=cy, w=w, h=h)


def save_sequence(path: str | Path, seq: Sequence, image_mode: str = "inline"):
    """Write a sequence as JSONL.

    image_mode 'inline': base64 pixels in each record; 'sidecar': binary
    PGM/PPM files under <stem>_frames/ referenced by relative path.
    """
    if image_mode not in ("inline", "sidecar"):
        raise ValueError(f"save_sequence: unknown image_mode {image_mode!r}")
    path = Path(path)
    frames_dir = None
    if image_mode == "sidecar":
        frames_dir = path.parent / f"{path.stem}_frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
    lines = [_dump({"type": "header", "scenario": scenario_to_dict(seq.scenario)})]
    for rec in seq.records:
        img = rec.image
        if image_mode == "inline":
            image_field = {
                "width": img.width,
                "height": img.height,
                "channels": img.channels,
                "pixels_b64": base64.b64encode(img.pixels.tobytes()).decode("ascii"),
            }
        else:
            ext = "pgm" if img.channels == 1 else "ppm"
            fname = f"{rec.index:06d}.{ext}"
            write_pnm(frames_dir / fname, img)
            image_field = {"file": f"{frames_dir.name}/{fname}"}
        lines.append(
            _dump(
                {
                    "type": "frame",
                    "index": rec.index,
                    "gt": _box_list(rec.gt),
                    "modality": rec.modality,
                    "valid": rec.valid,
                    "observed": _box_list(rec.observed),
                    "s": rec.s,
                    "image": image_field,
                }
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_sequence(path: str | Path) -> Sequence:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise DataError(f"file not found: {path}") from exc
    if not lines:
        raise DataError(f"{path}: empty sequence file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed header line: {exc}") from exc
    if header.get("type") != "header" or "scenario" not in header:
        raise DataError(f"{path}: first line is not a sequence header")
    try:
        scenario = scenario_from_dict(header["scenario"])
    except (TypeError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: invalid scenario in header: {exc}") from exc

    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
        if d.get("type") != "frame":
            raise DataError(f"{path}:{lineno}: expected a frame record")
        img_field = d.get("image", {})
        if "pixels_b64" in img_field:
            try:
                pixels = np.frombuffer(
                    base64.b64decode(img_field["pixels_b64"]), dtype=np.uint8
                )
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad base64 image") from exc
            image = Image(
                width=int(img_field["width"]),
                height=int(img_field["height"]),
                channels=int(img_field["channels"]),
                pixels=pixels.copy(),
            )
        elif "file" in img_field:
            image = read_pnm(path.parent / img_field["file"])
        else:
            raise DataError(f"{path}:{lineno}: frame record without image")
        try:
            records.append(
                FrameRecord(
                    index=int(d["index"]),
                    image=image,
                    gt=_box_from(d["gt"]),
                    modality=str(d["modality"]),
                    valid=bool(d["valid"]),
                    observed=_box_from(d["observed"]),
                    s=float(d["s"]),
                )
            )
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: frame record missing {exc}") from exc
    if not records:
        raise DataError(f"{path}: sequence has no frames")
    if len(records) != scenario.frames:
        raise DataError(
            f"{path}: header says {scenario.frames} frames, found {len(records)}"
        )
    return Sequence(scenario=scenario, records=records)


# ---------------------------------------------------------------------------
# track runs
# ---------------------------------------------------------------------------


def save_trackrun(path: str | Path, sequence_name: str, run: TrackRun):
    payload = {
        "format": TRACKRUN_FORMAT,
        "sequence": sequence_name,
        "pred": [_box_list(b) for b in run.pred],
        "gt": [_box_list(b) for b in run.gt],
        "tags": run.tags,
    }
    Path(path).write_text(_dump(payload) + "\n", encoding="utf-8")


def load_trackrun(path: str | Path) -> tuple[str, TrackRun]:
    payload = _load_json(path)
    if payload.get("format") != TRACKRUN_FORMAT:
        raise DataError(f"{path}: not a {TRACKRUN_FORMAT} file")
    try:
        run = TrackRun(
            pred=[_box_from(b) for b in payload["pred"]],
            gt=[_box_from(b) for b in payload["gt"]],
            tags=[list(t) for t in payload.get("tags", [])],
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: invalid track run: {exc}") from exc
    return str(payload.get("sequence", "unknown")), run


# ---------------------------------------------------------------------------
# filter config files
# ---------------------------------------------------------------------------


def resolve_config_path(name: str | Path) -> Path:
    """Literal path if it exists, else relative to $XMTRACK_CONFIG_DIR."""
    p = Path(name)
    if p.exists():
        return p
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir:
        candidate = Path(env_dir) / p
        if candidate.exists():
            return candidate
    raise DataError(f"config file not found: {name}")


def load_session_config(path: str | Path) -> SessionConfig:
    d = _load_json(resolve_config_path(path))
    try:
        kind = MotionKind(d.get("motion", "cv"))
        cfg = SessionConfig(
            p0_diag=tuple(d.get("p0_diag", SessionConfig.p0_diag)),
            q_diag=tuple(d.get("q_diag", SessionConfig.q_diag)),
            r_diag=tuple(d.get("r_diag", SessionConfig.r_diag)),
            theta=float(d.get("theta", 1.5)),
            cap_mult=float(d.get("cap_mult", 10.0)),
            epsilon=float(d.get("epsilon", 1e-3)),
            rho=float(d.get("rho", 0.40)),
            motion=MotionModel(kind, turn_rate=float(d.get("turn_rate", 0.0))),
            use_reliability=bool(d.get("use_reliability", True)),
            inflate_on_invalid=bool(d.get("inflate_on_invalid", True)),
        )
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid session config: {exc}") from exc
    return cfg
