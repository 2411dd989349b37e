"""Reading and writing datasets: WAV audio, geometry, motor speeds, ground
truth, submissions, spectra and trajectories.

All CSV files are UTF-8, comma separated, with a mandatory header row; lines
starting with ``#`` are comments. Numbers are written with a '.' decimal point
regardless of locale.
"""
from __future__ import annotations

import csv
import io as _io
import math
import struct
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config, parse_config
from .enhance import MotorProfile
from .errors import (CorruptHeader, DuplicateId, FileNotFound, IoFailure, MalformedRow, ParseError,
                     UnsupportedFormat)
from .evaluation import TIMESTAMPS_PER_FLIGHT, GroundTruth, Submission
from .geometry import ArrayGeometry, Direction
from .recording import MultichannelRecording

__all__ = [
    "MultichannelRecording", "PipelineConfig", "load_config", "parse_config",
    "read_wav", "write_wav", "parse_wav", "encode_wav",
    "read_geometry", "write_geometry", "parse_geometry", "format_geometry",
    "read_motor_speeds", "write_motor_speeds", "read_motor_sidecar", "write_motor_sidecar",
    "read_motor_templates", "write_motor_templates",
    "read_ground_truth", "write_ground_truth", "read_submission", "write_submission",
    "parse_ground_truth", "parse_submission", "format_ground_truth", "format_submission",
    "write_spectrum_csv", "read_spectrum_csv", "write_trajectory_csv", "read_trajectory_csv",
]

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

FLOAT_FMT = "{:.6f}"
SCORE_FMT = "{:.9g}"


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except FileNotFoundError as exc:
        raise FileNotFound(f"{path}: no such file") from exc
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def _read_text(path) -> str:
    data = _read_bytes(path)
    try:
        return data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid UTF-8") from exc


def _write_bytes(path, data: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------- WAV


def parse_wav(data: bytes) -> MultichannelRecording:
    """Decode a RIFF/WAVE byte string (PCM 16/24/32-bit or IEEE float 32/64-bit)."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptHeader("not a RIFF/WAVE file")
    pos = 12
    fmt = None
    samples = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise CorruptHeader(f"chunk {cid!r} truncated ({len(body)} of {size} bytes)")
        if cid == b"fmt ":
            fmt = _parse_fmt(body)
        elif cid == b"data":
            if fmt is None:
                raise CorruptHeader("data chunk before fmt chunk")
            samples = _decode_samples(body, *fmt)
            break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise CorruptHeader("missing fmt chunk")
    if samples is None:
        raise CorruptHeader("missing data chunk")
    tag, channels, rate, bits = fmt
    return MultichannelRecording(samples, rate)


def _parse_fmt(body: bytes):
    if len(body) < 16:
        raise CorruptHeader("fmt chunk shorter than 16 bytes")
    tag, channels, rate, byte_rate, block_align, bits = struct.unpack("<HHIIHH", body[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise CorruptHeader("extensible fmt chunk shorter than 40 bytes")
        (tag,) = struct.unpack("<H", body[24:26])
    if channels < 1:
        raise CorruptHeader("zero channels")
    if rate < 1:
        raise CorruptHeader("zero sample rate")
    if bits == 0 or bits % 8 or block_align != channels * bits // 8:
        raise CorruptHeader(f"inconsistent block alignment ({block_align} for {channels} x {bits} bits)")
    if tag == WAVE_FORMAT_PCM and bits not in (16, 24, 32):
        raise UnsupportedFormat(f"PCM with {bits} bits per sample is not supported", tag)
    if tag == WAVE_FORMAT_IEEE_FLOAT and bits not in (32, 64):
        raise UnsupportedFormat(f"float with {bits} bits per sample is not supported", tag)
    if tag not in (WAVE_FORMAT_PCM, WAVE_FORMAT_IEEE_FLOAT):
        raise UnsupportedFormat(f"unsupported WAV format tag 0x{tag:04x}", tag)
    return tag, channels, rate, bits


def _decode_samples(body: bytes, tag: int, channels: int, rate: int, bits: int) -> np.ndarray:
    width = bits // 8
    frame = width * channels
    if len(body) % frame:
        raise CorruptHeader(f"data size {len(body)} is not a multiple of the {frame}-byte frame")
    n = len(body) // frame
    if tag == WAVE_FORMAT_IEEE_FLOAT:
        with np.errstate(invalid="ignore"):  # signalling NaNs widen quietly
            x = np.frombuffer(body, dtype="<f4" if bits == 32 else "<f8").astype(np.float64)
    elif bits == 16:
        x = np.frombuffer(body, dtype="<i2") / 32768.0
    elif bits == 32:
        x = np.frombuffer(body, dtype="<i4") / 2147483648.0
    else:
        raw = np.frombuffer(body, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v / 8388608.0
    return x.reshape(n, channels).T.copy()


def read_wav(path) -> MultichannelRecording:
    """Read a WAV file; integer PCM is scaled by full scale (2**(bits-1))."""
    try:
        return parse_wav(_read_bytes(path))
    except (CorruptHeader, UnsupportedFormat) as exc:
        exc.args = (f"{path}: {exc.args[0]}",) + exc.args[1:]
        raise


def encode_wav(recording: MultichannelRecording, format: str = "float32") -> bytes:
    x = np.asarray(recording.samples)
    C = x.shape[0]
    rate = int(round(recording.sample_rate))
    if format == "float32":
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
        payload = x.T.astype("<f4").tobytes()
    elif format == "pcm16":
        tag, bits = WAVE_FORMAT_PCM, 16
        q = np.clip(x, -1.0, 1.0) * 32768.0
        q = np.sign(q) * np.floor(np.abs(q) + 0.5)  # round half away from zero
        payload = np.clip(q, -32768, 32767).astype("<i2").T.tobytes()
    else:
        raise ValueError(f"unknown WAV format {format!r}")
    block = C * bits // 8
    fmt = struct.pack("<HHIIHH", tag, C, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def write_wav(recording: MultichannelRecording, path, format: str = "float32") -> None:
    """Write ``float32`` (lossless for float32 data) or ``pcm16`` (clamped to [-1, 1])."""
    _write_bytes(path, encode_wav(recording, format))


# ---------------------------------------------------------------------- geometry


def parse_geometry(text: str) -> ArrayGeometry:
    """One mic per line as ``x y z`` in meters; optional ``c <speed>`` line."""
    mics, c = [], None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0].lower() == "c":
                if len(parts) != 2 or c is not None:
                    raise ParseError(f"line {lineno}: expected a single 'c <value>' line")
                c = float(parts[1])
            elif len(parts) == 3:
                mics.append([float(p) for p in parts])
            else:
                raise ParseError(f"line {lineno}: expected 'x y z', got {len(parts)} fields")
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"line {lineno}: {exc}") from exc
    if not all(math.isfinite(v) for m in mics for v in m) or (c is not None and not math.isfinite(c)):
        raise ParseError("non-finite number in geometry")
    try:
        return ArrayGeometry(np.array(mics).reshape(-1, 3), c if c is not None else 343.0)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def format_geometry(geom: ArrayGeometry) -> str:
    lines = ["# x y z (m), array frame"]
    lines += [" ".join(repr(float(v)) for v in m) for m in geom.mic_positions]
    lines.append(f"c {geom.speed_of_sound!r}")
    return "\n".join(lines) + "\n"


def read_geometry(path) -> ArrayGeometry:
    return parse_geometry(_read_text(path))


def write_geometry(geom: ArrayGeometry, path) -> None:
    _write_bytes(path, format_geometry(geom).encode("utf-8"))


# --------------------------------------------------------------------- CSV core


def _rows(text: str, expected: list[str] | None = None):
    """Yield (line_number, header, row) skipping comments and blank lines."""
    header = None
    reader = csv.reader(_io.StringIO(text))
    try:
        for row in reader:
            lineno = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()) or row[0].lstrip().startswith("#"):
                continue
            row = [c.strip() for c in row]
            if header is None:
                header = row
                if expected is not None and header != expected:
                    raise MalformedRow(f"header {','.join(header)!r}, expected {','.join(expected)!r}", lineno)
                continue
            if len(row) != len(header):
                raise MalformedRow(f"expected {len(header)} fields, got {len(row)}", lineno)
            yield lineno, header, row
    except csv.Error as exc:
        raise MalformedRow(str(exc), reader.line_num) from exc
    if header is None:
        raise MalformedRow("missing header row", 1)


def _header(text: str) -> list[str]:
    reader = csv.reader(_io.StringIO(text))
    try:
        for row in reader:
            if row and not (len(row) == 1 and not row[0].strip()) and not row[0].lstrip().startswith("#"):
                return [c.strip() for c in row]
    except csv.Error as exc:
        raise MalformedRow(str(exc), reader.line_num) from exc
    raise MalformedRow("missing header row", 1)


def _float(value: str, lineno: int, what: str, allow_nan: bool = False) -> float:
    try:
        v = float(value)
    except ValueError:
        raise MalformedRow(f"{what}: {value!r} is not a number", lineno) from None
    if not math.isfinite(v) and not (allow_nan and math.isnan(v)):
        raise MalformedRow(f"{what}: {value!r} is not finite", lineno)
    return v


def _direction(az: str, el: str, lineno: int, allow_missing: bool = False) -> Direction | None:
    if allow_missing and (az == "" or el == ""):
        return None
    a = _float(az, lineno, "azimuth", allow_missing)
    e = _float(el, lineno, "elevation", allow_missing)
    if math.isnan(a) or math.isnan(e):
        return None
    try:
        return Direction(a, e)
    except ValueError as exc:
        raise MalformedRow(str(exc), lineno) from None


def _fmt(v: float) -> str:
    return FLOAT_FMT.format(v)


def _csv_text(header: list[str], rows, comments=()) -> str:
    buf = _io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write_text(path, text: str) -> None:
    _write_bytes(path, text.encode("utf-8"))


# ------------------------------------------------------------------ motor speeds

MOTOR_SPEED_HEADER = ["recording_id", "motor1_rpm", "motor2_rpm", "motor3_rpm", "motor4_rpm"]


def parse_motor_speeds(text: str) -> dict[str, tuple[float, ...]]:
    out: dict[str, tuple[float, ...]] = {}
    for lineno, _, row in _rows(text, MOTOR_SPEED_HEADER):
        rid = row[0]
        if not rid:
            raise MalformedRow("empty recording_id", lineno)
        if rid in out:
            raise DuplicateId(rid, lineno)
        speeds = tuple(_float(v, lineno, f"motor{k + 1}_rpm") for k, v in enumerate(row[1:]))
        if any(s < 0 for s in speeds):
            raise MalformedRow("negative motor speed", lineno)
        out[rid] = speeds
    return out


def read_motor_speeds(path) -> dict[str, tuple[float, ...]]:
    """Mean propeller speeds per recording: ``{recording_id: (rpm1, .., rpm4)}``."""
    return parse_motor_speeds(_read_text(path))


def write_motor_speeds(speeds: dict, path) -> None:
    rows = [[rid, *(_fmt(s) for s in sp)] for rid, sp in sorted(speeds.items())]
    _write_text(path, _csv_text(MOTOR_SPEED_HEADER, rows))


def read_motor_sidecar(path) -> tuple[float, ...]:
    """Per-recording sidecar ``motor_id,mean_rpm``; returns speeds ordered by motor id."""
    speeds = {}
    for lineno, _, row in _rows(_read_text(path), ["motor_id", "mean_rpm"]):
        try:
            mid = int(row[0])
        except ValueError:
            raise MalformedRow(f"motor_id {row[0]!r} is not an integer", lineno) from None
        if mid in speeds:
            raise DuplicateId(mid, lineno)
        speeds[mid] = _float(row[1], lineno, "mean_rpm")
    return tuple(speeds[k] for k in sorted(speeds))


def write_motor_sidecar(speeds, path) -> None:
    _write_text(path, _csv_text(["motor_id", "mean_rpm"], [[k + 1, _fmt(s)] for k, s in enumerate(speeds)]))


def read_motor_templates(path) -> tuple[dict, float]:
    """Template bank CSV ``motor_id,rpm,bin_hz,power_0,..`` -> (bank, bin_hz).

    ``bank[rpm]`` has shape (motors, bins); motor ids are 1-based and must be
    complete for every rpm.
    """
    text = _read_text(path)
    header = _header(text)
    if header[:3] != ["motor_id", "rpm", "bin_hz"] or len(header) < 4:
        raise MalformedRow("template header must start with motor_id,rpm,bin_hz followed by power columns", 1)
    rows: dict[float, dict[int, np.ndarray]] = {}
    bin_hz = None
    for lineno, _, row in _rows(text, header):
        try:
            mid = int(row[0])
        except ValueError:
            raise MalformedRow(f"motor_id {row[0]!r} is not an integer", lineno) from None
        rpm = _float(row[1], lineno, "rpm")
        bh = _float(row[2], lineno, "bin_hz")
        if bin_hz is not None and bh != bin_hz:
            raise MalformedRow("bin_hz differs between rows", lineno)
        bin_hz = bh
        power = np.array([_float(v, lineno, "power") for v in row[3:]])
        if mid in rows.setdefault(rpm, {}):
            raise DuplicateId(f"motor {mid} @ {rpm} rpm", lineno)
        rows[rpm][mid] = power
    bank = {}
    for rpm, motors in rows.items():
        ids = sorted(motors)
        if ids != list(range(1, len(ids) + 1)):
            raise MalformedRow(f"motor ids at {rpm} rpm are not 1..n", None)
        bank[rpm] = np.array([motors[i] for i in ids])
    return bank, bin_hz


def write_motor_templates(profile: MotorProfile, path) -> None:
    n_bins = next(iter(profile.template_bank.values())).shape[-1]
    header = ["motor_id", "rpm", "bin_hz"] + [f"power_{k}" for k in range(n_bins)]
    rows = []
    for rpm, tmpl in profile.template_bank.items():
        tmpl = tmpl if tmpl.ndim == 2 else tmpl.mean(axis=1)
        for m, p in enumerate(tmpl, 1):
            rows.append([m, repr(float(rpm)), repr(float(profile.template_bin_hz or 0.0)),
                         *(repr(float(v)) for v in p)])
    _write_text(path, _csv_text(header, rows))


# ------------------------------------------------------- ground truth / submission

STATIC_GT_HEADER = ["recording_id", "azimuth_deg", "elevation_deg"]
FLIGHT_GT_HEADER = ["recording_id", "timestamp_index", "timestamp_s", "azimuth_deg", "elevation_deg"]
STATIC_SUB_HEADER = ["recording_id", "azimuth_deg", "elevation_deg"]
FLIGHT_SUB_HEADER = ["recording_id", "timestamp_index", "azimuth_deg", "elevation_deg"]
CONVENTION = "azimuth ccw from +x seen from +z, elevation up from the xy plane, degrees"


def _index(value: str, lineno: int) -> int:
    try:
        k = int(value)
    except ValueError:
        raise MalformedRow(f"timestamp_index {value!r} is not an integer", lineno) from None
    if not 0 <= k < TIMESTAMPS_PER_FLIGHT:
        raise MalformedRow(f"timestamp_index {k} outside 0..{TIMESTAMPS_PER_FLIGHT - 1}", lineno)
    return k


def parse_ground_truth(text: str) -> GroundTruth:
    header = _header(text)
    if header == STATIC_GT_HEADER:
        recs: dict = {}
        for lineno, _, row in _rows(text, header):
            if row[0] in recs:
                raise DuplicateId(row[0], lineno)
            recs[row[0]] = _direction(row[1], row[2], lineno)
        return GroundTruth("static", recs)
    if header == FLIGHT_GT_HEADER:
        flight: dict = {}
        for lineno, _, row in _rows(text, header):
            k = _index(row[1], lineno)
            slot = flight.setdefault(row[0], {})
            if k in slot:
                raise DuplicateId(f"{row[0]}#{k}", lineno)
            slot[k] = (_float(row[2], lineno, "timestamp_s"), _direction(row[3], row[4], lineno))
        recs = {}
        for rid, slot in flight.items():
            if sorted(slot) != list(range(TIMESTAMPS_PER_FLIGHT)):
                raise MalformedRow(f"{rid}: needs timestamp_index 0..{TIMESTAMPS_PER_FLIGHT - 1}", None)
            recs[rid] = [slot[k] for k in range(TIMESTAMPS_PER_FLIGHT)]
        try:
            return GroundTruth("flight", recs)
        except ValueError as exc:
            raise MalformedRow(str(exc), None) from None
    raise MalformedRow(f"unrecognized ground-truth header {','.join(header)!r}", 1)


def format_ground_truth(gt: GroundTruth) -> str:
    if gt.kind == "static":
        rows = [[rid, _fmt(d.azimuth), _fmt(d.elevation)] for rid, d in sorted(gt.records.items())]
        return _csv_text(STATIC_GT_HEADER, rows, [CONVENTION])
    rows = [[rid, k, _fmt(t), _fmt(d.azimuth), _fmt(d.elevation)]
            for rid, recs in sorted(gt.records.items()) for k, (t, d) in enumerate(recs)]
    return _csv_text(FLIGHT_GT_HEADER, rows, [CONVENTION])


def read_ground_truth(path) -> GroundTruth:
    return parse_ground_truth(_read_text(path))


def write_ground_truth(gt: GroundTruth, path) -> None:
    _write_text(path, format_ground_truth(gt))


def parse_submission(text: str) -> Submission:
    """Empty or NaN angles mark a missing estimate (scored 0)."""
    header = _header(text)
    if header == STATIC_SUB_HEADER:
        recs: dict = {}
        for lineno, _, row in _rows(text, header):
            if row[0] in recs:
                raise DuplicateId(row[0], lineno)
            recs[row[0]] = _direction(row[1], row[2], lineno, allow_missing=True)
        return Submission("static", recs)
    if header == FLIGHT_SUB_HEADER:
        recs = {}
        for lineno, _, row in _rows(text, header):
            k = _index(row[1], lineno)
            slot = recs.setdefault(row[0], {})
            if k in slot:
                raise DuplicateId(f"{row[0]}#{k}", lineno)
            slot[k] = _direction(row[2], row[3], lineno, allow_missing=True)
        return Submission("flight", recs)
    raise MalformedRow(f"unrecognized submission header {','.join(header)!r}", 1)


def format_submission(sub: Submission) -> str:
    def cells(d):
        return ["", ""] if d is None else [_fmt(d.azimuth), _fmt(d.elevation)]

    if sub.kind == "static":
        rows = [[rid, *cells(d)] for rid, d in sorted(sub.records.items())]
        return _csv_text(STATIC_SUB_HEADER, rows)
    rows = [[rid, k, *cells(d)] for rid, recs in sorted(sub.records.items())
            for k, d in sorted(recs.items())]
    return _csv_text(FLIGHT_SUB_HEADER, rows)


def read_submission(path) -> Submission:
    return parse_submission(_read_text(path))


def write_submission(sub: Submission, path) -> None:
    _write_text(path, format_submission(sub))


# ------------------------------------------------------ spectra and trajectories


def write_spectrum_csv(spectrum, path) -> None:
    """Angular spectrum as ``azimuth,elevation,score`` rows in grid order."""
    g = spectrum.grid
    rows = [[_fmt(a), _fmt(e), SCORE_FMT.format(s)] for a, e, s in zip(g.azimuths, g.elevations, spectrum.scores)]
    _write_text(path, _csv_text(["azimuth", "elevation", "score"], rows))


def read_spectrum_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    az, el, sc = [], [], []
    for lineno, _, row in _rows(_read_text(path), ["azimuth", "elevation", "score"]):
        az.append(_float(row[0], lineno, "azimuth"))
        el.append(_float(row[1], lineno, "elevation"))
        sc.append(_float(row[2], lineno, "score"))
    return np.array(az), np.array(el), np.array(sc)


TRAJECTORY_HEADER = ["time_s", "azimuth_deg", "elevation_deg", "confidence"]


def write_trajectory_csv(traj, path) -> None:
    rows = [[_fmt(t), _fmt(d.azimuth), _fmt(d.elevation), SCORE_FMT.format(c)]
            for t, d, c in zip(traj.times, traj.directions, traj.confidences)]
    _write_text(path, _csv_text(TRAJECTORY_HEADER, rows))


def read_trajectory_csv(path):
    from .tracking import Trajectory

    times, dirs, conf = [], [], []
    for lineno, _, row in _rows(_read_text(path), TRAJECTORY_HEADER):
        times.append(_float(row[0], lineno, "time_s"))
        dirs.append(_direction(row[1], row[2], lineno))
        conf.append(_float(row[3], lineno, "confidence"))
    try:
        return Trajectory(np.array(times), tuple(dirs), np.array(conf))
    except ValueError as exc:
        raise MalformedRow(str(exc), None) from None


def list_recordings(directory) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFound(f"{root}: no such directory")
    return sorted(p for p in root.iterdir() if p.suffix.lower() == ".wav" and p.is_file())


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {p}: {exc}") from exc
    return p

