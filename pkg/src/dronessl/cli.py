"""Command-line front end: ``dronessl {simulate,enhance,localize,score,evaluate}``.

Exit codes:
    0  success (localize/evaluate: also when some files failed; see warnings)
    1  unexpected internal error
    2  invalid flags
    3  I/O error (missing or unreadable/unwritable file)
    4  invalid configuration
    5  schema mismatch (malformed CSV, task-kind mismatch)

``--json`` replaces the human-readable summary with one JSON object that
validates against ``docs/summary.schema.json``. Log verbosity comes from the
``SSL_LOG_LEVEL`` environment variable (error, warn, info, debug).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as dio
from .config import PipelineConfig, load_config
from .errors import FormatError, IoFailure, SSLError, TaskKindMismatch
from .evaluation import TIMESTAMPS_PER_FLIGHT, Submission, evaluate_pipeline, mean_error, score
from .geometry import cube_array
from .pipeline import enhancer, localize_recording
from .simulate import generate_task

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_IO, EXIT_CONFIG, EXIT_SCHEMA = 0, 1, 2, 3, 4, 5
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("dronessl")


class UsageError(Exception):
    pass


@dataclass
class CommandOutcome:
    command: str
    exit_code: int = EXIT_OK
    artifacts_written: list = field(default_factory=list)
    lines: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"command": self.command, "exit_code": self.exit_code,
                "artifacts": [str(p) for p in self.artifacts_written],
                "warnings": list(self.warnings), "summary": _finite(self.data)}


def _finite(v):
    """JSON has no inf/nan; map them to null."""
    if isinstance(v, dict):
        return {str(k): _finite(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_finite(x) for x in v]
    if isinstance(v, (float, np.floating)):
        return float(v) if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def _snr_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(p) for p in text.split("..", 1))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI in dB, got {text!r}") from None
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise argparse.ArgumentTypeError(f"invalid SNR range {text!r}")
    return lo, hi


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dronessl", description="Sound source localization from a drone-mounted array.")
    p.add_argument("--json", action="store_true", help="print a machine-readable JSON summary")
    p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                   help="maximum recordings processed in parallel (default: all cores)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--task", choices=("static", "flight"), required=True)
    s.add_argument("--count", type=_positive_int, required=True)
    s.add_argument("--snr", type=_snr_range, default=(-20.0, 5.0), help="SNR range LO..HI in dB")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--source", choices=("speech", "white", "sinusoid"), default="speech")
    s.add_argument("--write-noise", action="store_true", help="also write the scaled noise under noise/")
    s.add_argument("--out", required=True, type=Path)

    e = sub.add_parser("enhance", help="apply the configured enhancement chain to one WAV")
    e.add_argument("--input", required=True, type=Path)
    e.add_argument("--output", required=True, type=Path)
    e.add_argument("--config", type=Path, help="pipeline config (default: empty chain)")
    e.add_argument("--noise", type=Path, help="noise-only WAV for the oracle estimator")
    e.add_argument("--clean", type=Path, help="clean reference WAV, enables SNR-gain reporting")
    e.add_argument("--motor-speeds", type=float, nargs=4, metavar="RPM")
    e.add_argument("--templates", type=Path, help="motor template CSV")

    lo = sub.add_parser("localize", help="localize every WAV in a directory (or one file)")
    lo.add_argument("--input", required=True, type=Path)
    lo.add_argument("--config", type=Path, help="pipeline config (default: baseline SRP-PHAT)")
    lo.add_argument("--output", required=True, type=Path, help="submission CSV to write")
    lo.add_argument("--task", choices=("static", "flight"), default="static")
    lo.add_argument("--geometry", type=Path, help="geometry file (default: geometry.txt next to the input)")

    sc = sub.add_parser("score", help="score a submission against ground truth")
    sc.add_argument("--submission", required=True, type=Path)
    sc.add_argument("--truth", required=True, type=Path)
    sc.add_argument("--task", choices=("static", "flight"))

    ev = sub.add_parser("evaluate", help="run a config over a dataset and score it")
    ev.add_argument("--dataset", required=True, type=Path)
    ev.add_argument("--config", type=Path)
    ev.add_argument("--output", type=Path, help="submission CSV (default: <dataset>/submission.csv)")
    ev.add_argument("--oracle-noise", action="store_true", help="use noise/<id>.wav as the noise reference")
    return p


def _config(path) -> PipelineConfig:
    return load_config(path) if path is not None else PipelineConfig()


def _write(outcome: CommandOutcome, path) -> None:
    outcome.artifacts_written.append(str(path))


def cmd_simulate(args) -> CommandOutcome:
    out = CommandOutcome("simulate")
    geom = cube_array()
    scenes = generate_task(args.task, args.count, args.snr, args.seed, args.out, args.source, geom,
                           write_noise=args.write_noise)
    for sc in scenes:
        _write(out, args.out / f"{sc.recording_id}.wav")
    for name in ("ground_truth.csv", "motor_speeds.csv", "geometry.txt", "motor_templates.csv"):
        if (args.out / name).exists():
            _write(out, args.out / name)
    out.data = {"task": args.task, "count": len(scenes), "seed": args.seed,
                "snr_range_db": list(args.snr), "output_dir": str(args.out)}
    out.lines.append(f"wrote {len(scenes)} {args.task} recordings to {args.out} (seed {args.seed})")
    return out


def _snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    pn = float(np.mean(noise ** 2))
    return float("inf") if pn == 0 else 10 * np.log10(float(np.mean(signal ** 2)) / pn)


def cmd_enhance(args) -> CommandOutcome:
    out = CommandOutcome("enhance")
    cfg = args.cfg
    rec = dio.read_wav(args.input)
    noise = dio.read_wav(args.noise) if args.noise else None
    templates = dio.read_motor_templates(args.templates) if args.templates else None
    op = enhancer(rec, cfg, noise, args.motor_speeds, templates)
    y = op(rec)
    dio.write_wav(y, args.output, "float32")
    _write(out, args.output)
    out.data = {"input": str(args.input), "output": str(args.output), "chain": list(cfg.enhance.chain),
                "channels": y.n_channels, "samples": y.n_samples, "sample_rate": y.sample_rate}
    out.lines.append(f"enhanced {args.input} -> {args.output} (chain: {', '.join(cfg.enhance.chain) or 'none'})")
    if args.clean:
        clean = dio.read_wav(args.clean)
        if clean.samples.shape != rec.samples.shape:
            raise UsageError("clean reference must match the input's shape")
        residual = rec.with_samples(rec.samples - clean.samples)
        # the chain is linear once its statistics are fixed, so filter each component
        s_out, n_out = op(clean).samples, op(residual).samples
        before = _snr_db(clean.samples, residual.samples)
        after = _snr_db(s_out, n_out)
        out.data.update(snr_in_db=before, snr_out_db=after, snr_gain_db=after - before)
        out.lines.append(f"SNR {before:.2f} dB -> {after:.2f} dB (gain {after - before:+.2f} dB)")
    return out


def _recordings(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    return dio.list_recordings(path)


def _empty(kind: str):
    return None if kind == "static" else {k: None for k in range(TIMESTAMPS_PER_FLIGHT)}


def cmd_localize(args) -> CommandOutcome:
    out = CommandOutcome("localize")
    cfg = args.cfg
    files = _recordings(args.input)
    root = args.input if args.input.is_dir() else args.input.parent
    geom_path = args.geometry or root / "geometry.txt"
    if args.geometry or geom_path.exists():
        geom = dio.read_geometry(geom_path)
    else:
        geom = cube_array()
        out.warnings.append(f"no geometry file at {geom_path}; using the default cube array")
    speeds_path, tmpl_path = root / "motor_speeds.csv", root / "motor_templates.csv"
    speeds = dio.read_motor_speeds(speeds_path) if speeds_path.exists() else {}
    templates = dio.read_motor_templates(tmpl_path) if tmpl_path.exists() else None

    def run(path: Path):
        rid = path.stem
        t0 = time.perf_counter()
        try:
            rec = dio.read_wav(path)
            est = localize_recording(rec, cfg, geom, args.task, speeds.get(rid), None, templates)
            return rid, est, time.perf_counter() - t0, None
        except Exception as exc:  # one bad file must not stop the batch
            return rid, _empty(args.task), time.perf_counter() - t0, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, min(args.threads, len(files) or 1))) as pool:
        results = list(pool.map(run, files))
    sub = Submission(args.task, {rid: est for rid, est, _, _ in results})
    dio.write_submission(sub, args.output)
    _write(out, args.output)
    files_info = []
    for rid, _, secs, err in results:
        files_info.append({"recording_id": rid, "seconds": round(secs, 6), "method": cfg.method, "error": err})
        if err:
            msg = f"{rid}: {err} (emitted as missing)"
            log.warning(msg)
            out.warnings.append(msg)
        out.lines.append(f"{rid}: {'FAILED' if err else 'ok'} in {secs:.2f} s")
    failed = sorted(rid for rid, *_, err in results if err)
    out.data = {"task": args.task, "method": cfg.method, "files": files_info,
                "processed": len(results), "failed": failed, "submission": str(args.output)}
    out.lines.append(f"wrote {args.output}: {len(results) - len(failed)} of {len(results)} files localized")
    return out


def _report_lines(report) -> list[str]:
    lines = [f"score: {report.total} / {report.max_points} ({100 * report.rate:.1f}%)"]
    for rid in sorted(report.errors):
        e = report.errors[rid]
        if isinstance(e, list):
            finite = [v for v in e if np.isfinite(v)]
            mean = f"{np.mean(finite):.2f}" if finite else "n/a"
            lines.append(f"{rid}: {report.points[rid]}/{len(e)} points, mean error {mean} deg")
        else:
            err = f"{e:.2f} deg" if np.isfinite(e) else "missing"
            lines.append(f"{rid}: {report.points[rid]} point, error {err}")
    return lines


def cmd_score(args) -> CommandOutcome:
    out = CommandOutcome("score")
    gt = dio.read_ground_truth(args.truth)
    sub = dio.read_submission(args.submission)
    if args.task and args.task != gt.kind:
        raise TaskKindMismatch(f"--task {args.task} but ground truth is a {gt.kind} task")
    report = score(sub, gt)
    out.data = report.to_dict()
    out.lines += _report_lines(report)
    return out


def cmd_evaluate(args) -> CommandOutcome:
    out = CommandOutcome("evaluate")
    cfg = args.cfg
    sub_path = args.output or args.dataset / "submission.csv"
    report, diags = evaluate_pipeline(args.dataset, cfg, sub_path, args.threads, args.oracle_noise)
    _write(out, sub_path)
    for rid in report.failed:
        out.warnings.append(f"{rid}: {diags[rid].error} (scored 0)")
    out.data = report.to_dict()
    out.data["mean_error_deg"] = None if not np.isfinite(mean_error(report)) else mean_error(report)
    out.data["method"] = cfg.method
    out.data["seconds"] = {rid: round(d.seconds, 6) for rid, d in sorted(diags.items())}
    out.lines += _report_lines(report)
    return out


COMMANDS = {"simulate": cmd_simulate, "enhance": cmd_enhance, "localize": cmd_localize,
            "score": cmd_score, "evaluate": cmd_evaluate}


def _configure_logging() -> None:
    name = os.environ.get("SSL_LOG_LEVEL", "warn").strip().lower()
    level = LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    if name not in LOG_LEVELS:
        log.warning("SSL_LOG_LEVEL=%r not recognized; using warn", name)


def _glue_negative_values(argv: list[str]) -> list[str]:
    """Let ``--snr -20..5`` through: argparse would read ``-20..5`` as a flag."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--snr" and i + 1 < len(argv):
            out.append(f"--snr={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def _classify(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (OSError, IoFailure)):
        return EXIT_IO
    if isinstance(exc, (TaskKindMismatch, FormatError)):
        return EXIT_SCHEMA
    if isinstance(exc, SSLError):
        return EXIT_CONFIG
    return EXIT_INTERNAL


def run(argv=None) -> CommandOutcome:
    parser = build_parser()
    argv = _glue_negative_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        outcome = CommandOutcome("usage", int(exc.code or 0))
        if "--json" in argv and outcome.exit_code:
            print(json.dumps(outcome.to_json(), indent=2, sort_keys=True))
        return outcome
    outcome = CommandOutcome(args.command)
    try:
        args.cfg = _config(getattr(args, "config", None))
    except (SSLError, OSError) as exc:
        outcome.exit_code = EXIT_CONFIG
        outcome.warnings.append(f"{type(exc).__name__}: {exc}")
        print(f"dronessl: config error: {exc}", file=sys.stderr)
    else:
        try:
            outcome = COMMANDS[args.command](args)
        except UsageError as exc:
            parser.print_usage(sys.stderr)
            outcome.exit_code = EXIT_USAGE
            outcome.warnings.append(str(exc))
            print(f"dronessl: error: {exc}", file=sys.stderr)
        except Exception as exc:  # mapped to documented exit codes
            outcome.exit_code = _classify(exc)
            outcome.warnings.append(f"{type(exc).__name__}: {exc}")
            if outcome.exit_code == EXIT_INTERNAL:
                log.exception("internal error")
            else:
                print(f"dronessl: error: {exc}", file=sys.stderr)
    if args.json:
        print(json.dumps(outcome.to_json(), indent=2, sort_keys=True, allow_nan=False))
    else:
        for line in outcome.lines:
            print(line)
        for w in outcome.warnings:
            if outcome.exit_code == EXIT_OK:
                print(f"warning: {w}", file=sys.stderr)
    return outcome


def main(argv=None) -> int:
    _configure_logging()
    return run(argv).exit_code


if __name__ == "__main__":
    sys.exit(main())
