"""
A complete benchmark round trip on disk
=======================================

Generate a small static dataset, run the evaluation harness over it with two
configurations, and score a hand-edited submission. Everything goes through
the same file formats the command-line tool reads and writes, so the
directory left behind can be fed to ``dronessl evaluate`` directly.
"""
import sys
import tempfile
from pathlib import Path

from dronessl import io as dio
from dronessl.config import parse_config
from dronessl.evaluation import evaluate_pipeline, mean_error, score
from dronessl.simulate import generate_task

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "static"
generate_task("static", 6, snr_range=(-15.0, 0.0), seed=4, out_dir=root, write_noise=True)
print("dataset:", sorted(p.name for p in root.iterdir()))

# Configs are plain INI text; unknown keys or bad values are all reported together.
configs = {
    "baseline": parse_config("[localize]\nmethod = srp_phat\n"),
    "hp+mwf": parse_config("[enhance]\nchain = highpass, mwf\nnoise = vad\nhighpass_cutoff = 300\n"),
}
for name, cfg in configs.items():
    report, diags = evaluate_pipeline(root, cfg, root / f"submission_{name}.csv")
    secs = sum(d.seconds for d in diags.values())
    print(f"{name:>9}: {report.total}/{report.max_points}, mean error {mean_error(report):.1f} deg, {secs:.1f} s")

# Deleting a row from a submission simply costs that file's point.
sub = dio.read_submission(root / "submission_hp+mwf.csv")
gt = dio.read_ground_truth(root / "ground_truth.csv")
sub.records.pop(sorted(sub.records)[0])
print("after dropping one row:", score(sub, gt).total, "points")
print(f"\ntry: dronessl evaluate --dataset {root} --oracle-noise --config <ini with 'noise = oracle'>")
