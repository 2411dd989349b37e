"""
Tracking a moving source from a flying array
============================================

In the flight task the source direction drifts during a 4 s recording and is
scored at 15 timestamps. Per-window estimates are noisy, so we compare three
ways of turning them into a trajectory: raw windows, a spherical Kalman
smoother, and a Viterbi path search over the full angular spectra.
"""
from dronessl.config import EnhanceConfig, PipelineConfig, TrackingConfig
from dronessl.evaluation import is_correct
from dronessl.geometry import cube_array, great_circle_distance
from dronessl.pipeline import localize_recording
from dronessl.simulate import make_scene

geom = cube_array()
enhance = EnhanceConfig(chain=("mwf",), noise="vad")
methods = ("none", "kalman", "viterbi")
configs = {m: PipelineConfig(enhance=enhance, tracking=TrackingConfig(method=m)) for m in methods}

totals = dict.fromkeys(methods, 0)
for i in range(3):
    sc = make_scene("flight", i, 21, -10.0, "speech", geom)
    times = [t for t, _ in sc.truth]
    print(f"flight {i}: truth moves {great_circle_distance(sc.truth[0][1], sc.truth[-1][1]):.0f} deg in 4 s")
    for m, cfg in configs.items():
        est = localize_recording(sc.mixture, cfg, geom, "flight", timestamps=times)
        pts = sum(is_correct(est[k], d) for k, (_, d) in enumerate(sc.truth))
        totals[m] += pts
        errs = [great_circle_distance(est[k], d) for k, (_, d) in enumerate(sc.truth)]
        print(f"  {m:>8}: {pts:2d}/15 points, median error {sorted(errs)[7]:5.1f} deg")

print("\ntotal over 3 flights (45 points):", ", ".join(f"{m} {v}" for m, v in totals.items()))
