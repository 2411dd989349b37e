"""Temporal smoothing of in-flight direction estimates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EmptyInput, EmptyTrajectory, RecordingTooShort, ShapeMismatch
from .geometry import Direction, DirectionGrid, angle_between, rotate_towards, vector_to_angles
from .localize import AngularSpectrum, pick_peak
from .recording import MultichannelRecording


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    directions: tuple[Direction, ...]
    confidences: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        conf = np.asarray(self.confidences, dtype=np.float64)
        dirs = tuple(self.directions)
        if not (len(times) == len(dirs) == len(conf)):
            raise ShapeMismatch("trajectory fields differ in length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "confidences", conf)
        object.__setattr__(self, "directions", dirs)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def vectors(self) -> np.ndarray:
        return np.array([d.vector for d in self.directions]).reshape(-1, 3)


@dataclass(frozen=True)
class KalmanConfig:
    process_noise_std: float = 5.0  # deg per step
    measurement_noise_std: float = 5.0  # deg
    initial_var: float = 30.0 ** 2  # deg^2
    gate_sigma: float = 3.0  # innovations beyond this many std are treated as outliers
    backward_pass: bool = True  # Rauch-Tung-Striebel smoothing after filtering

    def __post_init__(self):
        if not (self.process_noise_std > 0 and self.measurement_noise_std > 0 and self.initial_var > 0):
            raise ValueError("Kalman parameters must be positive")
        if not self.gate_sigma > 0:
            raise ValueError("gate_sigma must be positive (use inf to disable gating)")


def _anchor(z: np.ndarray, q: float, r: float, gate: float) -> int:
    """Index of the measurement consistent with the most others.

    j supports i when their angle fits inside the gate for a random walk of
    |i - j| steps. Ties go to the earliest index.
    """
    n = len(z)
    steps = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    radius = gate * np.sqrt(r + q * steps)
    support = np.sum(_pairwise_angles(z, z) <= radius, axis=1)
    return int(np.argmax(support))


def _validate(z: np.ndarray, order, q: float, r: float, cfg: KalmanConfig, accepted: np.ndarray) -> None:
    """Gated filter along ``order``; marks the measurements that pass the gate."""
    order = list(order)
    state = z[order[0]].copy()
    var = cfg.initial_var * r / (cfg.initial_var + r)
    accepted[order[0]] = True
    for k in order[1:]:
        var += q
        innovation = float(angle_between(state, z[k]))
        if innovation <= cfg.gate_sigma * np.sqrt(var + r):
            gain = var / (var + r)
            state = rotate_towards(state, z[k], gain * innovation)
            var *= 1.0 - gain
            accepted[k] = True


def kalman_smooth(raw: Trajectory, cfg: KalmanConfig = KalmanConfig()) -> Trajectory:
    """Random-walk Kalman smoother on the unit sphere.

    The state is a unit vector; predictions and updates happen in its tangent
    plane. Process and measurement noise are isotropic, so the 2x2 tangent
    covariance stays a multiple of identity and is tracked as one variance.
    An update moves the state along the geodesic towards the measurement by
    the Kalman gain times the angular innovation.

    Outliers are handled before smoothing. Gated filters run forwards and
    backwards in time from the best-supported measurement (see
    :func:`_anchor`); measurements they reject (innovation beyond
    ``gate_sigma`` standard deviations) are treated as missing. The filter
    then runs over the whole sequence, followed by a Rauch-Tung-Striebel pass
    that cancels the forward filter's lag on steady motion.
    """
    n = len(raw)
    if n == 0:
        return raw
    q = cfg.process_noise_std ** 2
    r = cfg.measurement_noise_std ** 2
    z = raw.vectors
    if np.isfinite(cfg.gate_sigma):
        a = _anchor(z, q, r, cfg.gate_sigma)
        accepted = np.zeros(n, dtype=bool)
        _validate(z, range(a, n), q, r, cfg, accepted)
        _validate(z, range(a, -1, -1), q, r, cfg, accepted)
    else:
        accepted = np.ones(n, dtype=bool)
    states = [z[int(np.argmax(accepted))].copy()]
    var = cfg.initial_var
    filt, pred = [], []
    for k in range(n):
        if k:
            states.append(states[-1].copy())
            var += q
        pred.append(var)
        if accepted[k]:
            gain = var / (var + r)
            states[k] = rotate_towards(states[k], z[k], gain * float(angle_between(states[k], z[k])))
            var *= 1.0 - gain
        filt.append(var)
    if cfg.backward_pass:
        for k in range(n - 2, -1, -1):
            c = filt[k] / pred[k + 1]
            states[k] = rotate_towards(states[k], states[k + 1], c * float(angle_between(states[k], states[k + 1])))
    out = tuple(raw.directions[k] if np.array_equal(states[k], z[k])
                else Direction(*map(float, vector_to_angles(states[k]))) for k in range(n))
    return Trajectory(raw.times, out, raw.confidences)


def _pairwise_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return angle_between(a[:, None, :], b[None, :, :])


def viterbi_smooth(spectra, transition_penalty: float, top_k: int | None = 50,
                   times=None) -> Trajectory:
    """Best path through a sequence of angular spectra.

    Path score = sum of spectrum scores - penalty * sum of great-circle step
    lengths (degrees). Exact dynamic programming over each frame's candidate
    states; with ``top_k`` set, candidates are restricted to the ``top_k``
    highest-scoring grid points per frame (an approximation). ``top_k=None``
    searches the full grid.
    """
    spectra = list(spectra)
    if not spectra:
        raise EmptyInput("no spectra to smooth")
    grid = spectra[0].grid
    for sp in spectra:
        if len(sp.grid) != len(grid):
            raise ShapeMismatch("all spectra must share one grid")
    if times is None:
        times = [sp.time if sp.time is not None else float(k) for k, sp in enumerate(spectra)]
    cands = []
    for sp in spectra:
        if top_k is None or top_k >= len(grid):
            idx = np.arange(len(grid))
        else:
            idx = np.sort(np.argsort(-sp.scores, kind="stable")[:top_k])
        cands.append(idx)
    V = grid.vectors
    score = spectra[0].scores[cands[0]].astype(np.float64)
    back = []
    for t in range(1, len(spectra)):
        prev, cur = cands[t - 1], cands[t]
        trans = score[:, None] - transition_penalty * _pairwise_angles(V[prev], V[cur])
        arg = np.argmax(trans, axis=0)  # first maximum -> lowest previous index
        score = trans[arg, np.arange(len(cur))] + spectra[t].scores[cur]
        back.append(arg)
    path = [int(np.argmax(score))]
    for arg in reversed(back):
        path.append(int(arg[path[-1]]))
    path.reverse()
    idx = [int(cands[t][p]) for t, p in enumerate(path)]
    dirs = tuple(grid[i] for i in idx)
    conf = [float(spectra[t].scores[i]) for t, i in enumerate(idx)]
    return Trajectory(np.asarray(times, dtype=float), dirs, np.asarray(conf))


def path_score(spectra, indices, transition_penalty: float) -> float:
    """Objective maximized by :func:`viterbi_smooth` for an explicit index path."""
    V = spectra[0].grid.vectors
    total = sum(float(sp.scores[i]) for sp, i in zip(spectra, indices))
    steps = sum(float(angle_between(V[a], V[b])) for a, b in zip(indices, indices[1:]))
    return total - transition_penalty * steps


def sliding_windows(n_samples: int, sample_rate: float, window: float, stride: float):
    """(start, stop, center_time) of each full window."""
    size = int(round(window * sample_rate))
    step = int(round(stride * sample_rate))
    if size > n_samples:
        raise RecordingTooShort(f"recording shorter than the {window} s window")
    if step <= 0:
        raise ValueError("stride must be positive")
    out = []
    start = 0
    while start + size <= n_samples:
        out.append((start, start + size, (start + size / 2) / sample_rate))
        start += step
    return out


SpectrumFn = Callable[[MultichannelRecording, DirectionGrid], AngularSpectrum]


def localize_windows(recording: MultichannelRecording, spectrum_fn: SpectrumFn, grid: DirectionGrid,
                     window: float, stride: float) -> tuple[Trajectory, list[AngularSpectrum]]:
    """Per-window peak estimates (the raw trajectory) and their spectra."""
    spectra, dirs, conf, times = [], [], [], []
    for start, stop, center in sliding_windows(recording.n_samples, recording.sample_rate, window, stride):
        sp = spectrum_fn(recording.segment(start, stop), grid)
        sp = AngularSpectrum(sp.scores, sp.grid, sp.block_range, center, sp.info)
        est = pick_peak(sp)
        spectra.append(sp)
        dirs.append(est.direction)
        conf.append(est.confidence)
        times.append(center)
    return Trajectory(np.array(times), tuple(dirs), np.array(conf)), spectra


def coarse_to_fine(recording: MultichannelRecording, spectrum_fn: SpectrumFn, grid: DirectionGrid,
                   window: float = 1.0, search_radius: float = 30.0, stride: float = 0.25) -> Trajectory:
    """Global direction first, then windowed estimates restricted around it.

    Stage 1 localizes on the whole recording to get a global direction g.
    Stage 2 localizes each sliding window on the grid points within
    ``search_radius`` degrees of g.
    """
    if recording.n_samples < int(round(window * recording.sample_rate)):
        raise RecordingTooShort(f"recording shorter than the {window} s window")
    g = pick_peak(spectrum_fn(recording, grid)).direction
    sub = grid.subset(grid.within(g, search_radius))
    if len(sub) == 0:
        sub = grid.subset([grid.nearest(g)])
    traj, _ = localize_windows(recording, spectrum_fn, sub, window, stride)
    return traj


def spherical_mean(vectors: np.ndarray) -> np.ndarray | None:
    m = np.asarray(vectors).mean(axis=0)
    n = np.linalg.norm(m)
    return None if n < 1e-12 else m / n


def sample_at_timestamps(traj: Trajectory, query_times, window: float = 0.5) -> list[Direction]:
    """Spherical mean of trajectory points within +-window/2 of each query time.

    Falls back to the nearest trajectory point when the window is empty (or
    the points cancel out).
    """
    if len(traj) == 0:
        raise EmptyTrajectory("cannot sample an empty trajectory")
    V = traj.vectors
    out = []
    for t in np.atleast_1d(query_times):
        inside = np.abs(traj.times - t) <= window / 2 + 1e-12
        m = spherical_mean(V[inside]) if inside.any() else None
        if m is None:
            out.append(traj.directions[int(np.argmin(np.abs(traj.times - t)))])
        else:
            out.append(Direction.from_vector(m))
    return out
