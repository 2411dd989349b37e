"""Angular spectra: GCC, steered-response power, (GEVD-)MUSIC and post-processing.

Lag convention: for a pair (i, j) the correlation peaks at the delay of
channel j relative to channel i, which is exactly ``geometry.tdoa(d, geom, i, j)``
for a far-field source in direction d.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .enhance import NoiseModel, PairMask, diagonal_load
from .errors import AllMasked, EmptyInput, InsufficientEnergy, ShapeMismatch, SingularNoiseCovariance
from .geometry import (ArrayGeometry, Direction, DirectionGrid, angle_between, pair_tdoas,
                       steering_matrix, vector_to_angles)
from .spectral import SpatialCovariance, as_spectrogram

MASKED = -np.finfo(np.float64).max
DEFAULT_BAND = (100.0, 8000.0)
DEFAULT_GAMMA = 0.3
ENERGY_FLOOR = 1e-12


class DegenerateEigengap(UserWarning):
    """Largest generalized eigenvalues are nearly equal: no dominant source."""


@dataclass(frozen=True, eq=False)
class AngularSpectrum:
    scores: np.ndarray
    grid: DirectionGrid
    block_range: tuple[int, int] = (0, 0)
    time: float | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (len(self.grid),):
            raise ShapeMismatch(f"{scores.shape[0] if scores.ndim else 0} scores for a grid of {len(self.grid)}")
        if not np.all(np.isfinite(scores)):
            raise ValueError("angular spectrum scores must be finite")
        object.__setattr__(self, "scores", scores)

    def with_scores(self, scores) -> "AngularSpectrum":
        return replace(self, scores=scores)


@dataclass(frozen=True)
class LocalizationEstimate:
    direction: Direction
    confidence: float
    method: str


def _weight(cross: np.ndarray, weighting: str, gamma: float) -> np.ndarray:
    mag = np.abs(cross)
    safe = np.where(mag > 0, mag, 1.0)
    if weighting == "phat":
        return np.where(mag > 0, cross / safe, 0.0)
    if weighting == "nonlin":
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        return np.where(mag > 0, cross / safe * safe ** gamma, 0.0)
    if weighting == "none":
        return cross
    raise ValueError(f"unknown weighting {weighting!r}")


def gcc(block_i, block_j, weighting: str = "phat", gamma: float = DEFAULT_GAMMA,
        max_lag: int | None = None, bins=None) -> tuple[np.ndarray, np.ndarray]:
    """Generalized cross-correlation of two one-sided spectra.

    Returns ``(lags, values)`` for integer lags ``-max_lag..max_lag``. ``bins``
    optionally restricts the cross-spectrum to a subset of frequency bins.
    """
    xi = np.asarray(block_i)
    xj = np.asarray(block_j)
    if xi.shape != xj.shape or xi.ndim != 1:
        raise ShapeMismatch("gcc needs two 1-D spectra of equal length")
    n = 2 * (len(xi) - 1)
    cross = np.conj(xi) * xj
    if bins is not None:
        keep = np.zeros(len(cross), dtype=bool)
        keep[bins] = True
        cross = np.where(keep, cross, 0.0)
    if not np.any(np.abs(cross) >= ENERGY_FLOOR):
        raise InsufficientEnergy("cross-spectrum magnitude below 1e-12 in every bin")
    r = np.fft.irfft(_weight(cross, weighting, gamma), n=n)
    if max_lag is None:
        max_lag = n // 2 - 1
    max_lag = min(int(max_lag), n // 2 - 1)
    lags = np.arange(-max_lag, max_lag + 1)
    return lags, r[lags % n]


def _pair_index(mask: PairMask | None, n_channels: int) -> np.ndarray:
    if mask is None:
        mask = PairMask.all_pairs(n_channels)
    pairs = np.array(mask.accepted_pairs, dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        raise EmptyInput("no accepted microphone pairs")
    if pairs.max() >= n_channels:
        raise ShapeMismatch("pair mask references missing channels")
    return pairs


def pair_correlations(blocks, pairs, weighting="phat", gamma=DEFAULT_GAMMA, band=DEFAULT_BAND):
    """Block-summed GCC sequences per pair, shape (P, n), plus skip counts.

    Block-pairs whose cross-spectrum is below the energy floor everywhere are
    skipped. Raises InsufficientEnergy if every block-pair was skipped.
    """
    spec = as_spectrogram(blocks)
    bins = spec.band(*band) if band is not None else np.arange(spec.n_bins)
    X = spec.data[:, :, bins]  # (T, C, F)
    cross = np.conj(X[:, pairs[:, 0], :]) * X[:, pairs[:, 1], :]  # (T, P, F)
    valid = np.any(np.abs(cross) >= ENERGY_FLOOR, axis=-1)  # (T, P)
    if not valid.any():
        raise InsufficientEnergy("every block-pair is below the energy floor")
    w = _weight(cross, weighting, gamma) * valid[:, :, None]
    full = np.zeros((len(pairs), spec.n_bins), dtype=complex)
    full[:, bins] = w.sum(axis=0)
    r = np.fft.irfft(full, n=spec.fft_size, axis=-1)
    return r, int((~valid).sum())


def srp(blocks, grid: DirectionGrid, geom: ArrayGeometry, mask: PairMask | None = None,
        weighting: str = "phat", gamma: float = DEFAULT_GAMMA, band=DEFAULT_BAND) -> AngularSpectrum:
    """Steered-response power over a direction grid.

    score(d) = sum over accepted pairs and blocks of the GCC sequence read at the
    fractional lag tdoa(d) * fs, linearly interpolated between integer lags.
    """
    spec = as_spectrogram(blocks)
    if spec.n_frames < 1:
        raise EmptyInput("srp needs at least one block")
    if geom.n_mics != spec.n_channels:
        raise ShapeMismatch(f"geometry has {geom.n_mics} mics, input {spec.n_channels} channels")
    pairs = _pair_index(mask, spec.n_channels)
    r, skipped = pair_correlations(spec, pairs, weighting, gamma, band)
    scores = _steer_correlations(r, pair_tdoas(grid.vectors, geom, pairs) * spec.sample_rate)
    return AngularSpectrum(scores, grid, (spec.first_frame, spec.first_frame + spec.n_frames),
                           info={"skipped_block_pairs": skipped, "method": f"srp-{weighting}"})


def _steer_correlations(r: np.ndarray, lags: np.ndarray) -> np.ndarray:
    """Sum over pairs of r[p] linearly interpolated at lags[:, p] (circular)."""
    n = r.shape[1]
    lo = np.floor(lags)
    frac = lags - lo
    lo = lo.astype(int) % n
    hi = (lo + 1) % n
    p = np.arange(r.shape[0])[None, :]
    vals = (1.0 - frac) * r[p, lo] + frac * r[p, hi]  # (G, P)
    return vals.sum(axis=1)


def _noise_subspace(cov: np.ndarray, n_sources: int) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(cov)  # ascending
    return v[..., :, : cov.shape[-1] - n_sources], w


def music(noisy: SpatialCovariance, grid: DirectionGrid, geom: ArrayGeometry, n_sources: int = 1,
          band=DEFAULT_BAND) -> AngularSpectrum:
    """Classical narrowband MUSIC averaged over bins."""
    C = noisy.n_channels
    if not 1 <= n_sources < C:
        raise ValueError(f"n_sources must be in [1, {C - 1}], got {n_sources}")
    bins = _band_of(noisy, band)
    cov = noisy.restrict(bins).matrices
    En, _ = _noise_subspace(cov, n_sources)
    A = steering_matrix(grid.vectors, geom, bins * noisy.bin_hz)  # (F, G, C)
    A = A / np.linalg.norm(A, axis=-1, keepdims=True)
    proj = np.einsum("fcn,fgc->fgn", En.conj(), A)
    pseudo = 1.0 / np.maximum(np.sum(np.abs(proj) ** 2, axis=-1), 1e-300)
    return AngularSpectrum(pseudo.mean(axis=0), grid, info={"method": "music"})


def _band_of(cov: SpatialCovariance, band) -> np.ndarray:
    bins = cov.bins
    if band is not None:
        f = bins * cov.bin_hz
        bins = bins[(f >= band[0]) & (f <= band[1])]
    if len(bins) == 0:
        raise EmptyInput("no frequency bins in band")
    return bins


def gevd_music(noisy: SpatialCovariance, noise: NoiseModel, grid: DirectionGrid, geom: ArrayGeometry,
               n_sources: int = 1, band=DEFAULT_BAND) -> AngularSpectrum:
    """MUSIC after whitening by the noise covariance (generalized eigendecomposition).

    Per bin, with Phi_n = L L^H: the noise subspace is taken from the eigenvectors
    of L^-1 Phi_x L^-H, and directions are scored with whitened, unit-norm steering
    vectors L^-1 a(d). Per-bin pseudospectra are averaged arithmetically.
    """
    C = noisy.n_channels
    if not 1 <= n_sources < C:
        raise ValueError(f"n_sources must be in [1, {C - 1}], got {n_sources}")
    if noise.noise_cov.n_channels != C:
        raise ShapeMismatch("noise and noisy covariances differ in channel count")
    bins = np.intersect1d(_band_of(noisy, band), noise.noise_cov.bins)
    if len(bins) == 0:
        raise EmptyInput("noise and noisy covariances share no bins in band")
    phi_x = noisy.restrict(bins).matrices
    phi_n = diagonal_load(noise.noise_cov.restrict(bins).matrices)
    tr = np.real(np.trace(phi_n, axis1=-2, axis2=-1))
    if np.any(tr <= 0):
        raise SingularNoiseCovariance("noise covariance is zero in some bins")
    try:
        L = np.linalg.cholesky(phi_n)
    except np.linalg.LinAlgError as exc:
        raise SingularNoiseCovariance("noise covariance not positive definite after loading") from exc
    eye = np.broadcast_to(np.eye(C), phi_n.shape)
    Linv = np.stack([scipy.linalg.solve_triangular(Lf, I, lower=True) for Lf, I in zip(L, eye)])
    white = Linv @ phi_x @ np.conj(np.swapaxes(Linv, -1, -2))
    En, w = _noise_subspace(white, n_sources)
    gap = w[:, -1] / np.maximum(w[:, -2], 1e-300)
    degenerate = int(np.sum(gap < 1.1))
    if degenerate == len(bins):
        warnings.warn(f"eigengap below 1.1 in all {degenerate} bins", DegenerateEigengap, stacklevel=2)
    A = steering_matrix(grid.vectors, geom, bins * noisy.bin_hz)  # (F, G, C)
    At = np.einsum("fij,fgj->fgi", Linv, A)
    At = At / np.linalg.norm(At, axis=-1, keepdims=True)
    proj = np.einsum("fcn,fgc->fgn", En.conj(), At)
    pseudo = 1.0 / np.maximum(np.sum(np.abs(proj) ** 2, axis=-1), 1e-300)
    return AngularSpectrum(pseudo.mean(axis=0), grid,
                           info={"method": "gevd-music", "degenerate_bins": degenerate})


def _neighbourhoods(grid: DirectionGrid, radius: float, chunk: int = 2048):
    cos_r = np.cos(np.deg2rad(radius)) - 1e-12
    V = grid.vectors
    for start in range(0, len(V), chunk):
        yield start, (V[start:start + chunk] @ V.T) >= cos_r


def max_filter(spectrum: AngularSpectrum, radius: float) -> AngularSpectrum:
    """Replace each score by the maximum within ``radius`` degrees (great circle)."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return spectrum.with_scores(spectrum.scores.copy())
    s = spectrum.scores
    out = np.empty_like(s)
    for start, near in _neighbourhoods(spectrum.grid, radius):
        out[start:start + len(near)] = np.max(np.where(near, s[None, :], -np.inf), axis=1)
    return spectrum.with_scores(out)


def mask_rotors(spectrum: AngularSpectrum, rotor_dirs, radius: float) -> AngularSpectrum:
    """Set scores within ``radius`` of any rotor direction to the MASKED sentinel."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    masked = np.zeros(len(spectrum.grid), dtype=bool)
    for d in rotor_dirs:
        masked |= angle_between(spectrum.grid.vectors, d.vector) <= radius
    if masked.all():
        raise AllMasked("every grid direction falls inside a rotor mask")
    scores = np.where(masked, MASKED, spectrum.scores)
    return spectrum.with_scores(scores)


def pick_peak(spectrum: AngularSpectrum, method: str | None = None) -> LocalizationEstimate:
    """Grid argmax; ties go to the lowest grid index."""
    s = spectrum.scores
    if len(s) == 0 or np.all(s <= MASKED):
        raise AllMasked("no unmasked score to pick")
    k = int(np.argmax(s))
    return LocalizationEstimate(spectrum.grid[k], float(s[k]),
                                method or spectrum.info.get("method", "unknown"))


def local_maxima(spectrum: AngularSpectrum, radius: float | None = None) -> np.ndarray:
    """Indices of grid points not exceeded by any neighbour within ``radius``.

    The default radius is 1.5 grid steps, i.e. the immediate ring of neighbours.
    Result is sorted by decreasing score, ties by index.
    """
    grid = spectrum.grid
    if radius is None:
        radius = 1.5 * max(grid.az_step, grid.el_step)
    s = spectrum.scores
    is_max = np.zeros(len(s), dtype=bool)
    for start, near in _neighbourhoods(grid, radius):
        neigh_max = np.max(np.where(near, s[None, :], -np.inf), axis=1)
        is_max[start:start + len(near)] = s[start:start + len(near)] >= neigh_max
    is_max &= s > MASKED
    idx = np.flatnonzero(is_max)
    # drop duplicate physical points (grid poles)
    order = idx[np.lexsort((idx, -s[idx]))]
    kept: list[int] = []
    seen: set = set()
    for k in order:
        key = tuple(np.round(grid.vectors[k], 9) + 0.0)  # + 0.0 folds -0.0 into 0.0
        if key not in seen:
            seen.add(key)
            kept.append(int(k))
    return np.array(kept, dtype=int)


def _farthest_point_init(points: np.ndarray, weights: np.ndarray, k: int) -> np.ndarray:
    centers = [int(np.argmax(weights))]
    while len(centers) < k:
        d = np.min(angle_between(points[:, None, :], points[centers][None, :, :]), axis=1)
        centers.append(int(np.argmax(d)))
    return points[centers].copy()


def spherical_kmeans(points: np.ndarray, k: int, weights=None, iterations: int = 50, tol: float = 1e-6):
    """K-means on unit vectors with centroids renormalized to the sphere.

    Deterministic: initial centroids are the heaviest point and then
    successive farthest points. Returns ``(labels, centroids, mean_norms)``
    where ``mean_norms`` is the length of each cluster's mean vector before
    normalization (0 means the mean was undefined).
    """
    points = np.asarray(points, dtype=np.float64)
    weights = np.ones(len(points)) if weights is None else np.asarray(weights, dtype=np.float64)
    k = min(k, len(points))
    centroids = _farthest_point_init(points, weights, k)
    norms = np.ones(k)
    labels = np.zeros(len(points), dtype=int)
    for _ in range(iterations):
        labels = np.argmax(points @ centroids.T, axis=1)
        new = np.array([points[labels == c].sum(axis=0) if np.any(labels == c) else centroids[c]
                        for c in range(k)])
        counts = np.array([max(np.sum(labels == c), 1) for c in range(k)])
        norms = np.linalg.norm(new, axis=1) / counts
        safe = np.where(norms > 1e-12, np.linalg.norm(new, axis=1), 1.0)
        new = np.where((norms > 1e-12)[:, None], new / safe[:, None], centroids)
        shift = np.max(angle_between(new, centroids)) if k else 0.0
        centroids = new
        if np.deg2rad(shift) < tol:
            break
    labels = np.argmax(points @ centroids.T, axis=1)
    return labels, centroids, norms


def cluster_estimates(spectra, k: int = 2, top_m: int = 1) -> Direction:
    """Consensus direction from the peaks of several angular spectra.

    The ``top_m`` local maxima of each spectrum are clustered on the sphere; the
    centroid of the most populated cluster is returned (ties: larger summed
    score). If that cluster's mean vector vanishes, its highest-scoring peak is
    returned instead.
    """
    spectra = list(spectra)
    if not spectra:
        raise EmptyInput("no spectra to cluster")
    if k < 1 or top_m < 1:
        raise ValueError("k and top_m must be >= 1")
    pts, conf = [], []
    for sp in spectra:
        for idx in local_maxima(sp)[:top_m]:
            pts.append(sp.grid.vectors[idx])
            conf.append(sp.scores[idx])
    if not pts:
        raise EmptyInput("spectra have no unmasked peaks")
    pts = np.array(pts)
    conf = np.array(conf)
    labels, centroids, norms = spherical_kmeans(pts, k, conf)
    counts = np.bincount(labels, minlength=len(centroids))
    sums = np.array([conf[labels == c].sum() for c in range(len(centroids))])
    best = sorted(range(len(centroids)), key=lambda c: (-counts[c], -sums[c], c))[0]
    members = np.flatnonzero(labels == best)
    if norms[best] <= 1e-9 or np.linalg.norm(pts[members].sum(axis=0)) <= 1e-9 * len(members):
        top = members[np.argmax(conf[members])]
        return Direction.from_vector(pts[top])
    az, el = vector_to_angles(centroids[best])
    return Direction(float(az), float(el))


def combine_spectra(spectra) -> AngularSpectrum:
    """Sum of spectra on a shared grid (block ranges merged)."""
    spectra = list(spectra)
    if not spectra:
        raise EmptyInput("no spectra to combine")
    grid = spectra[0].grid
    total = np.zeros(len(grid))
    for sp in spectra:
        if sp.grid is not grid and len(sp.grid) != len(grid):
            raise ShapeMismatch("spectra live on different grids")
        total = total + sp.scores
    lo = min(sp.block_range[0] for sp in spectra)
    hi = max(sp.block_range[1] for sp in spectra)
    return AngularSpectrum(total, grid, (lo, hi), spectra[0].time, dict(spectra[0].info))


def normalize_scores(spectrum: AngularSpectrum) -> AngularSpectrum:
    """Affine map of unmasked scores onto [0, 1]; masked entries stay masked."""
    s = spectrum.scores
    ok = s > MASKED
    lo, hi = s[ok].min(), s[ok].max()
    out = np.where(ok, (s - lo) / (hi - lo) if hi > lo else 0.0, MASKED)
    return spectrum.with_scores(out)


__all__ = [
    "AngularSpectrum", "LocalizationEstimate", "DegenerateEigengap", "MASKED", "gcc", "srp",
    "music", "gevd_music", "max_filter", "mask_rotors", "pick_peak", "local_maxima",
    "cluster_estimates", "spherical_kmeans", "combine_spectra", "normalize_scores",
]
