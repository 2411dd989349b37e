from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True, eq=False)
class MultichannelRecording:
    """Synchronized multichannel audio.

    ``samples`` has shape (channels, n_samples), nominal amplitude in [-1, 1].
    ``channel_map[k]`` is the microphone index recorded on channel ``k``.
    ``motor_rpm`` optionally carries the mean speed of each propeller.
    """

    samples: np.ndarray
    sample_rate: float
    channel_map: tuple[int, ...] | None = None
    motor_rpm: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ShapeMismatch(f"samples must be (channels, n), got {samples.shape}")
        if not self.sample_rate > 0:
            raise ShapeMismatch(f"sample_rate must be positive, got {self.sample_rate}")
        cmap = self.channel_map
        if cmap is None:
            cmap = tuple(range(samples.shape[0]))
        cmap = tuple(int(c) for c in cmap)
        if len(cmap) != samples.shape[0]:
            raise ShapeMismatch("channel_map length differs from channel count")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "channel_map", cmap)
        if self.motor_rpm is not None:
            object.__setattr__(self, "motor_rpm", tuple(float(r) for r in self.motor_rpm))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def with_samples(self, samples) -> "MultichannelRecording":
        """Same metadata, new sample matrix."""
        return MultichannelRecording(samples, self.sample_rate, self.channel_map, self.motor_rpm)

    def segment(self, start: int, stop: int) -> "MultichannelRecording":
        return self.with_samples(self.samples[:, start:stop])
