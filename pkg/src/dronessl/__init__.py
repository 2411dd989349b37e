"""Sound source localization for drone-mounted microphone arrays.

Layers, bottom up: :mod:`spectral` (STFT and spatial covariance),
:mod:`geometry` (array, delays, direction grids), :mod:`enhance` (ego-noise
suppression), :mod:`localize` (angular spectra), :mod:`tracking` (in-flight
smoothing), :mod:`simulate` (synthetic scenes), :mod:`evaluation` (scoring),
:mod:`io` (file formats), :mod:`pipeline` and :mod:`cli`.
"""
from .config import PipelineConfig, load_config
from .errors import SSLError
from .geometry import ArrayGeometry, Direction, DirectionGrid, build_grid, cube_array, great_circle_distance
from .recording import MultichannelRecording

__version__ = "0.1.0"

__all__ = ["ArrayGeometry", "Direction", "DirectionGrid", "MultichannelRecording", "PipelineConfig",
           "SSLError", "build_grid", "cube_array", "great_circle_distance", "load_config"]
