"""Pipeline configuration: a sectioned key-value (INI) file.

Example::

    [grid]
    az_step = 5
    el_step = 5

    [enhance]
    chain = highpass, mwf      # applied in order; empty for none
    noise = vad                # vad | whole | motor-template | recursive | oracle

    [localize]
    method = srp_phat          # srp_phat | srp_nonlin | music | gevd_music

    [tracking]
    method = kalman            # none | kalman | viterbi | coarse_to_fine

Unknown sections, unknown keys, bad numbers and out-of-range values are all
collected and reported together in one :class:`ValidationError`.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields

from .errors import FileNotFound, IoFailure, ParseError, ValidationError

ENHANCE_OPS = ("highpass", "mwf", "select_pairs")
NOISE_ESTIMATORS = ("vad", "whole", "motor-template", "recursive", "oracle")
METHODS = ("srp_phat", "srp_nonlin", "music", "gevd_music")
TRACKERS = ("none", "kalman", "viterbi", "coarse_to_fine")
WINDOWS = ("hann", "hamming", "blackman", "rect")


@dataclass(frozen=True)
class GridConfig:
    az_step: float = 5.0
    el_step: float = 5.0
    el_min: float = -90.0
    el_max: float = 90.0


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 1024
    hop: int = 512
    window: str = "hann"


@dataclass(frozen=True)
class EnhanceConfig:
    chain: tuple[str, ...] = ()
    noise: str = "vad"
    vad_percentile: float = 0.3
    recursive_alpha: float = 0.95
    mu: float = 1.0
    highpass_cutoff: float = 100.0
    highpass_order: int = 4
    pair_snr_floor_db: float = 0.0


@dataclass(frozen=True)
class LocalizeConfig:
    method: str = "srp_phat"
    gamma: float = 0.3
    band_min: float = 100.0
    band_max: float = 8000.0
    n_sources: int = 1


@dataclass(frozen=True)
class TrackingConfig:
    method: str = "none"
    window: float = 0.5
    stride: float = 0.125
    process_noise: float = 5.0
    measurement_noise: float = 5.0
    initial_var: float = 900.0
    gate_sigma: float = 3.0
    transition_penalty: float = 0.02
    top_k: int = 50
    search_radius: float = 30.0
    sample_window: float = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    localize: LocalizeConfig = field(default_factory=LocalizeConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)

    @property
    def method(self) -> str:
        return self.localize.method

    @property
    def band(self) -> tuple[float, float]:
        return (self.localize.band_min, self.localize.band_max)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_ini(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"[{f.name}]")
            for k, v in asdict(getattr(self, f.name)).items():
                lines.append(f"{k} = {', '.join(v) if isinstance(v, (tuple, list)) else v}")
            lines.append("")
        return "\n".join(lines)


_SECTIONS = {"grid": GridConfig, "stft": StftConfig, "enhance": EnhanceConfig,
             "localize": LocalizeConfig, "tracking": TrackingConfig}


def _convert(section: str, key: str, raw: str, default, errors: list):
    where = f"[{section}] {key}"
    if isinstance(default, tuple):
        return tuple(p.strip().lower() for p in raw.split(",") if p.strip())
    if isinstance(default, bool):
        errors.append(f"{where}: booleans are not supported")
        return default
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            errors.append(f"{where}: {raw!r} is not an integer")
            return default
    if isinstance(default, float):
        try:
            v = float(raw)
        except ValueError:
            errors.append(f"{where}: {raw!r} is not a number")
            return default
        if v != v or v in (float("inf"), float("-inf")):
            errors.append(f"{where}: {raw!r} is not finite")
            return default
        return v
    return raw.strip().lower()


def _check(cfg: PipelineConfig) -> list[str]:
    e = []
    g, s, en, lo, tr = cfg.grid, cfg.stft, cfg.enhance, cfg.localize, cfg.tracking

    def need(cond, msg):
        if not cond:
            e.append(msg)

    need(g.az_step > 0 and g.el_step > 0, "[grid] steps must be > 0")
    need(-90 <= g.el_min <= g.el_max <= 90, "[grid] need -90 <= el_min <= el_max <= 90")
    need(s.fft_size >= 2 and s.fft_size & (s.fft_size - 1) == 0, f"[stft] fft_size {s.fft_size} is not a power of two")
    need(0 < s.hop <= s.fft_size, f"[stft] hop {s.hop} must be in (0, fft_size]")
    need(s.window in WINDOWS, f"[stft] unknown window {s.window!r} (choose from {', '.join(WINDOWS)})")
    for op in en.chain:
        need(op in ENHANCE_OPS, f"[enhance] unknown operation {op!r} in chain (choose from {', '.join(ENHANCE_OPS)})")
    need(en.noise in NOISE_ESTIMATORS, f"[enhance] unknown noise estimator {en.noise!r}")
    need(0 < en.vad_percentile <= 1, "[enhance] vad_percentile must be in (0, 1]")
    need(0 <= en.recursive_alpha < 1, "[enhance] recursive_alpha must be in [0, 1)")
    need(en.mu >= 0, "[enhance] mu must be >= 0")
    need(en.highpass_cutoff > 0, "[enhance] highpass_cutoff must be > 0")
    need(1 <= en.highpass_order <= 12, "[enhance] highpass_order must be in 1..12")
    need(lo.method in METHODS, f"[localize] unknown method {lo.method!r} (choose from {', '.join(METHODS)})")
    need(0 < lo.gamma <= 1, f"[localize] gamma {lo.gamma} for srp_nonlin must be in (0, 1]")
    need(0 <= lo.band_min < lo.band_max, "[localize] need 0 <= band_min < band_max")
    need(lo.n_sources >= 1, "[localize] n_sources must be >= 1")
    need(tr.method in TRACKERS, f"[tracking] unknown method {tr.method!r} (choose from {', '.join(TRACKERS)})")
    need(tr.window > 0 and tr.stride > 0 and tr.sample_window > 0,
         "[tracking] window lengths and stride must be > 0")
    need(tr.process_noise > 0 and tr.measurement_noise > 0 and tr.initial_var > 0,
         "[tracking] Kalman parameters must be > 0")
    need(tr.gate_sigma > 0, "[tracking] gate_sigma must be > 0")
    need(tr.transition_penalty >= 0, "[tracking] transition_penalty must be >= 0")
    need(tr.top_k >= 0, "[tracking] top_k must be >= 0 (0 searches the full grid)")
    need(0 < tr.search_radius <= 180, "[tracking] search_radius must be in (0, 180]")
    return e


def parse_config(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ParseError(f"config syntax error: {exc}") from exc
    errors: list[str] = []
    parts = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            errors.append(f"unknown section [{name}]")
    for name, cls in _SECTIONS.items():
        defaults = cls()
        values = {}
        if parser.has_section(name):
            known = {f.name for f in fields(cls)}
            for key, raw in parser.items(name):
                if key not in known:
                    errors.append(f"[{name}] unknown key {key!r}")
                    continue
                values[key] = _convert(name, key, raw, getattr(defaults, key), errors)
        parts[name] = cls(**values)
    cfg = PipelineConfig(**parts)
    errors += _check(cfg)
    if errors:
        raise ValidationError(errors)
    return cfg


def validate(cfg: PipelineConfig) -> PipelineConfig:
    errors = _check(cfg)
    if errors:
        raise ValidationError(errors)
    return cfg


def load_config(path) -> PipelineConfig:
    """Read and validate a config file, reporting every problem at once."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError as exc:
        raise FileNotFound(f"{path}: no such file") from exc
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid UTF-8") from exc
    return parse_config(text)
