import pytest

from dronessl.config import PipelineConfig, load_config, parse_config, validate
from dronessl.errors import FileNotFound, ParseError, ValidationError

BASELINE = """
[grid]
az_step = 5
el_step = 5

[enhance]
chain =

[localize]
method = srp_phat
"""


def test_baseline_parses():
    cfg = parse_config(BASELINE)
    assert cfg == PipelineConfig()
    assert cfg.method == "srp_phat" and cfg.enhance.chain == () and cfg.grid.az_step == 5.0


def test_unknown_method_named():
    with pytest.raises(ValidationError, match="srp_magic"):
        parse_config("[localize]\nmethod = srp_magic\n")


def test_negative_gamma():
    with pytest.raises(ValidationError) as ei:
        parse_config("[localize]\nmethod = srp_nonlin\ngamma = -1\n")
    assert any("gamma" in e for e in ei.value.errors)


def test_errors_are_aggregated():
    text = "[grid]\naz_step = -5\n[stft]\nfft_size = 1000\n[bogus]\nx = 1\n[localize]\ngamma = abc\nfoo = 2\n"
    with pytest.raises(ValidationError) as ei:
        parse_config(text)
    msgs = " | ".join(ei.value.errors)
    assert len(ei.value.errors) == 5
    for needle in ("[grid]", "fft_size", "bogus", "gamma", "foo"):
        assert needle in msgs


def test_chain_and_comments():
    cfg = parse_config("[enhance]\nchain = highpass, MWF   # in order\nnoise = oracle\n")
    assert cfg.enhance.chain == ("highpass", "mwf") and cfg.enhance.noise == "oracle"


def test_tracking_ranges():
    with pytest.raises(ValidationError, match="gate_sigma"):
        parse_config("[tracking]\ngate_sigma = 0\n")
    with pytest.raises(ValidationError, match="not finite"):
        parse_config("[tracking]\nprocess_noise = inf\n")


def test_syntax_error():
    with pytest.raises(ParseError):
        parse_config("key without section = 1\n")


def test_ini_round_trip():
    cfg = parse_config("[enhance]\nchain = highpass, mwf\nmu = 2.5\n[tracking]\nmethod = viterbi\ntop_k = 7\n")
    assert parse_config(cfg.to_ini()) == cfg
    assert validate(cfg) is cfg


def test_load_config(tmp_path):
    (tmp_path / "c.ini").write_text(BASELINE)
    assert load_config(tmp_path / "c.ini") == PipelineConfig()
    with pytest.raises(FileNotFound):
        load_config(tmp_path / "missing.ini")
    (tmp_path / "bad.ini").write_bytes(b"\xff\xfe[grid]\n")
    with pytest.raises(ParseError):
        load_config(tmp_path / "bad.ini")
