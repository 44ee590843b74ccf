import pytest

from face3dsr.config import ConfigError, TrainConfig, parse_kv, read_kv


def test_parse_kv_handles_comments_and_whitespace():
    kv = parse_kv("# header\nscale = 4\n  lr=0.001   # inline\n\nchannels =32\n")
    assert kv == {"scale": "4", "lr": "0.001", "channels": "32"}


def test_keys_are_case_sensitive():
    assert parse_kv("Scale = 4") == {"Scale": "4"}


def test_defaults_follow_training_protocol():
    cfg = TrainConfig()
    assert (cfg.scale, cfg.lr, cfg.lr_step, cfg.lr_size) == (8, 2e-4, 50, 16)
    assert TrainConfig(scale=4).lr_size == 32


def test_typed_parsing(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("scale=4\nno_prior = yes\nregressor_widths = 8, 16,32 64\nlr = 1e-3\ndata_dir = faces/ \n")
    cfg = TrainConfig.load(path)
    assert cfg.scale == 4 and cfg.no_prior is True and cfg.lr == 1e-3
    assert cfg.regressor_widths == (8, 16, 32, 64) and cfg.data_dir == "faces/"


@pytest.mark.parametrize("text", [
    "scale = 2", "scale = eight", "bogus = 1", "channels = 30\nreduction = 16", "lr = 0",
    "no_prior = maybe", "batch = 0", "this line has no delimiter",
])
def test_bad_configs_raise_config_error(text):
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping(parse_kv(text))


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        read_kv(tmp_path / "absent.cfg")


def test_digest_tracks_content():
    a = TrainConfig()
    assert a.digest() == TrainConfig().digest()
    assert a.digest() != a.replace(no_prior=True).digest()
    assert TrainConfig.from_mapping({k: str(v) for k, v in {"seed": 3}.items()}).seed == 3
