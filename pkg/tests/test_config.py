import pytest

from aosr.config import describe_defaults, load_config, parse_config
from aosr.errors import ConfigError


class TestParse:
    def test_sections_and_comments(self):
        raw = parse_config("""
# comment
[train]
epochs = 3   # trailing
lr = 0.002
[loss]
fe_channels = 4,8,16
layer_weights = 0.5,0.25,0.25
""")
        assert raw == {"train": {"epochs": 3, "lr": 0.002},
                       "loss": {"fe_channels": (4, 8, 16), "layer_weights": (0.5, 0.25, 0.25)}}

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="'epoch'"):
            parse_config("[train]\nepoch = 3\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match=r"\[optim\]"):
            parse_config("[optim]\nlr = 1\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="epochs"):
            parse_config("[train]\nepochs = many\n")

    def test_malformed(self):
        with pytest.raises(ConfigError):
            parse_config("epochs = 3\n")


class TestLoad:
    def test_defaults(self):
        cfg = load_config(None)
        assert cfg["train"].epochs == 100 and cfg["train"].lr == 1e-3
        assert cfg["model"].alpha == 1.6 and cfg["model"].beta_ctrl == 1.0
        assert cfg["loss"].lambda1 == 0.25 and cfg["loss"].lambda2 == 0.5
        assert cfg["synth"].box == ((0.6, 0.75), (0.45, 0.65), (0.2, 0.45))

    def test_file_values(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[model]\nmixup_placement = none\n[synth]\nairlight_r = 0.5,0.7\n")
        cfg = load_config(p)
        assert cfg["model"].mixup_placement == "none"
        assert cfg["synth"].box[0] == (0.5, 0.7)

    def test_invalid_value_caught_by_validation(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nepochs = 0\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.ini")

    def test_help_lists_every_key(self):
        from dataclasses import fields

        from aosr.config import SECTIONS
        text = describe_defaults()
        for name, cls in SECTIONS.items():
            assert f"[{name}]" in text
            for f in fields(cls):
                assert f"    {f.name} = " in text
