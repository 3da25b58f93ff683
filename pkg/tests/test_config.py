import pytest

from hetgraph.config import ConfigError, RunConfig, dump_config, load_config


class TestRunConfig:
    def test_defaults_valid(self):
        assert RunConfig().threshold == 0.9 and RunConfig.desk().hidden == 32

    @pytest.mark.parametrize("bad", [dict(threshold=0.0), dict(strategy="x"), dict(protocol="x"),
                                     dict(hidden=0), dict(lr=-1.0), dict(roi_bins=(0, 2))])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            RunConfig(**bad)

    def test_roundtrip(self, tmp_path):
        cfg = RunConfig.desk(lr=0.05, k_list=(5, 10), rrm=False)
        p = tmp_path / "run.cfg"
        p.write_text(dump_config(cfg))
        assert load_config(p) == cfg

    def test_file_format(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# desk\nhidden = 8  # small\nrrm = no\nk_list = 20, 50\n")
        cfg = load_config(p)
        assert cfg.hidden == 8 and cfg.rrm is False and cfg.k_list == (20, 50)

    def test_overlay_on_base(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("steps = 7\n")
        cfg = load_config(p, base=RunConfig.desk())
        assert cfg.steps == 7 and cfg.hidden == 32

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("hiden = 8\n")
        with pytest.raises(ConfigError, match="hiden"):
            load_config(p)

    def test_bad_value(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("hidden = lots\n")
        with pytest.raises(ConfigError, match="hidden"):
            load_config(p)
