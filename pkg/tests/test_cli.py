import json
from pathlib import Path

import numpy as np
import pytest

from subelliptic.cli import main, _write_csv
from subelliptic.config import (RunConfig, config_from_dict, load_config)
from subelliptic.errors import ConfigError


class TestRunConfig:
    def test_defaults_valid(self):
        cfg = RunConfig(family="heisenberg_nonsmooth")
        assert cfg.patch_radius == 0.5
        assert cfg.phi_R_effective == 2.0
        assert cfg.kernel_name == "heisenberg"

    def test_unknown_family_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(family="not_a_family")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"family": "heisenberg_model", "bogus": 1})

    def test_odd_coarse_grid_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(family="heisenberg_nonsmooth", grid_shape=(7, 8, 8))

    def test_odd_fine_grid_allowed(self):
        cfg = RunConfig(family="heisenberg_nonsmooth", fine_shape=(33, 33, 33))
        assert cfg.fine_shape == (33, 33, 33)

    def test_phi_R_lower_bound(self):
        with pytest.raises(ConfigError):
            RunConfig(family="heisenberg_nonsmooth", patch_radius=0.5,
                      phi_R=1.0)
        cfg = RunConfig(family="heisenberg_nonsmooth", patch_radius=0.25,
                        phi_R=1.0)
        assert cfg.phi_R_effective == 1.0

    def test_hash_depends_on_content(self):
        a = RunConfig(family="heisenberg_model", seed=0)
        b = RunConfig(family="heisenberg_model", seed=0)
        c = RunConfig(family="heisenberg_model", seed=1)
        assert a.hash == b.hash
        assert a.hash != c.hash

    def test_grushin_has_no_kernel(self):
        cfg = RunConfig(family="grushin_nonsmooth")
        assert cfg.kernel_name is None


class TestLoadConfig:
    def test_roundtrip(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text('family = "kolmogorov_model"\nseed = 3\n'
                     'grid_shape = [6, 6, 6]\n')
        cfg = load_config(p)
        assert cfg.family == "kolmogorov_model"
        assert cfg.seed == 3
        assert cfg.grid_shape == (6, 6, 6)

    def test_malformed_toml(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("family = [unterminated\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.toml")

    def test_family_params(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text('family = "kolmogorov_nonsmooth"\n'
                     '[family_params]\nalpha = 0.25\n')
        cfg = load_config(p)
        assert cfg.family_params == {"alpha": 0.25}


def _write_config(tmp_path, text):
    p = tmp_path / "run.toml"
    p.write_text(text)
    return str(p)


class TestMain:
    def test_check_full_rank(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, (
            'family = "grushin_nonsmooth"\n'
            f'output_dir = "{tmp_path}/runs"\n'))
        assert main(["check", "--config", cfg]) == 0
        out = list((tmp_path / "runs").glob("check_*.json"))
        assert len(out) == 1
        report = json.loads(out[0].read_text())
        assert report["full_rank_everywhere"] is True
        assert report["config_hash"]
        assert any(b["weight"] > 1 for b in report["bracket_table"])

    def test_missing_config_is_execution_error(self):
        assert main(["check", "--config", "/nonexistent.toml"]) == 1

    def test_invalid_family_is_execution_error(self, tmp_path):
        cfg = _write_config(tmp_path, 'family = "bogus"\n')
        assert main(["check", "--config", cfg]) == 1

    def test_distance_pairs(self, tmp_path):
        cfg = _write_config(tmp_path, (
            'family = "heisenberg_model"\n'
            f'output_dir = "{tmp_path}/runs"\n'))
        pairs = tmp_path / "pairs.csv"
        pairs.write_text("0.1,0.0,0.0,0.0,0.1,0.0\n"
                         "0.2,0.1,0.0,-0.1,0.0,0.05\n")
        assert main(["distance", "--config", cfg,
                     "--pairs", str(pairs)]) == 0
        out = list((tmp_path / "runs").glob("distance_*.csv"))
        assert len(out) == 1
        lines = out[0].read_text().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert lines[1].split(",")[-2:] == ["d_fast", "d_upper"]
        rows = [line.split(",") for line in lines[2:]]
        assert len(rows) == 2
        for row in rows:
            d_fast, d_upper = float(row[-2]), float(row[-1])
            assert d_fast > 0 and d_upper > 0

    def test_distance_malformed_pairs(self, tmp_path):
        cfg = _write_config(tmp_path, (
            'family = "heisenberg_model"\n'
            f'output_dir = "{tmp_path}/runs"\n'))
        pairs = tmp_path / "pairs.csv"
        pairs.write_text("0.1,0.0,0.0\n")           # wrong column count
        assert main(["distance", "--config", cfg,
                     "--pairs", str(pairs)]) == 1

    def test_csv_writer_deterministic(self, tmp_path):
        cfg = RunConfig(family="heisenberg_model")
        rows = [[0.1, -2.5e-7, "tag"], [1 / 3, 2.0, "x"]]
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        _write_csv(a, cfg, ["u", "v", "s"], rows)
        _write_csv(b, cfg, ["u", "v", "s"], rows)
        assert a.read_bytes() == b.read_bytes()
        assert f"config_hash={cfg.hash}" in a.read_text()
