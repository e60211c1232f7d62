"""Tests for src/config.py"""

import json

import pytest

from src.config import (
    EmConfig,
    ModelSpec,
    RunManifest,
    TailConfig,
    VarianceConfig,
    load_config,
    resolve,
    to_dict,
)
from src.errors import ConfigError, ConstraintViolation, DomainError
from src.markov_model import build_max


class TestModelSpec:
    """Tests for ModelSpec."""

    def test_defaults_build_max(self):
        P = ModelSpec().build()
        assert P.label == build_max(0.9, 0.7, 0.05).label

    @pytest.mark.parametrize("kind", ["ind", "max", "min"])
    def test_presets(self, kind):
        assert ModelSpec(kind, p=0.7, q=0.7).build().k == 2

    def test_general_needs_parameters(self):
        with pytest.raises(ConfigError):
            ModelSpec("general", p=0.8, q=0.4, lambda1=0.7).build()

    def test_general(self):
        spec = ModelSpec("general", p=0.8, q=0.4, p_prime=0.6, q_prime=0.5,
                         lambda1=0.7, lambda2=0.6, mu1=0.7, mu2=0.6)
        assert spec.build().dim == 4

    def test_general_violation(self):
        with pytest.raises(ConstraintViolation):
            ModelSpec("general", p=0.7, q=0.7, lambda1=0.3, lambda2=0.7, mu1=0.7, mu2=0.7).build()

    def test_file(self, tmp_path):
        path = tmp_path / "P.json"
        path.write_text(json.dumps(build_max(0.9, 0.7, 0.05).to_json()))
        P = ModelSpec("file", path=str(path)).build()
        assert P.entries[3, 3] == pytest.approx(0.85)
        with pytest.raises(ConfigError):
            ModelSpec("file").build()

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            ModelSpec("nope").build()

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ModelSpec.from_dict({"kind": "max", "rho": 1})


class TestEmConfig:
    """Tests for EmConfig."""

    def test_grid(self):
        config = EmConfig(m_start=100, m_stop=3000, m_step=100)
        grid = config.m_grid()
        assert grid[0] == 100 and grid[-1] == 3000 and len(grid) == 30
        assert config.chain_length == 9000

    def test_grid_includes_stop(self):
        assert EmConfig(m_start=10, m_stop=25, m_step=10).m_grid() == [10, 20, 25]

    def test_invalid_grid(self):
        with pytest.raises(ConfigError):
            EmConfig(m_start=50, m_stop=10).validate()
        with pytest.raises(ConfigError):
            EmConfig(n_chains=0).validate()
        with pytest.raises(ConfigError):
            EmConfig(patterns=[]).validate()

    def test_scoring_default_is_lcs(self):
        assert EmConfig().scoring(2).is_lcs
        scheme = EmConfig(scheme={"table": [[1, 0], [0, 1]], "delta": 0.5}).scoring(2)
        assert not scheme.is_lcs

    def test_patterns(self):
        patterns = EmConfig(patterns=["1,0", "0,1"]).triplet_patterns()
        assert [p.D.x for p in patterns] == [1, 0]


class TestOtherConfigs:
    """Tests for VarianceConfig and TailConfig validation."""

    def test_variance(self):
        with pytest.raises(ConfigError):
            VarianceConfig(replicates=1).validate()
        with pytest.raises(ConfigError):
            VarianceConfig(n_grid=[2, 300]).validate()
        VarianceConfig().validate()

    def test_tail(self):
        with pytest.raises(ConfigError):
            TailConfig(n=2).validate()
        with pytest.raises(DomainError):
            TailConfig(b_o=0.0).validate()


class TestResolve:
    """Tests for config-file loading and precedence."""

    def test_precedence(self):
        file_values = {"seed": 1, "n_chains": 5, "model": {"kind": "ind", "p": 0.6, "q": 0.6}}
        flags = {"seed": 9, "n_chains": None, "model": {"p": 0.8, "q": None}}
        config = resolve(EmConfig, file_values, flags)
        assert config.seed == 9
        assert config.n_chains == 5
        assert config.model.kind == "ind"
        assert config.model.p == 0.8
        assert config.model.q == 0.6

    def test_defaults(self):
        config = resolve(TailConfig)
        assert config.n == 900
        assert config.model.kind == "max"

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            resolve(EmConfig, {"chains": 3})

    def test_validation_runs(self):
        with pytest.raises(ConfigError):
            resolve(EmConfig, {"m_step": 0})

    def test_load_plain(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 3}))
        assert load_config(path) == {"seed": 3}

    def test_load_manifest(self, tmp_path):
        config = EmConfig(seed=11)
        manifest = RunManifest("simulate-em", to_dict(config), 11, "1.0.0", "t0", "t1", ["em.csv"])
        path = manifest.write(tmp_path)
        assert path.name == "simulate-em.manifest.json"
        assert RunManifest.read(path) == manifest
        again = resolve(EmConfig, load_config(path))
        assert again == config

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ConfigError):
            load_config(bad)
        listing = tmp_path / "list.json"
        listing.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config(listing)
