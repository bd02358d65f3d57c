import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from srgformer.config import ABLATIONS, PRESETS, TrainConfig, load_config
from srgformer.errors import DataError


class TestPresets:
    @pytest.mark.parametrize(
        "name, alpha, beta", [("baby", 0.1, 0.3), ("sports", 0.6, 0.3), ("clothing", 0.2, 0.4)]
    )
    def test_loadable_by_name(self, name, alpha, beta):
        cfg = TrainConfig.from_preset(name)
        assert (cfg.heads, cfg.gamma, cfg.alpha, cfg.beta) == (4, 1e-6, alpha, beta)
        assert TrainConfig.from_dict({"preset": name}) == cfg

    def test_case_insensitive_and_overridable(self):
        assert TrainConfig.from_preset("Baby", seed=3).seed == 3
        assert TrainConfig.from_dict({"preset": "SPORTS", "alpha": 0.5}).alpha == 0.5

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            TrainConfig.from_preset("garden")

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.cg_layers, cfg.heads, cfg.temperature, cfg.patience, cfg.val_cutoff) == (2, 4, 0.2, 20, 20)
        assert set(PRESETS) == {"baby", "sports", "clothing"}


class TestRoundTrip:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_preset_json_round_trip(self, name):
        cfg = TrainConfig.from_preset(name)
        again = TrainConfig.from_dict(json.loads(cfg.to_json()))
        assert again == cfg and again.digest() == cfg.digest()

    @given(
        st.integers(0, 2**31 - 1),
        st.floats(0.0, 1.0),
        st.sampled_from(sorted(ABLATIONS)),
        st.sampled_from(["dense", "masked"]),
    )
    def test_random_round_trip(self, seed, alpha, tag, attention):
        cfg = TrainConfig(seed=seed, alpha=alpha, attention=attention).with_ablation(tag)
        assert TrainConfig.from_dict(json.loads(cfg.to_json())) == cfg

    def test_digest_tracks_content(self):
        assert TrainConfig().digest() == TrainConfig().digest()
        assert TrainConfig(seed=1).digest() != TrainConfig().digest()

    def test_unknown_key_rejected(self):
        with pytest.raises(DataError):
            TrainConfig.from_dict({"embeding_dim": 8})


class TestValidation:
    @pytest.mark.parametrize(
        "kw",
        [
            {"embedding_dim": 0},
            {"embedding_dim": 10, "heads": 4},
            {"alpha": 1.5},
            {"dropout": 1.0},
            {"temperature": 0.0},
            {"attention": "sparse"},
            {"bpr_mode": "plus"},
            {"patience": -1},
        ],
    )
    def test_rejected(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestAblationFlags:
    def test_tags(self):
        cfg = TrainConfig().with_ablation("w/GT", "w/h")
        assert cfg.no_global and cfg.no_hypergraph and cfg.ablation_tag == "w/GT+w/h"
        assert TrainConfig().ablation_tag == "full"
        assert TrainConfig().with_ablation("full") == TrainConfig()

    def test_effective_weights(self):
        cfg = TrainConfig(gamma=0.5, beta=0.4)
        assert cfg.with_ablation("w/MCL").effective_gamma == 0.0
        assert cfg.with_ablation("w/h").effective_beta == 0.0
        assert (cfg.effective_gamma, cfg.effective_beta) == (0.5, 0.4)

    def test_modalities(self):
        avail = {"visual": None, "textual": None}
        assert TrainConfig().modalities(avail) == ["textual", "visual"]
        assert TrainConfig().with_ablation("w/t").modalities(avail) == ["visual"]

    def test_unknown_tag(self):
        with pytest.raises(ValueError):
            TrainConfig().with_ablation("w/x")


class TestLoadConfig:
    def test_file_then_overrides_then_env(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"preset": "clothing", "seed": 1, "lr": 0.5}))
        cfg = load_config(path, {"lr": "0.01", "in_batch_negatives": "true"}, env={"SRGF_SEED": "42"})
        assert (cfg.alpha, cfg.lr, cfg.seed, cfg.in_batch_negatives) == (0.2, 0.01, 42, True)

    def test_env_absent(self):
        assert load_config(None, {"seed": "7"}, env={}).seed == 7

    def test_bad_inputs(self, tmp_path):
        with pytest.raises(KeyError):
            load_config(None, {"bogus": "1"}, env={})
        with pytest.raises(ValueError):
            load_config(None, {"no_global": "maybe"}, env={})
        with pytest.raises(DataError):
            load_config(tmp_path / "missing.json", env={})
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(DataError):
            load_config(tmp_path / "bad.json", env={})
