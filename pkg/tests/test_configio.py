"""Flat key=value config parsing for the CLI."""

import pytest

from stereoforge.configio import (apply_overrides, data_options_from,
                                  network_config_from, parse_dims, parse_kv,
                                  parse_stages, train_config_from)
from stereoforge.network import NetworkConfig
from stereoforge.training import TrainConfig


class TestParseKv:
    def test_basic_lines(self):
        kv = parse_kv("a = 1\nb=two\n")
        assert kv == {"a": "1", "b": "two"}

    def test_comments_and_blanks(self):
        kv = parse_kv("# header\n\nx = 5  # inline\n")
        assert kv == {"x": "5"}

    def test_later_lines_win(self):
        assert parse_kv("k = 1\nk = 2\n") == {"k": "2"}

    def test_missing_equals(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_kv("a = 1\nnot a pair\n")


class TestOverrides:
    def test_sets_win_over_file(self):
        merged = apply_overrides({"a": "1", "b": "2"}, ["b=3", "c = 4"])
        assert merged == {"a": "1", "b": "3", "c": "4"}

    def test_original_mapping_untouched(self):
        kv = {"a": "1"}
        apply_overrides(kv, ["a=9"])
        assert kv == {"a": "1"}

    def test_malformed_set(self):
        with pytest.raises(ValueError, match="KEY=VALUE"):
            apply_overrides({}, ["oops"])


class TestValueSyntax:
    def test_stages(self):
        assert parse_stages("2x64,2x128") == ((2, 64), (2, 128))
        assert parse_stages(" 1x8 , 3x512 ") == ((1, 8), (3, 512))

    def test_stages_malformed(self):
        with pytest.raises(ValueError, match="countxchannels"):
            parse_stages("64")

    def test_dims(self):
        assert parse_dims("384x160") == (384, 160)

    def test_dims_malformed(self):
        with pytest.raises(ValueError, match="dims"):
            parse_dims("384")


class TestNetworkConfigFrom:
    def test_defaults_to_toy(self):
        assert network_config_from({}) == NetworkConfig.toy()

    def test_full_override(self):
        kv = parse_kv("""
network.width = 128
network.height = 64
network.stages = 1x4,1x8
network.fc_hidden = 32
network.d_min = -4
network.d_max = 6
network.init_std = 0.1
network.seed = 7
network.side_branches = false
""")
        cfg = network_config_from(kv)
        assert cfg.input_hw == (64, 128)
        assert cfg.stages == ((1, 4), (1, 8))
        assert cfg.fc_hidden == 32
        assert (cfg.disparity.d_min, cfg.disparity.d_max) == (-4, 6)
        assert cfg.init_std == 0.1
        assert cfg.seed == 7
        assert cfg.side_branches is False
        # fc grid follows the trunk depth when not pinned
        assert cfg.fc_spatial == (16, 32)

    def test_explicit_fc_spatial(self):
        kv = {"network.fc_spatial": "32x16"}  # WxH on disk, (h, w) in config
        cfg = network_config_from(kv)
        assert cfg.fc_spatial == (16, 32)

    def test_non_network_keys_ignored(self):
        cfg = network_config_from({"train.base_lr": "0.1"})
        assert cfg == NetworkConfig.toy()

    def test_unknown_network_key(self):
        with pytest.raises(ValueError, match="network.depth"):
            network_config_from({"network.depth": "5"})

    def test_boolean_spellings(self):
        for raw, want in (("true", True), ("1", True), ("on", True),
                          ("false", False), ("0", False), ("off", False)):
            cfg = network_config_from({"network.use_selection": raw})
            assert cfg.use_selection is want
        with pytest.raises(ValueError, match="boolean"):
            network_config_from({"network.use_selection": "maybe"})


class TestTrainConfigFrom:
    def test_defaults(self):
        assert train_config_from({}) == TrainConfig()

    def test_overrides(self):
        kv = parse_kv("""
train.batch_size = 8
train.total_iters = 250
train.base_lr = 0.01
train.momentum = 0.9
train.dropout = 0.0
""")
        cfg = train_config_from(kv)
        assert cfg.batch_size == 8
        assert cfg.total_iters == 250
        assert cfg.base_lr == 0.01
        assert cfg.momentum == 0.9
        assert cfg.dropout == 0.0
        assert cfg.lr_step == TrainConfig().lr_step

    def test_base_carries_through(self):
        base = TrainConfig(batch_size=4, total_iters=10)
        cfg = train_config_from({"train.base_lr": "0.5"}, base=base)
        assert cfg.batch_size == 4
        assert cfg.base_lr == 0.5

    def test_unknown_train_key(self):
        with pytest.raises(ValueError, match="train.optimizer"):
            train_config_from({"train.optimizer": "adam"})

    def test_invalid_value_caught_by_config(self):
        with pytest.raises(ValueError, match="weight"):
            train_config_from({"train.weight_decay": "0.1"})


class TestDataOptions:
    def test_resize(self):
        assert data_options_from({"data.resize": "72x36"}) == {
            "resize_to": (72, 36)}

    def test_network_and_train_keys_pass_through(self):
        assert data_options_from({"network.seed": "1", "train.seed": "2"}) == {}

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="data.flip"):
            data_options_from({"data.flip": "true"})
