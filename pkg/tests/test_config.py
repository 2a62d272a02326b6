"""
Unit tests for model configuration and the variant registries
"""

from dataclasses import replace

import pytest

from src.core import ConfigError
from src.models import (
    DecoderKind,
    GlobalBias,
    HLG_VARIANTS,
    HlgHead,
    MlaPlan,
    SetrConfig,
    canonical_dict,
    config_from_dict,
    hlg_toy,
    hlg_variant,
    model_config,
    setr_toy,
    setr_variant,
)
from src.models.config import DecoderConfig, with_overrides


class TestSetrVariants:
    """Test the named SETR models"""

    def test_large_pup(self):
        """Test the default backbone and its auxiliary taps"""
        config = setr_variant("pup")
        assert config.name == "setr-pup-t-large"
        assert (config.encoder.layers, config.encoder.hidden, config.encoder.heads) == (24, 1024, 16)
        assert config.decoder.aux_taps == [10, 15, 20, 24]
        assert config.encoder.pos_grid == (48, 48)

    def test_base_mla_taps(self):
        """Test MLA taps default to uniform spacing"""
        config = setr_variant(DecoderKind.MLA, "t-base", num_classes=150, image_size=512)
        assert config.decoder.resolved_mla_taps(config.encoder.layers) == [3, 6, 9, 12]
        assert config.num_classes == 150
        assert config.encoder.image_size == (512, 512)

    def test_unknown_backbone(self):
        """Test an unknown backbone raises ConfigError"""
        with pytest.raises(ConfigError):
            setr_variant("pup", "t-huge")

    def test_toy(self):
        """Test the calibration config"""
        config = setr_toy()
        assert (config.encoder.layers, config.encoder.hidden, config.encoder.heads) == (2, 64, 4)
        assert config.encoder.patch == 8
        assert config.decoder.kind is DecoderKind.PUP
        assert config.decoder.aux_taps == []


class TestSetrValidation:
    """Test structural checks on SETR configs"""

    def test_heads_must_divide_hidden(self):
        config = setr_toy()
        with pytest.raises(ConfigError):
            replace(config, encoder=replace(config.encoder, heads=5)).validate()

    def test_image_must_be_patch_multiple(self):
        config = setr_toy()
        with pytest.raises(ConfigError):
            replace(config, encoder=replace(config.encoder, image_size=(60, 64))).validate()

    def test_pup_needs_power_of_two_patch(self):
        """Test PUP rejects a patch of 12"""
        config = setr_toy(image_size=48)
        with pytest.raises(ConfigError):
            replace(config, encoder=replace(config.encoder, patch=12)).validate()

    def test_aux_tap_out_of_range(self):
        config = setr_toy()
        with pytest.raises(ConfigError):
            replace(config, decoder=replace(config.decoder, aux_taps=[3])).validate()

    def test_mla_streams_must_split_layers(self):
        """Test 2 layers cannot feed 4 uniform MLA streams"""
        config = setr_toy()
        with pytest.raises(ConfigError):
            replace(config, decoder=replace(config.decoder, kind=DecoderKind.MLA, mla_streams=4)).validate()

    def test_explicit_mla_taps(self):
        """Test explicit taps override the uniform spacing"""
        dec = DecoderConfig(kind=DecoderKind.MLA, mla_streams=2, mla_taps=[1, 3])
        assert dec.resolved_mla_taps(3) == [1, 3]
        dec.validate(3)


class TestHlgVariants:
    """Test the HLG stage table"""

    def test_tiny_table(self):
        """Test hlg-tiny widths, depths and layout"""
        config = hlg_variant("hlg-tiny")
        assert config.channels == [64, 128, 256, 512]
        assert config.depths == [2, 2, 6, 2]
        assert [s.window for s in config.stages] == [7, 7, 7, 7]
        assert [s.dilation for s in config.stages] == [8, 4, 2, 1]
        assert config.head is HlgHead.CLASSIFY

    def test_every_variant_validates(self):
        """Test each registry entry builds"""
        for name in HLG_VARIANTS:
            assert hlg_variant(name).name == name

    def test_toy(self):
        config = hlg_toy()
        assert config.channels == [16, 32, 64, 128]
        assert [s.window for s in config.stages] == [4, 4, 2, 2]
        assert config.head is HlgHead.SEGMENT

    def test_odd_depth_rejected(self):
        """Test depths must be whole layer pairs"""
        config = hlg_toy()
        stages = list(config.stages)
        stages[1] = replace(stages[1], depth=3)
        with pytest.raises(ConfigError):
            replace(config, stages=stages).validate()

    def test_stage_count(self):
        config = hlg_toy()
        with pytest.raises(ConfigError):
            replace(config, stages=config.stages[:3]).validate()

    def test_heads_must_divide_width(self):
        config = hlg_toy()
        stages = list(config.stages)
        stages[0] = replace(stages[0], heads=3)
        with pytest.raises(ConfigError):
            replace(config, stages=stages).validate()


class TestModelConfig:
    """Test name resolution and serialization"""

    def test_resolve_setr(self):
        config = model_config("setr-naive", backbone="t-base", num_classes=21)
        assert isinstance(config, SetrConfig)
        assert config.name == "setr-naive-t-base"
        assert config.num_classes == 21

    def test_resolve_hlg_segment(self):
        config = model_config("hlg-small", num_classes=150, head=HlgHead.SEGMENT, image_size=512)
        assert config.head is HlgHead.SEGMENT
        assert config.image_size == 512

    def test_unknown_model(self):
        with pytest.raises(ConfigError):
            model_config("resnet-50")

    @pytest.mark.parametrize("config", [
        setr_variant("mla", "t-base"),
        replace(setr_variant("mla"), decoder=replace(setr_variant("mla").decoder, mla_plan=MlaPlan.HALVING)),
        setr_toy(num_classes=3, image_size=32),
        hlg_toy(num_classes=5, head=HlgHead.CLASSIFY),
        replace(hlg_variant("hlg-mobile"), global_bias=GlobalBias.NONE),
    ])
    def test_canonical_roundtrip(self, config):
        """Test config_from_dict inverts canonical_dict"""
        data = canonical_dict(config)
        assert data["family"] in ("setr", "hlg")
        assert config_from_dict(data) == config

    def test_canonical_uses_plain_values(self):
        """Test enums are stored by value"""
        data = canonical_dict(hlg_toy())
        assert data["head"] == "segment"
        assert data["window_embedding"] == "avg"

    def test_unknown_family(self):
        with pytest.raises(ConfigError):
            config_from_dict({"family": "cnn"})

    def test_with_overrides_validates(self):
        """Test overrides are checked by name and re-validated"""
        assert with_overrides(hlg_toy(), num_classes=7).num_classes == 7
        with pytest.raises(ConfigError):
            with_overrides(hlg_toy(), depth=3)
        with pytest.raises(ConfigError):
            with_overrides(hlg_toy(), num_classes=0)
