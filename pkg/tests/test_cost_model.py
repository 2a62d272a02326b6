"""
Unit tests for the analytic cost model and its instrumented cross-check
"""

from dataclasses import replace

import pytest

from src.core import ShapeError
from src.models import (
    DecoderKind,
    GlobalBias,
    HlgHead,
    MlaPlan,
    SetrConfig,
    WindowEmbedding,
    build_model,
    hlg_toy,
    hlg_variant,
    setr_variant,
)
from src.analysis import (
    compare_scopes,
    conv_flops,
    conv_params,
    cost_report,
    count_flops,
    count_macs,
    count_params,
    instrumented_counter,
    linear_params,
    matmul_flops,
)
from tests.test_utils import TinyConfigs


def _mla_halving():
    config = TinyConfigs.setr(DecoderKind.MLA)
    return replace(config, decoder=replace(config.decoder, mla_width=None, mla_plan=MlaPlan.HALVING))


TOY_CONFIGS = [
    pytest.param(TinyConfigs.setr(DecoderKind.NAIVE), id="setr-naive"),
    pytest.param(TinyConfigs.setr(DecoderKind.PUP), id="setr-pup"),
    pytest.param(TinyConfigs.setr(DecoderKind.MLA), id="setr-mla"),
    pytest.param(_mla_halving(), id="setr-mla-halving"),
    pytest.param(hlg_toy(), id="hlg-segment"),
    pytest.param(hlg_toy(num_classes=5, head=HlgHead.CLASSIFY), id="hlg-classify"),
    pytest.param(replace(hlg_toy(), window_embedding=WindowEmbedding.DWCONV), id="hlg-dwconv"),
    pytest.param(replace(hlg_toy(head=HlgHead.CLASSIFY), global_bias=GlobalBias.DENSE), id="hlg-dense"),
    pytest.param(replace(hlg_toy(), global_bias=GlobalBias.NONE), id="hlg-no-bias"),
]


class TestPrimitives:
    """Test the closed-form helpers"""

    def test_matmul(self):
        assert matmul_flops(2, 3, 4) == 48

    def test_linear(self):
        assert linear_params(10, 4) == 44
        assert linear_params(10, 4, bias=False) == 40

    def test_grouped_conv(self):
        assert conv_params(3, 4, 8, groups=2) == 9 * 2 * 8 + 8
        assert conv_flops(5, 5, 3, 4, 8, groups=4) == 2 * 25 * 9 * 1 * 8


class TestParameterCounts:
    """Test analytic counts against the built models"""

    @pytest.mark.parametrize("config", TOY_CONFIGS)
    def test_matches_live_enumeration(self, config):
        """Test the analytic count equals the scalars a built model holds"""
        model = build_model(config, seed=0)
        assert count_params(config) == model.num_parameters()

    def test_setr_large_naive(self):
        """Test the hand total for SETR-Naive on T-Large at 768 with 19 classes"""
        config = setr_variant("naive", "t-large", num_classes=19, image_size=768)
        encoder = 787_456 + 2_359_296 + 24 * (4_200_448 + 8_395_776) + 2_048
        decoder = 1_050_624 + 19_475
        aux = 3 * (262_144 + 512 + 4_883)
        assert count_params(config) == encoder + decoder + aux

    def test_mla_halving_delta(self):
        """Test the halving plan adds 4 * 4,392,448 scalars to SETR-MLA on T-Large"""
        quarter = setr_variant("mla", "t-large", num_classes=19, image_size=768)
        halving = replace(quarter, decoder=replace(quarter.decoder, mla_plan=MlaPlan.HALVING))
        assert count_params(halving) - count_params(quarter) == 17_569_792


class TestMacCounts:
    """Test analytic MACs against an instrumented forward"""

    @pytest.mark.parametrize("config", TOY_CONFIGS)
    def test_total_within_one_percent(self, config):
        model = build_model(config, seed=0)
        size = (32, 32) if isinstance(config, SetrConfig) else (64, 64)
        counter = instrumented_counter(model, size)
        analytic = count_macs(config, size)
        assert analytic == pytest.approx(counter.macs(), rel=0.01)

    def test_setr_scopes_exact(self):
        """Test encoder and decoder scopes agree exactly"""
        config = TinyConfigs.setr(DecoderKind.PUP)
        counter = instrumented_counter(build_model(config, seed=0), (32, 32))
        frame = compare_scopes(cost_report(config), counter).set_index("scope")
        for scope in ("patch_embed", "encoder/attn", "encoder/mlp", "decoder"):
            assert frame.loc[scope, "analytic_macs"] == frame.loc[scope, "measured_macs"]

    def test_aux_costs_only_when_training(self):
        config = TinyConfigs.setr(DecoderKind.PUP)
        eval_report = cost_report(config)
        train_report = cost_report(config, training=True)
        assert train_report.total_macs > eval_report.total_macs
        assert train_report.total_params == eval_report.total_params

    def test_flops_are_twice_macs(self):
        config = hlg_toy()
        assert count_flops(config) == 2 * count_macs(config)

    def test_macs_grow_with_input(self):
        config = hlg_toy(head=HlgHead.CLASSIFY)
        assert count_macs(config, 128) > count_macs(config, 64)

    def test_setr_needs_patch_multiple(self):
        with pytest.raises(ShapeError):
            cost_report(TinyConfigs.setr(), (30, 32))


@pytest.mark.slow
class TestNamedVariants:
    """Test the analytic model against built full-size HLG variants at 224x224"""

    @pytest.mark.parametrize("name", ["hlg-mobile", "hlg-tiny"])
    def test_live_and_instrumented_agree(self, name):
        config = hlg_variant(name, num_classes=1000, image_size=224)
        model = build_model(config, seed=0)
        assert count_params(config) == model.num_parameters()
        counter = instrumented_counter(model, (224, 224))
        assert cost_report(config).total_macs == pytest.approx(counter.macs(), rel=0.01)


class TestCostReport:
    """Test breakdown views and the text table"""

    def test_groups_sum_to_total(self):
        report = cost_report(hlg_toy())
        groups = report.by_group()
        assert list(groups.index[:2]) == ["stem", "stage1"]
        assert int(groups["params"].sum()) == report.total_params
        assert int(groups["macs"].sum()) == report.total_macs

    def test_breakdown_columns(self):
        report = cost_report(TinyConfigs.setr(DecoderKind.MLA))
        assert list(report.breakdown.columns) == ["scope", "module", "params", "macs", "flops"]
        assert (report.breakdown["flops"] == 2 * report.breakdown["macs"]).all()
        assert report.by_scope().loc["decoder", "macs"] > 0

    def test_text_states_convention(self):
        text = cost_report(hlg_toy()).to_text()
        assert "FLOPs = 2 x multiply-accumulates" in text
        assert "hlg-toy @ 64x64" in text

    def test_default_size(self):
        assert cost_report(hlg_toy(image_size=96)).input_size == (96, 96)
        assert cost_report(TinyConfigs.setr()).input_size == (32, 32)
