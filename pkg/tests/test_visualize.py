"""
Unit tests for the figure dumps
"""

import numpy as np
import pytest

from src.cli.visualize import attention_map, feature_map, hlg_stage_grid, position_similarity, visualize
from src.models import DecoderKind, HlgHead, build_model
from src.reports import read_pnm
from tests.test_utils import TinyConfigs


@pytest.fixture
def setr_model():
    return build_model(TinyConfigs.setr(DecoderKind.PUP), seed=0)


@pytest.fixture
def hlg_model():
    return build_model(TinyConfigs.hlg(HlgHead.CLASSIFY), seed=0)


@pytest.fixture
def image():
    return np.random.default_rng(0).random((32, 32, 3)).astype(np.float32)


class TestPositionSimilarity:
    """Test the tiled cosine-similarity image"""

    def test_tiles_peak_at_own_cell(self, rng):
        table = rng.normal(size=(6, 8))
        sims = position_similarity(table, (2, 3))
        assert sims.shape == (4, 9)
        for i in range(2):
            for j in range(3):
                assert sims[i * 2 + i, j * 3 + j] == pytest.approx(1.0)

    def test_orthogonal_table(self):
        """Test one-hot positions are similar only to themselves"""
        sims = position_similarity(np.eye(4), (2, 2))
        assert sims[0, 0] == sims[0, 3] == sims[3, 0] == sims[3, 3] == pytest.approx(1.0)
        assert sims.sum() == pytest.approx(4.0)

    def test_zero_vector(self):
        table = np.zeros((4, 3))
        table[0] = 1.0
        sims = position_similarity(table, (2, 2))
        assert sims.sum() == pytest.approx(1.0)

    def test_wrong_rows(self):
        with pytest.raises(ValueError):
            position_similarity(np.zeros((5, 2)), (2, 2))


class TestAttentionMap:
    """Test one query row of attention weights"""

    def test_setr_row(self, setr_model, image):
        row = attention_map(setr_model, image, layer=2, head=1, point=(1, 2))
        assert row.shape == (4, 4)
        assert row.sum() == pytest.approx(1.0, rel=1e-5)
        assert setr_model.encoder.layers[1].attn.record_attention is False

    def test_hlg_row(self, hlg_model, image):
        """Test the row spans the window-embedding grid of the block"""
        row = attention_map(hlg_model, image, layer=1, head=0, point=(3, 5))
        assert row.shape == (2, 2)
        assert row.sum() == pytest.approx(1.0, rel=1e-5)

    @pytest.mark.parametrize("layer, head, point", [(3, 0, (0, 0)), (1, 2, (0, 0)), (1, 0, (4, 0))])
    def test_out_of_range(self, setr_model, image, layer, head, point):
        with pytest.raises(ValueError):
            attention_map(setr_model, image, layer, head, point)


class TestFeatureMap:
    """Test channel-mean maps"""

    def test_setr_layer(self, setr_model, image):
        assert feature_map(setr_model, image, 1).shape == (4, 4)

    def test_hlg_stage(self, hlg_model, image):
        assert feature_map(hlg_model, image, 2).shape == hlg_stage_grid((32, 32), 1)
        with pytest.raises(ValueError):
            feature_map(hlg_model, image, 5)

    def test_stage_grid(self):
        assert [hlg_stage_grid((50, 50), s) for s in range(4)] == [(13, 13), (7, 7), (4, 4), (2, 2)]


class TestVisualize:
    """Test the written PGM files"""

    def test_pos_sim_file(self, setr_model, tmp_path):
        written = visualize(setr_model, "pos-sim", tmp_path)
        (path, raw), = written.items()
        assert path == tmp_path / "pos_sim.pgm"
        pixels = read_pnm(path)
        assert pixels.shape == raw.shape == (16, 16)
        assert pixels.max() == 255

    def test_attention_file_name(self, setr_model, image, tmp_path):
        written = visualize(setr_model, "attention", tmp_path, image, layer=1, head=0, point=(2, 3))
        assert list(written) == [tmp_path / "attention_l1_h0_r2_c3.pgm"]

    def test_pos_sim_needs_setr(self, hlg_model, tmp_path):
        with pytest.raises(ValueError, match="position table"):
            visualize(hlg_model, "pos-sim", tmp_path)

    def test_image_required(self, setr_model, tmp_path):
        with pytest.raises(ValueError, match="needs an input image"):
            visualize(setr_model, "features", tmp_path)

    def test_unknown_kind(self, setr_model, tmp_path):
        with pytest.raises(ValueError):
            visualize(setr_model, "saliency", tmp_path)

    @pytest.mark.parametrize("what", ["pos-sim", "attention", "features"])
    def test_rerun_is_byte_identical(self, image, tmp_path, what):
        """Test two fresh models with one seed write the same file bytes"""
        files = []
        for sub in ("a", "b"):
            (tmp_path / sub).mkdir()
            model = build_model(TinyConfigs.setr(DecoderKind.PUP), seed=0)
            (path, _), = visualize(model, what, tmp_path / sub, image, layer=1, head=0, point=(2, 3)).items()
            files.append(path.read_bytes())
        assert files[0] == files[1]
