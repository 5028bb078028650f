import pytest
import torch

from sumd._validation import ConfigurationError
from sumd.blocks import BST, ChannelAttention, InitialBlock
from sumd.md import MDModule
from sumd.network import HUS, Downsample, StageConfig, Upsample, md_modules


def test_channel_law():
    cfg = StageConfig(c_base=16, c_up=8)
    assert [cfg.channels(k) for k in range(3)] == [16, 24, 32]


def test_md_levels_follow_scale():
    cfg = StageConfig(c_base=16, c_up=8)
    assert [cfg.md_config(k).level for k in range(3)] == [1, 2, 3]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        StageConfig(body="transformer")
    with pytest.raises(ConfigurationError):
        StageConfig(scales=4)
    with pytest.raises(ConfigurationError, match="subspaces"):
        StageConfig(c_base=6, c_up=4, mid_ratio=0.5, K=2)


@pytest.mark.parametrize("body", ["md", "bst", "plain"])
def test_hus_preserves_shape_and_reports_scales(body):
    torch.manual_seed(0)
    cfg = StageConfig(c_base=16, c_up=8, mu_iters=2, body=body)
    feats = HUS(cfg)(torch.randn(2, 16, 16, 12))
    assert feats.out.shape == (2, 16, 16, 12)
    assert [t.shape[1] for t in feats.enc] == [16, 24, 32]
    assert [t.shape[-1] for t in feats.enc] == [12, 6, 3]
    assert feats.dec[-1] is feats.enc[-1]


def test_body_selection():
    md = HUS(StageConfig(c_base=8, c_up=8, body="md"))
    assert len(md_modules(md)) == 5  # three encoders, two decoders
    bst = HUS(StageConfig(c_base=8, c_up=4, body="bst"))
    assert not md_modules(bst)
    plain = HUS(StageConfig(c_base=8, c_up=4, body="plain"))
    assert not any(isinstance(m, (ChannelAttention, BST)) for m in plain.modules())


def test_skip_refinement_changes_output():
    x = torch.randn(1, 8, 8, 8)
    outs = []
    for n in (0, 2):
        torch.manual_seed(0)
        outs.append(HUS(StageConfig(c_base=8, c_up=4, body="bst", bst_per_skip=n))(x).out)
    assert not torch.allclose(*outs)


def test_fusion_enters_encoder_inputs():
    torch.manual_seed(0)
    hus = HUS(StageConfig(c_base=8, c_up=4, body="bst"))
    x = torch.randn(1, 8, 8, 8)
    fusion = [torch.zeros(1, 8 + 4 * k, 8 >> k, 8 >> k) for k in range(3)]
    assert torch.equal(hus(x).out, hus(x, fusion).out)
    fusion[2] = torch.ones_like(fusion[2])
    assert not torch.allclose(hus(x).out, hus(x, fusion).out)


def test_hus_rejects_wrong_width():
    with pytest.raises(ConfigurationError, match="expects 8 channels"):
        HUS(StageConfig(c_base=8, c_up=8))(torch.randn(1, 6, 8, 8))


def test_bst_with_zero_second_conv_is_identity():
    b = BST(6)
    torch.nn.init.zeros_(b.conv2.weight)
    torch.nn.init.zeros_(b.conv2.bias)
    x = torch.randn(2, 6, 5, 5)
    assert torch.equal(b(x), x)
    assert BST(6)(BST(6)(x)).shape == x.shape


def test_channel_attention_gate_range():
    ca = ChannelAttention(8)
    x = torch.randn(3, 8, 4, 4)
    g = ca.gate(x)
    assert g.shape == (3, 8, 1, 1) and (g > 0).all() and (g < 1).all()
    assert torch.allclose(ca(x), x * g)


def test_initial_block():
    blk = InitialBlock(16)
    assert blk(torch.rand(1, 3, 9, 9)).shape == (1, 16, 9, 9)
    prelus = [m for m in blk.modules() if isinstance(m, torch.nn.PReLU)]
    assert len(prelus) == 2 and all(p.weight.item() == 0.25 for p in prelus)


def test_resampling_shapes_and_errors():
    assert Downsample(8, 4)(torch.randn(1, 8, 6, 10)).shape == (1, 12, 3, 5)
    assert Upsample(12, 4)(torch.randn(1, 12, 3, 5)).shape == (1, 8, 6, 10)
    with pytest.raises(ConfigurationError, match="odd"):
        Downsample(8, 4)(torch.randn(1, 8, 5, 6))
    with pytest.raises(ConfigurationError):
        Upsample(4, 4)
