import dataclasses
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sort_and_mean
from shufflepose import tensor as T
from shufflepose.attention import zero_channel, zero_spatial
from shufflepose.csm import LEVELS, identity_csm
from shufflepose.data import make_dataset
from shufflepose.errors import ConfigError, ShapeError
from shufflepose.layers import selector_conv1x1
from shufflepose.network import (
    ModelConfig, backbone, forward, forward_loss, globalnet, init_model, l2_loss, model_parameters, ohkm_loss,
    refine_block_count, selected_mean,
)
from shufflepose.optim import AdamState, adam_step
from shufflepose.pipeline import batch_arrays
from shufflepose.tensor import Tensor

CFG = ModelConfig(base_channels=8)


def per_keypoint(values):
    return Tensor(np.asarray(values, dtype=float).reshape(len(values), -1, 1, 1))


def zero_all(model):
    for _, t in model_parameters(model):
        t.data[...] = 0.0
    return model


def test_config_validation():
    for bad in (dict(input_h=100, input_w=75), dict(input_h=128, input_w=128), dict(ohkm_k=18),
                dict(variant="both"), dict(groups=3), dict(head_init_std=-1.0)):
        with pytest.raises(ConfigError):
            dataclasses.replace(CFG, **bad).validate()


def test_pyramid_and_heatmap_extents():
    model = init_model(ModelConfig())
    pyr = backbone(Tensor(np.zeros((1, 3, 128, 96))), model)
    assert [pyr[lvl].shape[2:] for lvl in LEVELS] == [(32, 24), (16, 12), (8, 6), (4, 3)]
    assert all(pyr[lvl].shape[1] == 16 for lvl in LEVELS)
    out = forward(model, Tensor(np.zeros((2, 3, 128, 96))))
    assert out.refined.shape == (2, 17, 32, 24)
    assert all(out.global_heatmaps[lvl].shape == (2, 17, 32, 24) for lvl in LEVELS)
    assert np.isfinite(out.refined.data).all()


def test_wrong_image_extents():
    with pytest.raises(ShapeError):
        forward(init_model(CFG), Tensor(np.zeros((1, 3, 96, 72))))


def test_zero_weights_give_zero_heatmaps():
    model = zero_all(init_model(CFG))
    out = forward(model, Tensor(np.random.default_rng(0).standard_normal((1, 3, 128, 96))))
    assert not out.refined.data.any()
    assert not any(h.data.any() for h in out.global_heatmaps.values())


def test_zero_model_zero_targets_give_zero_loss():
    model = zero_all(init_model(CFG))
    total, report = forward_loss(model, np.ones((1, 3, 128, 96)), np.zeros((1, 17, 32, 24)), np.full((1, 17), 2.0))
    assert total.item() == 0.0 and report.total == 0.0


def test_refine_block_counts():
    assert [refine_block_count(lvl) for lvl in LEVELS] == [0, 1, 2, 3]
    model = init_model(CFG)
    assert [len(blocks) for blocks in model.refinenet.levels] == [0, 1, 2, 3]


def test_small_head_init():
    model = init_model(ModelConfig())
    assert abs(model.refinenet.head.predict.weight.data.std() - 0.001) < 3e-4
    kaiming = init_model(ModelConfig(head_init_std=0.0))
    assert kaiming.refinenet.head.predict.weight.data.std() > 0.1


def test_selector_reducer_reproduces_baseline():
    # plain blocks, g=1, identity CSM convs and a reducer picking the original Conv block
    rng = np.random.default_rng(1)
    with_csm = init_model(dataclasses.replace(CFG, variant="plain", groups=1), seed=3)
    with_csm.globalnet.csm = identity_csm(8)
    with_csm.globalnet.csm_reduce = [selector_conv1x1(16, 8, 8) for _ in LEVELS]
    baseline = init_model(dataclasses.replace(CFG, variant="plain", use_csm=False), seed=4)
    shared = dict(model_parameters(with_csm))
    for name, t in model_parameters(baseline):
        t.data = shared[name].data.copy()
    image = Tensor(rng.standard_normal((2, 3, 128, 96)))
    a, b = forward(with_csm, image), forward(baseline, image)
    assert np.array_equal(a.refined.data, b.refined.data)
    for lvl in LEVELS:
        assert np.array_equal(a.global_heatmaps[lvl].data, b.global_heatmaps[lvl].data)


def test_zero_gate_scarb_equals_quarter_scaled_plain():
    scarb = init_model(dataclasses.replace(CFG, variant="scarb"), seed=5)
    blocks = [b for level in scarb.refinenet.levels for b in level] + [scarb.refinenet.final]
    for b in blocks:
        b.spatial, b.channel = zero_spatial(b.spatial.channels), zero_channel(b.channel.channels)
    plain = init_model(dataclasses.replace(CFG, variant="plain"), seed=6)
    shared = dict(model_parameters(scarb))
    for name, t in model_parameters(plain):
        t.data = shared[name].data.copy()
    image = Tensor(np.random.default_rng(2).standard_normal((1, 3, 128, 96)))
    unscaled = forward(plain, image).refined.data
    for b in [b for level in plain.refinenet.levels for b in level] + [plain.refinenet.final]:
        b.bottleneck.expand.weight.data *= 0.25
        b.bottleneck.expand.bias.data *= 0.25
    out = forward(scarb, image).refined.data
    assert np.array_equal(out, forward(plain, image).refined.data)
    assert not np.array_equal(out, unscaled)


def test_globalnet_top_down_sum():
    model = init_model(CFG)
    rng = np.random.default_rng(7)
    pyr = {lvl: Tensor(rng.standard_normal((1, 8, 32 >> (lvl - 2), 24 >> (lvl - 2)))) for lvl in LEVELS}
    _, td = globalnet(pyr, model)
    expect4 = pyr[4].data + T.upsample_nearest(pyr[5], 2).data
    assert np.array_equal(td[5].data, pyr[5].data)
    assert np.array_equal(td[4].data, expect4)


def test_l2_examples():
    t = np.random.default_rng(8).standard_normal((2, 3, 4, 4))
    vis = np.full((2, 3), 2.0)
    assert l2_loss(Tensor(t), t, vis).item() == 0.0
    assert l2_loss(Tensor(t + 1.0), t, vis).item() == 1.0


def test_l2_matches_summation_oracle():
    rng = np.random.default_rng(9)
    pred, target = rng.standard_normal((2, 3, 4, 5)), rng.standard_normal((2, 3, 4, 5))
    vis = np.array([[2, 0, 1], [1, 1, 1]])
    expect = 0.0
    for i in range(2):
        errs = [((pred[i, j] - target[i, j]) ** 2).mean() for j in range(3) if vis[i, j]]
        expect += sum(errs) / len(errs)
    assert abs(l2_loss(Tensor(pred), target, vis).item() - expect / 2) < 1e-15


def test_invisible_sample_contributes_zero(caplog):
    pred = Tensor(np.ones((2, 2, 2, 2)))
    vis = np.array([[0, 0], [2, 2]])
    with caplog.at_level(logging.WARNING):
        value = l2_loss(pred, np.zeros((2, 2, 2, 2)), vis).item()
    assert value == 0.5
    assert "without visible keypoints" in caplog.text


def test_ohkm_sort_and_mean_oracle():
    rng = np.random.default_rng(10)
    losses = rng.uniform(0, 1, (1000, 17))
    vis = np.full((1000, 17), 2.0)
    for row, v in zip(losses, vis):
        got = selected_mean(per_keypoint([row]), v[None], 8).item()
        assert got == sort_and_mean(row, v, 8)


def test_ohkm_equals_l2_at_full_k():
    rng = np.random.default_rng(11)
    pred, target = Tensor(rng.standard_normal((3, 17, 8, 6))), rng.standard_normal((3, 17, 8, 6))
    vis = rng.choice([0, 1, 2], (3, 17))
    assert ohkm_loss(pred, target, vis, 17).item() == l2_loss(pred, target, vis).item()


def test_ohkm_examples():
    assert selected_mean(per_keypoint([[0.3] * 17]), np.full((1, 17), 2), 8).item() == pytest.approx(0.3, abs=1e-15)
    vis = np.zeros((1, 17))
    vis[0, :3] = 2
    row = np.arange(17.0)
    assert selected_mean(per_keypoint([row]), vis, 8).item() == 1.0
    with pytest.raises(ConfigError):
        ohkm_loss(Tensor(np.zeros((1, 17, 2, 2))), np.zeros((1, 17, 2, 2)), np.ones((1, 17)), 18)


def test_ohkm_gradient_hits_only_selected():
    x = per_keypoint([[5.0, 1.0, 3.0, 4.0]])
    x.requires_grad = True
    selected_mean(x, np.ones((1, 4)), 2).backward()
    assert x.grad.reshape(-1).tolist() == [0.5, 0.0, 0.0, 0.5]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 10))
def test_ohkm_monotone_in_selected_error(seed, bump):
    rng = np.random.default_rng(seed)
    row = rng.uniform(0, 1, 17)
    vis = rng.choice([0, 2], 17)
    vis[0] = 2
    base = selected_mean(per_keypoint([row]), vis[None], 8).item()
    top = np.argsort(-np.where(vis > 0, row, -np.inf), kind="stable")[0]
    row[top] += bump
    assert selected_mean(per_keypoint([row]), vis[None], 8).item() >= base


def test_loss_report_total():
    model = init_model(CFG)
    s = make_dataset(1, 0)
    images, targets, vis = batch_arrays(s, (32, 24), 2.0)
    total, report = forward_loss(model, images, targets, vis)
    assert report.total == total.item()
    assert abs(report.total - (sum(report.global_levels) / 4 + report.refine)) < 1e-15
    assert min(report.global_levels + [report.refine]) >= 0


def test_loss_strictly_decreases_over_50_steps():
    model = init_model(ModelConfig())
    params = model_parameters(model)
    images, targets, vis = batch_arrays(make_dataset(1, 0), (32, 24), 2.0)
    state, losses = AdamState(), []
    for _ in range(50):
        for _, p in params:
            p.grad = None
        total, report = forward_loss(model, images, targets, vis)
        total.backward()
        adam_step(params, state, 5e-4)
        losses.append(report.total)
    assert all(b < a for a, b in zip(losses, losses[1:]))
