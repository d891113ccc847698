import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.autodiff import Tensor, no_grad, reset_tape
from core.config import ModelConfig, build_config
from core.data.skeleton import stage_partition
from core.errors import ShapeError
from core.models.layers import count_parameters
from core.models.mome import (
    Expert,
    Gate,
    InputEmbedding,
    MoMEModel,
    TaskHead,
    aggregate_stage,
    embed_input,
    fuse_and_predict,
    main_gate_weights,
    model_forward,
    task_gate_weights,
    task_stage_representation,
)
from core.models.tasks import default_task_roster


def setup_function(function):
    reset_tape()


def batch(b=2, n=6, seed=0):
    return np.random.default_rng(seed).normal(size=(b, n, 17, 2))


def desk_expert(stage=2, seed=0):
    h = stage_partition()
    spec = h.stages[stage - 1]
    cfg = ModelConfig()
    return Expert(spec, h.input_channels(stage), cfg.heads[stage - 1], 1, 2.0, 1.0, np.random.default_rng(seed))


def test_embedding_shape():
    emb = InputEmbedding(16, 55, np.random.default_rng(0))
    assert emb(Tensor(np.zeros((1, 55, 17, 2)))).shape == (1, 55, 17, 16)


def test_embedding_of_zeros_is_zero_without_bias():
    emb = InputEmbedding(8, 6, np.random.default_rng(0))
    emb.joint_pos.data[...] = 0.0
    emb.frame_pos.data[...] = 0.0
    assert np.array_equal(emb(Tensor(np.zeros((1, 6, 17, 2)))).data, np.zeros((1, 6, 17, 8)))


def test_embedding_of_zeros_is_bias_with_bias():
    emb = InputEmbedding(8, 6, np.random.default_rng(0), bias=True)
    emb.joint_pos.data[...] = 0.0
    emb.frame_pos.data[...] = 0.0
    emb.proj.bias.data[...] = np.arange(8.0)
    out = emb(Tensor(np.zeros((1, 6, 17, 2)))).data
    assert np.array_equal(out, np.broadcast_to(np.arange(8.0), out.shape))


def test_embedding_distinguishes_frames():
    emb = InputEmbedding(8, 6, np.random.default_rng(0))
    x = np.repeat(batch(1, 1), 6, axis=1)
    out = emb(Tensor(x)).data
    assert not np.allclose(out[0, 0], out[0, 3])


def test_embed_input_rejects_wrong_joint_count(tiny_model):
    with pytest.raises(ShapeError, match="17 joints"):
        embed_input(tiny_model, np.zeros((1, 6, 16, 2)))
    with pytest.raises(ShapeError):
        embed_input(tiny_model, np.zeros((1, 7, 17, 2)))


def test_desk_stage2_expert_shapes():
    z, cls = desk_expert(2)(Tensor(np.random.default_rng(1).normal(size=(1, 30, 17, 16))))
    assert z.shape == (1, 30, 5, 32)
    assert cls.shape == (1, 32)


def test_expert_shape_chain():
    h = stage_partition()
    x = Tensor(np.random.default_rng(2).normal(size=(1, 5, 17, 16)))
    for stage, expected in zip(range(1, 5), [(1, 5, 17, 16), (1, 5, 5, 32), (1, 5, 2, 64), (1, 5, 1, 128)]):
        z, cls = desk_expert(stage)(x)
        assert z.shape == expected
        assert cls.shape == (1, h.channels[stage - 1])
        x = z


def test_expert_rejects_wrong_input():
    with pytest.raises(ShapeError, match="expert_forward"):
        desk_expert(2)(Tensor(np.zeros((1, 4, 5, 16))))


def test_identical_experts_agree():
    x = Tensor(np.random.default_rng(3).normal(size=(2, 4, 17, 16)))
    a, b = desk_expert(2, seed=9), desk_expert(2, seed=9)
    za, ca = a(x)
    zb, cb = b(x)
    assert np.array_equal(za.data, zb.data)
    assert np.array_equal(ca.data, cb.data)


def test_group_merge_is_order_sensitive():
    expert = desk_expert(2)
    x = np.random.default_rng(4).normal(size=(1, 4, 17, 16))
    swapped = x.copy()
    swapped[:, :, [5, 7]] = x[:, :, [7, 5]]
    z1, _ = expert(Tensor(x))
    z2, _ = expert(Tensor(swapped))
    left_arm = stage_partition().unit_index(2, "left_arm")
    assert not np.allclose(z1.data[:, :, left_arm], z2.data[:, :, left_arm])


def test_single_expert_gate_is_one():
    gate = Gate(8, 1, 2, 1, 2.0, 1.0, np.random.default_rng(0))
    gate.logits.weight.data[...] = np.random.default_rng(1).normal(size=gate.logits.weight.shape)
    alpha = main_gate_weights(gate, Tensor(np.random.default_rng(2).normal(size=(3, 4, 17, 8))))
    assert np.array_equal(alpha.data, np.ones((3, 1)))


def test_zero_init_gate_is_uniform():
    gate = Gate(8, 4, 2, 1, 2.0, 0.5, np.random.default_rng(0))
    alpha = task_gate_weights(gate, Tensor(np.random.default_rng(2).normal(size=(3, 4, 17, 8))))
    assert np.allclose(alpha.data, 0.25)


def test_gate_weights_are_a_simplex():
    gate = Gate(8, 5, 2, 1, 2.0, 1.0, np.random.default_rng(0))
    gate.logits.weight.data[...] = np.random.default_rng(1).normal(size=gate.logits.weight.shape) * 5
    alpha = main_gate_weights(gate, Tensor(np.random.default_rng(3).normal(size=(6, 4, 17, 8)))).data
    assert np.all(alpha >= 0)
    assert np.allclose(alpha.sum(axis=-1), 1.0, atol=1e-9)


def test_aggregate_examples():
    rng = np.random.default_rng(5)
    a, b = Tensor(rng.normal(size=(2, 3, 5, 4))), Tensor(rng.normal(size=(2, 3, 5, 4)))
    assert np.array_equal(aggregate_stage(Tensor(np.ones((2, 1))), [a]).data, a.data)
    one_hot = Tensor(np.array([[0.0, 1.0], [0.0, 1.0]]))
    assert np.array_equal(aggregate_stage(one_hot, [a, b]).data, b.data)
    neg = Tensor(-a.data)
    half = Tensor(np.full((2, 2), 0.5))
    assert np.allclose(aggregate_stage(half, [a, neg]).data, 0.0)


def test_aggregate_length_mismatch():
    a = Tensor(np.zeros((2, 3, 5, 4)))
    with pytest.raises(ShapeError, match="aggregate_stage"):
        aggregate_stage(Tensor(np.full((2, 3), 1 / 3)), [a, a])


def test_task_representation_is_convex():
    rng = np.random.default_rng(6)
    summaries = [Tensor(rng.normal(size=(3, 64))) for _ in range(4)]
    raw = rng.random((3, 4))
    alpha = Tensor(raw / raw.sum(axis=1, keepdims=True))
    h = task_stage_representation(alpha, summaries).data
    stacked = np.stack([s.data for s in summaries])
    assert h.shape == (3, 64)
    assert np.all(h >= stacked.min(axis=0) - 1e-12)
    assert np.all(h <= stacked.max(axis=0) + 1e-12)

    v = Tensor(np.tile(rng.normal(size=(1, 64)), (3, 1)))
    assert np.allclose(task_stage_representation(alpha, [v, v, v, v]).data, v.data)
    assert np.array_equal(task_stage_representation(Tensor(np.eye(4)[[2, 2, 2]]), summaries).data, summaries[2].data)


def test_fused_width_and_head_outputs():
    rng = np.random.default_rng(7)
    roster = {t.name: t for t in default_task_roster()}
    width = sum(stage_partition().channels)
    assert width == 240
    reps = [Tensor(rng.normal(size=(2, c))) for c in stage_partition().channels]
    assert fuse_and_predict(TaskHead(roster["bfi_openness"], width, 16, rng), reps).shape == (2, 4)
    assert fuse_and_predict(TaskHead(roster["bmi"], width, 16, rng), reps).shape == (2, 1)
    emb = fuse_and_predict(TaskHead(roster["identity"], width, 16, rng), reps).data
    assert emb.shape == (2, 64)
    assert np.allclose(np.linalg.norm(emb, axis=1), 1.0)
    with pytest.raises(ShapeError, match="stage representations"):
        fuse_and_predict(TaskHead(roster["bmi"], width, 16, rng), reps[:3])


def test_full_roster_forward():
    cfg = build_config("tiny", overrides={"model.tasks": "all"})
    model = MoMEModel(cfg.model)
    with no_grad():
        out = model(batch(3))
    assert len(out.outputs) == 20
    for name, o in out.outputs.items():
        task = model.task(name)
        assert o.shape == (3, task.out_dim)
    assert len(out.trace.main) == 4
    assert sum(len(v) for v in out.trace.tasks.values()) == 4 * 20
    assert len(out.trace.gates()) == 4 + 4 * 20
    assert out.features.shape == (3, 6, 1, 8)


def test_trace_is_a_simplex(tiny_model):
    rng = np.random.default_rng(8)
    for stage in tiny_model.stages:
        for gate in [stage.main_gate, *(g for _, g in stage.task_gates.items())]:
            gate.logits.weight.data[...] = rng.normal(size=gate.logits.weight.shape)
    with no_grad():
        trace = tiny_model(batch(4)).trace.to_numpy()
    for alphas in trace.values():
        for a in alphas:
            assert np.all(a >= 0)
            assert np.allclose(a.sum(axis=1), 1.0, atol=1e-6)


@pytest.fixture(scope="module")
def simplex_model():
    return MoMEModel(build_config("tiny").model)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e2), st.floats(1e-2, 1e2), st.integers(1, 3))
def test_gate_weights_stay_on_the_simplex(simplex_model, seed, input_scale, logit_scale, b):
    rng = np.random.default_rng(seed)
    for stage in simplex_model.stages:
        for gate in [stage.main_gate, *(g for _, g in stage.task_gates.items())]:
            gate.logits.weight.data[...] = rng.normal(scale=logit_scale, size=gate.logits.weight.shape)
            gate.logits.bias.data[...] = rng.normal(scale=logit_scale, size=gate.logits.bias.shape)
    x = rng.normal(scale=input_scale, size=(b, 6, 17, 2))
    with no_grad():
        trace = simplex_model(x).trace
    assert len(trace.main) == 4
    assert set(trace.tasks) == set(simplex_model.task_names)
    for _, _, alpha in trace.gates():
        a = alpha.data
        assert a.shape[0] == b
        assert np.all(a >= 0)
        assert np.allclose(a.sum(axis=1), 1.0, atol=1e-6)


def test_identical_task_gates_agree(tiny_model):
    first, second = tiny_model.task_names[:2]
    for stage in tiny_model.stages:
        stage.task_gates[second].load_state_dict(stage.task_gates[first].state_dict())
    with no_grad():
        trace = tiny_model(batch(2)).trace
    for a, b in zip(trace.tasks[first], trace.tasks[second]):
        assert np.array_equal(a.data, b.data)


def test_single_expert_model_ignores_gates():
    cfg = build_config("tiny", overrides={"model.experts": "1,1,1,1"})
    model = MoMEModel(cfg.model)
    x = batch(2)
    with no_grad():
        before = model(x).outputs
    rng = np.random.default_rng(9)
    for p in model.gate_parameters().values():
        p.data[...] += rng.normal(size=p.shape)
    with no_grad():
        after = model(x).outputs
    for name in before:
        assert np.max(np.abs(before[name].data - after[name].data)) < 1e-12


def test_forward_is_deterministic(tiny_cfg):
    a, b = MoMEModel(tiny_cfg.model), MoMEModel(tiny_cfg.model)
    x = batch(2)
    with no_grad():
        oa, ob = a(x), b(x)
    for name in oa.outputs:
        assert np.array_equal(oa.outputs[name].data, ob.outputs[name].data)
    for ta, tb in zip(oa.trace.gates(), ob.trace.gates()):
        assert np.array_equal(ta[2].data, tb[2].data)


def test_empty_batch_is_rejected(tiny_model):
    with pytest.raises(ShapeError, match="empty batch"):
        tiny_model(np.zeros((0, 6, 17, 2)))


def test_task_gates_have_about_half_the_parameters():
    h = stage_partition()
    cfg = ModelConfig()
    for stage in range(1, 5):
        width = h.input_channels(stage)
        heads = cfg.heads[stage - 1]
        main = Gate(width, 4, heads, cfg.depth, cfg.mlp_ratio, cfg.main_gate_amplifier, np.random.default_rng(0))
        task = Gate(width, 4, heads, cfg.depth, cfg.mlp_ratio, cfg.task_gate_amplifier, np.random.default_rng(0))
        assert 0.4 <= count_parameters(task) / count_parameters(main) <= 0.6


def test_private_parameters_are_disjoint(tiny_model):
    a = set(tiny_model.private_parameters("bfi_openness"))
    b = set(tiny_model.private_parameters("bmi"))
    assert a and b and not a & b
    assert all(n.startswith(("heads.bfi_openness.", "stages.")) for n in a)


def test_forward_on_a_task_subset_matches_the_full_forward(tiny_model):
    x = np.random.default_rng(8).normal(size=(2, 6, 17, 2))
    with no_grad():
        full = model_forward(tiny_model, x)
        only_bmi = model_forward(tiny_model, x, tasks=["bmi"])
    assert list(only_bmi.outputs) == ["bmi"]
    assert list(only_bmi.trace.tasks) == ["bmi"]
    assert np.array_equal(only_bmi.outputs["bmi"].data, full.outputs["bmi"].data)
    assert np.array_equal(only_bmi.features.data, full.features.data)
