from __future__ import annotations

import numpy as np
import pytest

from voxblend.autograd import Graph, Tensor, gradient_check
from voxblend.config import ModelConfig
from voxblend.errors import ShapeError, VoxblendError
from voxblend.network import (
    AttentionParams,
    BlendshapeFrame,
    LstmCellParams,
    ModelParams,
    attention_pool,
    bilstm_forward,
    bind_tensors,
    forward_graph,
    init_params,
    lstm_cell_step,
    model_forward,
    param_shapes,
)

SMALL = ModelConfig(hidden_size=3, basis_size=4, input_rows=5, input_cols=6)


def _bound(params: ModelParams):
    g = Graph(params.dtype, record=False)
    return g, params.bind(g, trainable=False)


def test_param_shapes_follow_config() -> None:
    shapes = param_shapes(ModelConfig(hidden_size=8, basis_size=16))
    assert shapes["layer1.fwd.w_x"] == (39, 32)
    assert shapes["layer2.bwd.w_x"] == (8, 32)
    assert shapes["attention.w"] == (8, 1)
    assert shapes["dense2.w"] == (16, 51)
    uni = param_shapes(ModelConfig(hidden_size=8, bidirectional=False, use_attention=False))
    assert not any(".bwd." in name or "combine_bwd" in name for name in uni)
    assert "attention.w" not in uni


def test_init_sets_forget_bias_and_is_seeded(tiny_config) -> None:
    a = init_params(tiny_config, seed=5)
    b = init_params(tiny_config, seed=5)
    h = tiny_config.hidden_size
    bias = a["layer1.fwd.b"]
    assert np.all(bias[h : 2 * h] == 1.0)
    assert np.all(bias[:h] == 0.0) and np.all(bias[2 * h :] == 0.0)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert a.dtype == np.float32


def test_model_params_are_read_only(tiny_config) -> None:
    params = init_params(tiny_config, seed=0)
    with pytest.raises(ValueError):
        params["dense1.w"][0, 0] = 1.0


def test_model_params_validate_names_and_shapes(tiny_config) -> None:
    with pytest.raises(ShapeError, match="missing"):
        ModelParams(tiny_config, {})
    params = init_params(tiny_config, seed=0)
    with pytest.raises(ShapeError, match="dense2.b"):
        params.replace({"dense2.b": np.zeros(50)})
    with pytest.raises(VoxblendError, match="non-finite"):
        params.replace({"dense2.b": np.full(51, np.nan)})


def test_zero_cell_gives_zero_state() -> None:
    g = Graph(np.float64, record=False)
    cell = LstmCellParams(g.constant(np.zeros((4, 12))), g.constant(np.zeros((3, 12))), g.constant(np.zeros(12)))
    h, c = lstm_cell_step(g, g.constant(np.ones((1, 4))), None, None, cell)
    assert np.array_equal(h.data, np.zeros((1, 3)))
    assert np.array_equal(c.data, np.zeros((1, 3)))


def test_cell_hidden_state_is_bounded(rng) -> None:
    g = Graph(np.float64, record=False)
    cell = LstmCellParams(
        g.constant(rng.normal(0, 5, size=(4, 12))), g.constant(rng.normal(0, 5, size=(3, 12))), g.constant(rng.normal(size=12))
    )
    h, c = lstm_cell_step(g, g.constant(rng.normal(size=(1, 4))), None, None, cell)
    h, _ = lstm_cell_step(g, g.constant(rng.normal(size=(1, 4))), h, c, cell)
    assert np.all(np.abs(h.data) < 1.0)


def test_cell_checks_input_width() -> None:
    g = Graph(np.float64, record=False)
    cell = LstmCellParams(g.constant(np.zeros((4, 12))), g.constant(np.zeros((3, 12))), g.constant(np.zeros(12)))
    with pytest.raises(ShapeError):
        lstm_cell_step(g, g.constant(np.ones((1, 5))), None, None, cell)


def test_cell_gradients(rng) -> None:
    def builder(g: Graph, p: dict[str, np.ndarray]) -> Tensor:
        cell = LstmCellParams(g.param("w_x", p["w_x"]), g.param("w_h", p["w_h"]), g.param("b", p["b"]))
        x = g.constant(np.array([[0.3, -0.2, 0.5, 0.1, -0.4]]))
        h, c = lstm_cell_step(g, x, None, None, cell)
        h, c = lstm_cell_step(g, x, h, c, cell)
        return g.reduce_sum(g.mul(h, c))

    params = {"w_x": rng.normal(size=(5, 16)), "w_h": rng.normal(size=(4, 16)), "b": rng.normal(size=16)}
    assert gradient_check(builder, params).passed


def test_zero_parameters_give_zero_states() -> None:
    params = ModelParams(SMALL, {k: np.zeros(s) for k, s in param_shapes(SMALL).items()})
    g, model = _bound(params)
    out = bilstm_forward(g, g.constant(np.ones((5, 6))), model.layer1)
    assert np.array_equal(out.data, np.zeros((5, 3)))


def test_bilstm_reverses_under_direction_swap(rng) -> None:
    params = init_params(SMALL, seed=11, dtype=np.float64)
    g, model = _bound(params)
    seq = rng.normal(size=(5, 6))
    forward = bilstm_forward(g, g.constant(seq), model.layer1).data
    mirrored = bilstm_forward(g, g.constant(seq[::-1].copy()), model.layer1.swapped()).data
    np.testing.assert_allclose(mirrored, forward[::-1], atol=1e-6)


def test_bilstm_single_step_composes_both_directions(rng) -> None:
    params = init_params(SMALL, seed=12, dtype=np.float64)
    g, model = _bound(params)
    x = g.constant(rng.normal(size=(1, 6)))
    layer = model.layer1
    h_f, _ = lstm_cell_step(g, x, None, None, layer.forward_cell)
    h_b, _ = lstm_cell_step(g, x, None, None, layer.backward_cell)
    expected = h_f.data @ layer.combine_fwd.data + h_b.data @ layer.combine_bwd.data + layer.combine_bias.data
    np.testing.assert_allclose(bilstm_forward(g, x, layer).data, expected, atol=1e-12)


def test_bilstm_rejects_empty_sequence() -> None:
    params = init_params(SMALL, seed=0)
    g, model = _bound(params)
    with pytest.raises(ShapeError):
        bilstm_forward(g, g.constant(np.zeros((0, 6))), model.layer1)


def test_swapping_a_unidirectional_layer() -> None:
    params = init_params(SMALL.model_copy(update={"bidirectional": False}), seed=0)
    _, model = _bound(params)
    with pytest.raises(VoxblendError):
        model.layer1.swapped()


def test_attention_special_cases(rng) -> None:
    g = Graph(np.float64, record=False)
    w = AttentionParams(g.constant(rng.normal(size=(3, 1))))
    single = rng.normal(size=(1, 3))
    pooled, alpha = attention_pool(g, g.constant(single), w)
    assert alpha.data.tolist() == [[1.0]]
    np.testing.assert_array_equal(pooled.data, single)

    same = np.tile(rng.normal(size=(1, 3)), (4, 1))
    pooled, alpha = attention_pool(g, g.constant(same), w)
    np.testing.assert_allclose(alpha.data, 0.25, atol=1e-15)
    np.testing.assert_allclose(pooled.data, same[:1], atol=1e-12)

    states = rng.normal(size=(4, 3))
    pooled, alpha = attention_pool(g, g.constant(states), AttentionParams(g.constant(np.zeros((3, 1)))))
    np.testing.assert_allclose(pooled.data, states.mean(axis=0, keepdims=True), atol=1e-12)


def test_zero_head_outputs_half() -> None:
    tensors = {k: v.copy() for k, v in init_params(SMALL, seed=1).tensors.items()}
    tensors["dense2.w"] = np.zeros_like(tensors["dense2.w"])
    tensors["dense2.b"] = np.zeros_like(tensors["dense2.b"])
    out = model_forward(np.ones((5, 6)), ModelParams(SMALL, tensors))
    assert np.all(out.frames == 0.5)


def test_model_output_range_and_attention_mass(tiny_config, rng) -> None:
    params = init_params(tiny_config, seed=2)
    windows = rng.normal(0.0, 3.0, size=(100, 64, 39))
    out = model_forward(windows, params)
    assert out.frames.shape == (100, 51)
    assert np.all((out.frames >= 0.0) & (out.frames <= 1.0))
    np.testing.assert_allclose(out.alpha.sum(axis=1), 1.0, atol=1e-6)
    assert isinstance(out.frame, BlendshapeFrame)


def test_batched_forward_matches_single_windows(rng) -> None:
    params = init_params(SMALL, seed=4, dtype=np.float64)
    windows = rng.normal(size=(3, 5, 6))
    batched = model_forward(windows, params).frames
    for b in range(3):
        np.testing.assert_allclose(batched[b], model_forward(windows[b], params).frames[0], rtol=0, atol=1e-12)


def test_forward_is_deterministic(tiny_config, rng) -> None:
    params = init_params(tiny_config, seed=9)
    window = rng.normal(size=(64, 39))
    assert np.array_equal(model_forward(window, params).frames, model_forward(window, params).frames)


def test_unidirectional_without_attention(rng) -> None:
    cfg = SMALL.model_copy(update={"bidirectional": False, "use_attention": False})
    out = model_forward(rng.normal(size=(5, 6)), init_params(cfg, seed=0))
    assert out.alpha is None
    assert out.frames.shape == (1, 51)


def test_forward_checks_window_shape(tiny_config) -> None:
    with pytest.raises(ShapeError, match="model input"):
        model_forward(np.zeros((63, 39)), init_params(tiny_config, seed=0))


def test_full_model_gradients(rng) -> None:
    windows = rng.normal(size=(2, 5, 6))
    target = rng.uniform(size=(2, 51))

    def builder(g: Graph, p: dict[str, np.ndarray]) -> Tensor:
        model = bind_tensors(SMALL, {name: g.param(name, value) for name, value in p.items()})
        out = forward_graph(g, model, windows).output
        return g.reduce_mean(g.huber(g.sub(out, g.constant(target)), 1.0))

    params = init_params(SMALL, seed=6, dtype=np.float64)
    report = gradient_check(builder, dict(params.tensors), max_entries=5)
    assert report.passed, str(report)


def test_full_size_window_gradients(rng) -> None:
    config = ModelConfig(hidden_size=8, basis_size=8)
    window = rng.normal(size=(1, 64, 39))
    target = rng.uniform(size=(1, 51))

    def builder(g: Graph, p: dict[str, np.ndarray]) -> Tensor:
        model = bind_tensors(config, {name: g.param(name, value) for name, value in p.items()})
        out = forward_graph(g, model, window).output
        return g.reduce_mean(g.huber(g.sub(out, g.constant(target)), 1.0))

    params = init_params(config, seed=11, dtype=np.float64)
    report = gradient_check(builder, dict(params.tensors), tolerance=1e-3, step=1e-4, max_entries=6)
    assert report.passed, str(report)
    assert report.worst_relative_error < 1e-3
    assert set(report.per_parameter) == set(params.tensors)


def test_blendshape_frame() -> None:
    frame = BlendshapeFrame(np.full(51, 0.25))
    assert np.all(frame.native == 25.0)
    with pytest.raises(ShapeError):
        BlendshapeFrame(np.zeros(50))
