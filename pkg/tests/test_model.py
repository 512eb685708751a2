"""Forward/backward contracts: normalization, replay equivalence, gradients."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import finite_difference_check, random_params
from fcmax.model import (
    ModelError, ModelParams, StepGradient, accumulate, apply_update, backward,
    forward_step, forward_teacher, init_decode_state, init_params,
    load_checkpoint, save_checkpoint,
)


def test_init_deterministic():
    a = init_params(5, 4, 6, seed=42)
    b = init_params(5, 4, 6, seed=42)
    for name, mat in a.matrices().items():
        assert np.array_equal(mat, getattr(b, name))


def test_init_shapes_minimal():
    p = init_params(1, 2, 2, seed=0)
    assert p.src_emb.shape == (2, 1)
    assert p.tgt_emb.shape == (2, 1)
    assert p.enc_proj.shape == (1, 1)
    assert p.dec_in.shape == (1, 1)
    assert p.dec_state.shape == (1, 1)
    assert p.attn.shape == (1, 1)
    assert p.out_proj.shape == (1, 2)
    assert p.out_bias.shape == (2,)
    p.validate()


def test_init_seeds_differ():
    a = init_params(3, 4, 4, seed=1)
    b = init_params(3, 4, 4, seed=2)
    assert any(
        not np.array_equal(mat, getattr(b, name)) for name, mat in a.matrices().items()
    )


def test_init_range_and_errors():
    p = init_params(8, 10, 12, seed=5)
    for mat in p.matrices().values():
        assert np.all(np.abs(mat) <= 0.08)
    with pytest.raises(ModelError):
        init_params(0, 4, 4, seed=0)
    with pytest.raises(ModelError):
        init_params(4, 0, 4, seed=0)


def _zero_params(d, sv, tv):
    return init_params(d, sv, tv, seed=0).zeros_like()


def test_single_bos_row_normalized():
    p = random_params(4, 5, 6, seed=1)
    trace = forward_teacher(p, [1, 2], [0])
    assert trace.log_probs.shape == (1, 6)
    assert abs(np.exp(trace.log_probs[0]).sum() - 1.0) < 1e-12


def test_zero_params_uniform_rows():
    p = _zero_params(3, 4, 5)
    trace = forward_teacher(p, [1, 2, 3], [0, 2, 4])
    assert np.allclose(trace.log_probs, -np.log(5.0))


def test_rows_normalized_random_models():
    for seed in range(5):
        p = random_params(6, 5, 7, seed=seed, scale=1.2)
        trace = forward_teacher(p, [0, 4, 2], [0, 1, 2, 3, 4])
        sums = np.exp(trace.log_probs).sum(axis=1)
        assert np.allclose(sums, 1.0, atol=1e-6)


def test_steps_match_conditioning_length():
    p = random_params(4, 5, 6, seed=2)
    trace = forward_teacher(p, [1], [0, 3, 2, 1])
    assert trace.n_steps == 4
    assert list(trace.cond_tokens) == [0, 3, 2, 1]


def test_out_of_range_token_rejected():
    p = random_params(4, 5, 6, seed=2)
    with pytest.raises(ModelError, match="out of range"):
        forward_teacher(p, [1], [0, 6])
    with pytest.raises(ModelError, match="out of range"):
        forward_teacher(p, [5], [0])


def test_forward_perturbation_is_first_order():
    p = random_params(4, 5, 6, seed=8)
    inp, cond = [1, 2, 0], [0, 3, 2]
    cell = (1, 4)
    analytic = backward(
        p, forward_teacher(p, inp, cond), StepGradient(((cell[0], cell[1], 1.0),))
    ).dec_in[2, 1]

    def value(eps):
        q = p.copy()
        q.dec_in[2, 1] += eps
        return forward_teacher(q, inp, cond).log_probs[cell]

    base = forward_teacher(p, inp, cond).log_probs[cell]
    res1 = abs(value(1e-3) - base - 1e-3 * analytic)
    res2 = abs(value(5e-4) - base - 5e-4 * analytic)
    assert res1 / res2 == pytest.approx(4.0, rel=0.35)  # halving eps quarters the residual


def test_forward_step_replays_teacher():
    p = random_params(5, 6, 7, seed=3, scale=0.9)
    inp, cond = [2, 5, 0, 1], [0, 4, 6, 2, 3]
    trace = forward_teacher(p, inp, cond)
    state = init_decode_state(p, inp)
    for n, tok in enumerate(cond):
        logp, state = forward_step(p, state, tok)
        assert np.max(np.abs(logp - trace.log_probs[n])) <= 1e-10


def test_forward_step_deterministic_and_uniform_for_zero_params():
    p = _zero_params(2, 3, 4)
    s1 = init_decode_state(p, [1, 2])
    s2 = init_decode_state(p, [1, 2])
    l1, _ = forward_step(p, s1, 0)
    l2, _ = forward_step(p, s2, 0)
    assert np.array_equal(l1, l2)
    assert np.allclose(l1, -np.log(4.0))


def test_forward_step_rejects_mismatched_state():
    p = random_params(4, 5, 6, seed=3)
    other = random_params(7, 5, 6, seed=3)
    state = init_decode_state(other, [1, 2])
    with pytest.raises(ModelError, match="decode state"):
        forward_step(p, state, 0)


def test_backward_empty_gradient_is_zero():
    p = random_params(4, 5, 6, seed=4)
    trace = forward_teacher(p, [1, 2], [0, 3])
    g = backward(p, trace, StepGradient(()))
    assert all(not mat.any() for mat in g.matrices().values())


def test_backward_single_cell_matches_finite_differences():
    p = random_params(4, 5, 6, seed=6)
    grad = StepGradient(((0, 3, 1.0),))
    assert finite_difference_check(p, [1, 2, 4], [0], grad, eps=1e-5) <= 1e-4


def test_backward_is_linear_in_the_gradient():
    p = random_params(3, 4, 5, seed=7)
    inp, cond = [1, 3], [0, 2, 4]
    trace = forward_teacher(p, inp, cond)
    g1 = StepGradient(((0, 1, 0.7), (2, 3, -0.2)))
    g2 = StepGradient(((1, 4, 1.1), (2, 3, 0.5)))
    a, b = 2.0, 3.0
    combined = StepGradient(((0, 1, a * 0.7), (1, 4, b * 1.1), (2, 3, a * -0.2 + b * 0.5)))
    lhs = backward(p, trace, combined)
    rhs = backward(p, trace, g1)
    for name, mat in rhs.matrices().items():
        mat *= a
    accumulate(rhs, backward(p, trace, g2), b)
    for name, mat in lhs.matrices().items():
        np.testing.assert_allclose(mat, getattr(rhs, name), atol=1e-8)


def test_backward_doubled_gradient_doubles_exactly():
    p = random_params(3, 4, 5, seed=7)
    trace = forward_teacher(p, [1, 3], [0, 2, 4])
    g1 = StepGradient(((0, 1, 0.7), (2, 3, -0.2)))
    doubled = backward(p, trace, g1.scaled(2.0))
    base = backward(p, trace, g1)
    for name, mat in doubled.matrices().items():
        assert np.array_equal(mat, 2.0 * getattr(base, name))


def test_backward_random_models_match_finite_differences():
    rng = np.random.default_rng(2024)
    for trial in range(8):
        d = int(rng.integers(2, 9))
        sv = int(rng.integers(2, 7))
        tv = int(rng.integers(3, 8))
        p = random_params(d, sv, tv, seed=trial, scale=0.7)
        inp = rng.integers(0, sv, size=int(rng.integers(1, 5))).tolist()
        cond = rng.integers(0, tv, size=int(rng.integers(1, 5))).tolist()
        n_cells = min(int(rng.integers(1, 5)), len(cond) * tv)
        cells = set()
        while len(cells) < n_cells:
            cells.add((int(rng.integers(len(cond))), int(rng.integers(tv))))
        grad = StepGradient(tuple((n, i, float(rng.normal())) for n, i in cells))
        assert finite_difference_check(p, inp, cond, grad) <= 1e-4


def test_backward_rejects_out_of_trace_cells():
    p = random_params(3, 4, 5, seed=9)
    trace = forward_teacher(p, [1], [0])
    with pytest.raises(ModelError, match="outside trace"):
        backward(p, trace, StepGradient(((1, 0, 1.0),)))


def test_step_gradient_rejects_duplicates_and_nonfinite():
    with pytest.raises(ModelError, match="duplicate"):
        StepGradient(((0, 1, 1.0), (0, 1, 2.0)))
    with pytest.raises(ModelError, match="non-finite"):
        StepGradient(((0, 1, float("nan")),))


def test_apply_update_zero_lr_keeps_params():
    p = random_params(3, 4, 5, seed=10)
    g = p.zeros_like()
    g.out_bias += 1.0
    q = apply_update(p, g, 0.0)
    assert p.allclose(q)


def test_apply_update_unit_step():
    p = random_params(3, 4, 5, seed=11)
    ones = ModelParams(**{k: np.ones_like(v) for k, v in p.matrices().items()})
    q = apply_update(p, ones, 1.0)
    for name, mat in q.matrices().items():
        assert np.array_equal(mat, getattr(p, name) + 1.0)


def test_ascent_step_increases_objective():
    p = random_params(4, 5, 6, seed=12)
    inp, cond = [1, 2, 3], [0, 2, 4]
    grad = StepGradient(((0, 2, 1.0), (1, 4, 1.0), (2, 1, 1.0)))

    def objective(params):
        trace = forward_teacher(params, inp, cond)
        return sum(v * trace.log_probs[n, i] for n, i, v in grad.entries)

    g = backward(p, forward_teacher(p, inp, cond), grad)
    q = apply_update(p, g, 1e-3)
    assert objective(q) > objective(p)


def test_apply_update_refuses_nonfinite_and_names_matrix():
    p = random_params(3, 4, 5, seed=13)
    g = p.zeros_like()
    g.attn[0, 0] = np.inf
    with pytest.raises(ModelError, match="attn"):
        apply_update(p, g, 0.1)


def test_checkpoint_round_trip(tmp_path):
    p = random_params(5, 6, 7, seed=14)
    path = tmp_path / "model.json"
    save_checkpoint(p, path)
    q = load_checkpoint(path)
    for name, mat in p.matrices().items():
        assert np.array_equal(mat, getattr(q, name))
    doc_keys = set(__import__("json").loads(path.read_text()))
    assert doc_keys == {"version", "d", "vocab_sizes", "matrices"}
