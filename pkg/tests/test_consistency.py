import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import fd_grad, grad_of
from ecacl import tensor as T
from ecacl.consistency import consistency_loss, gate_pseudo_labels
from ecacl.errors import ContractError
from ecacl.tensor import Tensor


def random_probs(rng, B, C, sharp=3.0):
    z = rng.normal(size=(B, C)) * sharp
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def test_confident_row_passes():
    g = gate_pseudo_labels([[0.9, 0.1]], 0.8)
    assert g.pseudo_labels == [0] and g.mask == [True]


def test_unconfident_row_is_masked_out():
    g = gate_pseudo_labels([[0.7, 0.3]], 0.8)
    assert g.mask == [False]
    assert consistency_loss(g, Tensor([[0.2, 0.8]])).item() == 0.0


def test_gate_boundaries():
    rows = [[0.5, 0.5], [1.0, 0.0], [0.6, 0.4]]
    assert all(gate_pseudo_labels(rows, 0.0).mask)
    assert gate_pseudo_labels(rows, 1.0).mask == [False, True, False]
    with pytest.raises(ContractError):
        gate_pseudo_labels(rows, 1.0 + 1e-9)


def test_argmax_tie_takes_lowest_class():
    assert gate_pseudo_labels([[0.4, 0.4, 0.2]], 0.0).pseudo_labels == [0]


def test_unnormalised_row_is_contract_violation():
    with pytest.raises(ContractError, match="row 1"):
        gate_pseudo_labels([[0.5, 0.5], [0.6, 0.6]], 0.5)


def test_ln2_example():
    g = gate_pseudo_labels([[0.9, 0.1]], 0.8)
    assert consistency_loss(g, Tensor([[0.5, 0.5]])).item() == pytest.approx(math.log(2), abs=1e-15)


def test_empty_gate_is_exact_zero(rng):
    g = gate_pseudo_labels(np.full((4, 4), 0.25), 0.9)
    assert consistency_loss(g, Tensor(random_probs(rng, 4, 4))).item() == 0.0


def test_matches_masked_sum_oracle(rng):
    p_w, p_s = random_probs(rng, 6, 3), random_probs(rng, 6, 3)
    got = consistency_loss(gate_pseudo_labels(p_w, 0.6), Tensor(p_s)).item()
    assert got == pytest.approx(oracles.consistency_loss(p_w, p_s, 0.6), abs=1e-10)


def test_zero_probability_is_clamped_and_counted():
    diag = Counter()
    out = consistency_loss(gate_pseudo_labels([[1.0, 0.0]], 0.5), Tensor([[0.0, 1.0]]), diag)
    assert out.item() == pytest.approx(-math.log(1e-12))
    assert diag["clamped"] == 1


def test_divides_by_full_batch():
    g = gate_pseudo_labels([[0.9, 0.1], [0.5, 0.5]], 0.8)
    assert consistency_loss(g, Tensor([[0.5, 0.5], [0.5, 0.5]])).item() == pytest.approx(math.log(2) / 2)


def test_gradient_flows_to_strong_view_only(rng):
    zw = Tensor(rng.normal(size=(5, 3)) * 3, requires_grad=True)
    zs = Tensor(rng.normal(size=(5, 3)), requires_grad=True)

    def build():
        gated = gate_pseudo_labels(T.softmax(zw), 0.3)
        return consistency_loss(gated, T.softmax(zs))

    gw, gs = grad_of(build, zw, zs)
    assert gw is None or not np.any(gw)
    np.testing.assert_allclose(gs, fd_grad(build, zs), rtol=1e-6, atol=1e-9)


@given(st.integers(0, 2**31), st.integers(1, 8), st.integers(2, 5))
def test_gate_count_non_increasing_in_sigma(seed, B, C):
    p = random_probs(np.random.default_rng(seed), B, C)
    counts = [gate_pseudo_labels(p, s).num_passed for s in np.linspace(0, 1, 6)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


@given(st.integers(0, 2**31), st.floats(0, 1))
def test_loss_nonnegative_and_mask_matches_confidence(seed, sigma):
    rng = np.random.default_rng(seed)
    p_w, p_s = random_probs(rng, 6, 4), random_probs(rng, 6, 4)
    g = gate_pseudo_labels(p_w, sigma)
    assert g.mask == [c >= sigma for c in g.confidences]
    assert g.pseudo_labels == list(np.argmax(p_w, axis=1))
    assert consistency_loss(g, Tensor(p_s)).item() >= 0.0


def test_loss_zero_when_strong_view_agrees():
    p_w = np.array([[0.95, 0.05], [0.1, 0.9]])
    g = gate_pseudo_labels(p_w, 0.8)
    assert consistency_loss(g, Tensor([[1.0, 0.0], [0.0, 1.0]])).item() == 0.0
