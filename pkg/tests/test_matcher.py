import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadepose.errors import ContractError, NumericError
from cascadepose.matcher import (CostMatrix, brute_force_match, cost_infer,
                                 cost_train, hungarian_solve)


def test_cost_train_single_entry():
    # perfect class prob, zero coordinate error -> cost -1
    cost = cost_train([0], [[0.5, 0.5]], [[1.0, 0.0], [0.0, 1.0]],
                      [[0.5, 0.5], [0.9, 0.9]])
    assert cost.values.shape == (1, 2)
    assert abs(cost.values[0, 0] - (-1.0)) < 1e-12


def test_cost_train_worked_example():
    # p = 0.8 toward the right class, L1 = 0.3 -> entry -0.5
    cost = cost_train([0], [[0.2, 0.4]], [[0.8, 0.2]], [[0.3, 0.6]])
    assert abs(cost.values[0, 0] - (-0.5)) < 1e-12


def test_cost_train_entries_match_loop_oracle():
    rng = np.random.default_rng(11)
    n, q, k = 3, 6, 4
    classes = rng.integers(0, 5, size=n)
    t_coords = rng.uniform(size=(n, k))
    probs = rng.dirichlet(np.ones(5), size=q)
    p_coords = rng.uniform(size=(q, k))
    cost = cost_train(classes, t_coords, probs, p_coords)
    for i in range(n):
        for col in range(q):
            want = -probs[col, classes[i]] + np.abs(t_coords[i] - p_coords[col]).sum()
            assert abs(cost.values[i, col] - want) < 1e-12


def test_cost_infer_ignores_coordinates():
    probs = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1]])
    cost = cost_infer([0, 1], probs)
    assert np.allclose(cost.values, [[-0.7, -0.1], [-0.2, -0.8]])


def test_cost_infer_background_exclusion_renormalizes():
    # last column is background
    probs = np.array([[0.3, 0.2, 0.5], [0.1, 0.3, 0.6]])
    cost = cost_infer([0, 1], probs, exclude_background=True)
    assert np.allclose(cost.values[:, 0], [-0.6, -0.4])
    assert np.allclose(cost.values[:, 1], [-0.25, -0.75])


def test_one_hot_probs_give_minus_n_total():
    # each target's class predicted with certainty by a distinct query
    n, q = 4, 6
    probs = np.zeros((q, n + 1))
    for j in range(n):
        probs[j + 1, j] = 1.0
    probs[0, n] = 1.0
    probs[5, n] = 1.0
    match = hungarian_solve(cost_infer(np.arange(n), probs))
    assert match.total_cost == -float(n)
    assert match.assignment.tolist() == [1, 2, 3, 4]


def test_cost_matrix_validation():
    with pytest.raises(ContractError):
        CostMatrix(np.zeros((3, 2)), mode="train")
    with pytest.raises(ContractError):
        CostMatrix(np.zeros(4), mode="train")
    with pytest.raises(NumericError):
        hungarian_solve(CostMatrix([[np.inf, 0.0]], mode="infer"))


def test_brute_force_guard():
    with pytest.raises(ContractError):
        brute_force_match(CostMatrix(np.zeros((8, 9)), mode="train"))


def test_hungarian_2x2_hand_case():
    # picking the diagonal costs 1+4=5; anti-diagonal costs 2+3=5 too is a tie,
    # so use an asymmetric case with a unique optimum
    cost = CostMatrix([[1.0, 10.0], [10.0, 1.0]], mode="train")
    match = hungarian_solve(cost)
    assert match.assignment.tolist() == [0, 1]
    assert match.total_cost == 2.0


def test_hungarian_prefers_global_optimum_over_greedy():
    # greedy row-by-row would take (0,0) then be forced to (1,1) for 0 + 100;
    # the optimum is (0,1) + (1,0) = 1 + 1
    cost = CostMatrix([[0.0, 1.0], [1.0, 100.0]], mode="train")
    match = hungarian_solve(cost)
    assert match.assignment.tolist() == [1, 0]
    assert match.total_cost == 2.0


def test_uniform_tie_breaks_to_lowest_columns():
    match = hungarian_solve(CostMatrix(np.zeros((3, 5)), mode="infer"))
    assert match.assignment.tolist() == [0, 1, 2]


def test_hungarian_matches_brute_force_on_1000_random_matrices():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        q = int(rng.integers(n, 9))
        cost = CostMatrix(rng.uniform(-1.0, 1.0, size=(n, q)), mode="train")
        fast = hungarian_solve(cost)
        slow = brute_force_match(cost)
        assert fast.total_cost == slow.total_cost
        assert fast.assignment.tolist() == slow.assignment.tolist()


def test_assignment_is_injective():
    rng = np.random.default_rng(5)
    for _ in range(50):
        cost = CostMatrix(rng.normal(size=(5, 7)), mode="train")
        sigma = hungarian_solve(cost).assignment
        assert len(set(sigma.tolist())) == 5


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(-5.0, 5.0))
def test_row_shift_changes_cost_not_assignment(seed, shift):
    rng = np.random.default_rng(seed)
    values = rng.uniform(-1.0, 1.0, size=(4, 6))
    base = hungarian_solve(CostMatrix(values, mode="train"))
    shifted = values.copy()
    shifted[2] += shift
    moved = hungarian_solve(CostMatrix(shifted, mode="train"))
    assert moved.assignment.tolist() == base.assignment.tolist()
    assert abs(moved.total_cost - (base.total_cost + shift)) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_column_permutation_permutes_assignment(seed):
    rng = np.random.default_rng(seed)
    values = rng.uniform(-1.0, 1.0, size=(3, 6))
    perm = rng.permutation(6)
    base = hungarian_solve(CostMatrix(values, mode="train"))
    permuted = hungarian_solve(CostMatrix(values[:, perm], mode="train"))
    assert abs(permuted.total_cost - base.total_cost) < 1e-12
    # column c of the permuted matrix is column perm[c] of the original
    assert np.array_equal(perm[permuted.assignment], base.assignment)
