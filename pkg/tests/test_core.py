from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdos.core import (
    Dependent,
    Independent,
    Instance,
    ProbabilityError,
    ThresholdSchedule,
    binom,
    clamp_prob,
    dp_optimal,
    expected_online_max_dependent,
    expected_online_max_independent,
    local_rank_prob,
    local_rank_prob_exact,
    negbin_le,
    opt_dist_dependent,
    opt_dist_dependent_cumulative,
    opt_dist_independent,
)

from oracles import negbin_sum, online_max_distribution, optimal_value


# --- types ---------------------------------------------------------------------------


def test_instance_rejects_increasing_values():
    with pytest.raises(ValueError):
        Instance((0.0, 1.0))


def test_instance_rejects_tail_above_last():
    with pytest.raises(ValueError):
        Instance((1.0, 0.5), default_tail=0.7)


def test_instance_value_past_end_uses_tail():
    inst = Instance((3.0, 2.0), default_tail=1.0)
    assert inst.value(1) == 3.0 and inst.value(3) == 1.0 and inst.value(10) == 1.0
    assert inst.diffs().tolist() == [1.0, 1.0]


def test_instance_arithmetic_tail():
    inst = Instance((-1.0,), -5.0, tail_step=1.0)
    assert inst.value(4) == -4.0
    assert not inst.is_adversarial


def test_step_instance():
    inst = Instance.step(2, 4)
    assert inst.values == (1.0, 1.0, 0.0, 0.0) and inst.is_adversarial


def test_models_validate():
    with pytest.raises(ValueError):
        Independent(1.0)
    with pytest.raises(ValueError):
        Dependent(5, 5)
    d = Dependent.from_rate(0.5, 7)
    assert (d.h, d.p) == (3, 3 / 7)


def test_schedule_validation_and_json():
    with pytest.raises(ValueError):
        ThresholdSchedule(0.5, (0.4,))
    with pytest.raises(ValueError):
        ThresholdSchedule(0.0, (0.6, 0.5))
    s = ThresholdSchedule(0.2, (0.3, 0.5))
    assert ThresholdSchedule.from_json(s.to_json()) == s
    assert s.padded(4).tolist() == [0.3, 0.5, 1.0, 1.0]


def test_clamp_prob():
    assert clamp_prob(-1e-13) == 0.0 and clamp_prob(1 + 1e-13) == 1.0
    with pytest.raises(ProbabilityError):
        clamp_prob(1.01)


def test_binom_switches_to_logs_smoothly():
    assert binom(60, 30) == math.comb(60, 30)
    assert binom(70, 35) == pytest.approx(math.comb(70, 35), rel=1e-12)
    assert binom(5, 7) == 0.0


# --- negative binomial ---------------------------------------------------------------


@pytest.mark.parametrize("k,ell,t,want", [(1, 1, 0.5, 0.5), (2, 1, 0.5, 0.75), (5, 2, 0.3, 0.47178), (1, 2, 0.3, 0.0)])
def test_negbin_examples(k, ell, t, want):
    assert negbin_le(k, ell, t) == pytest.approx(want, abs=1e-5)


def test_negbin_matches_direct_sum():
    for k, ell, t in itertools.product(range(1, 9), range(1, 6), (0.0, 0.1, 0.37, 0.9, 1.0)):
        assert negbin_le(k, ell, t) == pytest.approx(negbin_sum(k, ell, t), abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40))
def test_negbin_monotone_in_t(k, ell):
    if k < ell:
        return
    grid = np.arange(0, 1.0005, 1e-3)
    vals = np.array([negbin_le(k, ell, t) for t in grid])
    assert np.all(np.diff(vals) >= -1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.floats(0, 1))
def test_negbin_non_increasing_in_ell(k, t):
    vals = [negbin_le(k, ell, t) for ell in range(1, k + 2)]
    assert all(b <= a + 1e-14 for a, b in zip(vals, vals[1:]))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 80), st.floats(0, 1))
def test_local_rank_mixture_sums_to_one(j, t):
    s = sum(math.comb(j - 1, ell - 1) * (1 - t) ** (j - ell) * t ** (ell - 1) for ell in range(1, j + 1))
    assert s == pytest.approx(1.0, abs=1e-12)


# --- local ranks ---------------------------------------------------------------------


def test_local_rank_examples():
    assert local_rank_prob(5, 1, 3, 1) == 1.0
    assert local_rank_prob(5, 5, 3, 3) == 1.0
    assert local_rank_prob(5, 3, 2, 1) == pytest.approx(0.5)


def test_local_rank_matches_enumeration():
    N = 5
    for i, j in itertools.product(range(1, N + 1), repeat=2):
        counts = np.zeros(N + 1)
        total = 0
        for s in itertools.permutations(range(N)):
            if s[i - 1] != j - 1:
                continue
            total += 1
            counts[1 + sum(1 for x in s[: i - 1] if x < j - 1)] += 1
        for ell in range(1, i + 1):
            assert local_rank_prob(N, i, j, ell) == pytest.approx(counts[ell] / total, abs=1e-14)
            assert local_rank_prob_exact(N, i, j, ell) == Fraction(int(counts[ell]), total)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 90).flatmap(lambda N: st.tuples(st.just(N), st.integers(1, N), st.integers(1, N))))
def test_local_rank_sums_to_one(args):
    N, i, j = args
    assert sum(local_rank_prob(N, i, j, ell) for ell in range(1, i + 1)) == pytest.approx(1.0, abs=1e-12)


# --- distribution of the online maximum ------------------------------------------------


def test_opt_dist_dependent_examples():
    assert opt_dist_dependent(5, 2, 1) == pytest.approx(0.6)
    assert opt_dist_dependent(5, 2, 3) == pytest.approx(0.1)
    assert sum(opt_dist_dependent(5, 2, j) for j in range(1, 6)) == pytest.approx(1.0)


@pytest.mark.parametrize("N,h", [(4, 0), (5, 2), (6, 3), (7, 6)])
def test_opt_dist_dependent_matches_enumeration(N, h):
    ref = online_max_distribution(N, h)
    got = [opt_dist_dependent(N, h, j) for j in range(1, N + 1)]
    np.testing.assert_allclose(got, ref, atol=1e-14)
    np.testing.assert_allclose(opt_dist_dependent_cumulative(N, h), np.cumsum(ref)[: h + 1], atol=1e-14)


def test_opt_dist_independent():
    assert opt_dist_independent(0.0, 1) == 1.0
    assert opt_dist_independent(0.5, 3) == 0.125
    assert sum(opt_dist_independent(0.5, j) for j in range(1, 5)) == 0.9375


def test_expected_online_max():
    inst = Instance((1.0, 0.5, 0.0), default_tail=0.0)
    ref = online_max_distribution(3, 1) @ np.array(inst.values)
    assert expected_online_max_dependent(inst, 1) == pytest.approx(ref)
    assert expected_online_max_independent(Instance.step(1, 100), 0.5) == pytest.approx(0.5)


# --- exact optimum ---------------------------------------------------------------------


def test_dp_examples():
    assert dp_optimal(Instance((1.0,)), 0) == 1.0
    assert dp_optimal(Instance.secretary(5), 0, exact=True) == Fraction(13, 30)
    with pytest.raises(ValueError):
        dp_optimal(Instance.secretary(5), 6)


@pytest.mark.parametrize("N", [3, 5, 7])
def test_dp_equals_exhaustive_optimum(N):
    rng = np.random.default_rng(N)
    for trial in range(3 if N == 7 else 6):
        vals = sorted((Fraction(int(v), 8) for v in rng.integers(0, 20, N)), reverse=True)
        h = int(rng.integers(0, N))
        inst = Instance(tuple(float(v) for v in vals))
        assert dp_optimal(inst, h, exact=True) == optimal_value(vals, h)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=9), st.data())
def test_dp_appending_tail_value_never_helps(raw, data):
    # a dummy item at a uniformly random position lands in the history with probability h/(N+1)
    vals = tuple(sorted((float(v) for v in raw), reverse=True))
    N = len(vals)
    tail = float(data.draw(st.integers(0, int(vals[-1]))))
    h = data.draw(st.integers(0, N))
    longer = dp_optimal(Instance(vals + (tail,), tail), h)
    short = Instance(vals, tail)
    mixed = (N + 1 - h) / (N + 1) * dp_optimal(short, h) if h <= N else 0.0
    if h > 0:
        mixed += h / (N + 1) * dp_optimal(short, h - 1)
    assert longer <= mixed + 1e-12


def test_dp_without_history_decreases_with_trailing_zero():
    assert dp_optimal(Instance.secretary(6), 0) <= 13 / 30
    for N in range(1, 9):
        assert dp_optimal(Instance.secretary(N + 1), 0) <= dp_optimal(Instance.secretary(N), 0) + 1e-15


def test_dp_fixed_history_can_gain_from_extra_item():
    # with h fixed, the extra item is always online
    assert dp_optimal(Instance((1.0, 0.0, 0.0, 0.0)), 2) > dp_optimal(Instance((1.0, 0.0, 0.0)), 2)
