from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from pdos.core import Instance, ThresholdSchedule
from pdos.threshold import (
    Classic,
    Diverged,
    MaxSweeps,
    classic_closed_forms,
    eval_Fk,
    eval_Fk_all,
    min_rank_expected,
    optimize_min_rank,
    optimize_rp,
    rp_objective,
    stop_distribution,
)


def fk_reference(times, k):
    """Direct quadrature of the stop-rank density summed over local ranks."""
    t = list(times) + [1.0]
    total = 0.0
    for i in range(1, len(t)):
        a, b = t[i - 1], t[i]
        if b <= a:
            continue
        Ti = math.prod(t[:i])

        def dens(tau, i=i, Ti=Ti):
            s = 0.0
            for j in range(1, k + 1):
                for ell in range(1, min(j, i) + 1):
                    s += math.comb(j - 1, ell - 1) * (1 - tau) ** (j - ell) * tau**ell
            return Ti / tau ** (i + 1) * s

        total += quad(dens, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    return total


schedules = st.integers(1, 6).flatmap(
    lambda K: st.tuples(st.floats(0.0, 0.6), st.lists(st.floats(0.0, 1.0), min_size=K, max_size=K))
).map(lambda a: ThresholdSchedule(a[0], tuple(sorted(a[0] + (1 - a[0]) * x for x in a[1]))))


def test_secretary_kernel():
    assert eval_Fk(ThresholdSchedule(0.0, (1 / math.e,)), 1) == pytest.approx(1 / math.e, abs=1e-12)


def test_all_ones_never_stops():
    ev = eval_Fk_all(ThresholdSchedule(0.3, (1.0, 1.0, 1.0)), 6)
    assert np.all(ev.per_k == 0.0)


def test_reject_non_monotone():
    with pytest.raises(ValueError):
        eval_Fk(ThresholdSchedule(0.0, (0.5, 0.4)), 1)


def test_matches_direct_quadrature():
    rng = np.random.default_rng(4)
    for _ in range(5):
        p = rng.uniform(0, 0.5)
        t = tuple(np.sort(rng.uniform(p, 1, rng.integers(1, 5))))
        ev = eval_Fk_all(ThresholdSchedule(p, t), 6)
        for k in range(1, 7):
            assert ev[k] == pytest.approx(fk_reference(t, k), abs=1e-10)
        assert ev.quadrature_error <= 1e-10


def test_repeated_thresholds_contribute_nothing():
    a = eval_Fk_all(ThresholdSchedule(0.2, (0.4, 0.6, 0.6, 0.9)), 5).per_k
    b = fk_reference((0.4, 0.6, 0.6, 0.9), 5)
    assert a[-1] == pytest.approx(b, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(schedules)
def test_fk_non_decreasing_in_k_and_bounded(s):
    F = eval_Fk_all(s, 12).per_k
    assert np.all(np.diff(F) >= -1e-12)
    assert F[-1] <= 1 + 1e-12 and F[0] >= 0


@settings(max_examples=30, deadline=None)
@given(schedules, st.integers(1, 6), st.data())
def test_coordinate_concavity(s, k, data):
    t = list(s.times)
    i = data.draw(st.integers(1, len(t)))
    lo = t[i - 2] if i >= 2 else s.p
    hi = t[i] if i < len(t) else 1.0
    step = 1e-3
    if hi - lo < 2 * step + 1e-9:
        return
    x = data.draw(st.floats(lo + step, hi - step))

    def f(v):
        tt = t.copy()
        tt[i - 1] = v
        return eval_Fk(ThresholdSchedule(s.p, tuple(tt)), k)

    assert f(x + step) - 2 * f(x) + f(x - step) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(schedules, st.data())
def test_monotone_in_later_thresholds(s, data):
    t = list(s.times)
    K = len(t)
    k = data.draw(st.integers(1, max(K - 1, 1)))
    i = data.draw(st.integers(k + 1, K)) if K > k else None
    if i is None:
        return
    hi = t[i] if i < K else 1.0
    if hi - t[i - 1] < 1e-6:
        return
    tt = t.copy()
    tt[i - 1] = t[i - 1] + 0.5 * (hi - t[i - 1])
    assert eval_Fk(ThresholdSchedule(s.p, tuple(tt)), k) >= eval_Fk(s, k) - 1e-10


def test_stop_distribution_sums_to_fk():
    s = ThresholdSchedule(0.0, (0.35, 2 / 3))
    d = stop_distribution(s, 8)
    assert d.sum() == pytest.approx(eval_Fk(s, 8), abs=1e-12)
    assert np.all(d >= -1e-14)


# --- reduced objective ---------------------------------------------------------------


def test_rp_secretary_and_constant():
    sec = ThresholdSchedule(0.0, (1 / math.e,))
    assert rp_objective(Instance.secretary(3), sec).value == pytest.approx(1 / math.e, abs=1e-12)
    assert rp_objective(Instance((2.5,) * 4, 2.5), ThresholdSchedule(0.1, (0.2, 0.8))).value == 2.5


def test_rp_arithmetic_tail_requires_infinite_schedule():
    with pytest.raises(Diverged):
        rp_objective(Instance((-1.0,), -2.0, tail_step=1.0), ThresholdSchedule(0.0, (0.5,)))


def test_rp_min_rank_value():
    sched, _ = classic_closed_forms(Classic.MIN_RANK)
    v = rp_objective(Instance((-1.0,), -2.0, tail_step=1.0), sched).value
    assert v == pytest.approx(-3.8695, abs=1e-3)


def test_optimize_secretary():
    sol = optimize_rp(Instance.secretary(2), 0.0)
    assert sol.schedule.times[0] == pytest.approx(1 / math.e, abs=1e-7)
    assert sol.value == pytest.approx(1 / math.e, abs=1e-10)


def test_optimize_one_two():
    sol = optimize_rp(Instance((1.0, 1.0, 0.0)), 0.0)
    t1 = brentq(lambda x: x - math.log(x) - 1 - math.log(1.5), 0.01, 0.99)
    assert sol.schedule.times[1] == pytest.approx(2 / 3, abs=1e-6)
    assert sol.schedule.times[0] == pytest.approx(t1, abs=1e-6)
    assert sol.value == pytest.approx(0.5737, abs=5e-4)


def test_optimize_respects_sampling_rate():
    sol = optimize_rp(Instance.secretary(2), 0.5)
    assert sol.schedule.times[0] == pytest.approx(0.5, abs=1e-9)
    assert sol.value == pytest.approx(0.5 * math.log(2), abs=1e-9)


def test_ascent_never_decreases():
    trace: list = []
    optimize_rp(Instance((1.0, 0.6, 0.3, 0.1, 0.0)), 0.2, restarts=2, trace=trace)
    assert len(trace) == 3
    for run in trace:
        assert all(b >= a - 1e-13 for a, b in zip(run, run[1:]))


def test_restarts_agree_on_secretary():
    sol = optimize_rp(Instance.secretary(2), 0.0, restarts=4, seed=3)
    assert sol.restart_spread < 1e-9


def test_sweep_budget():
    with pytest.raises(MaxSweeps):
        optimize_rp(Instance((1.0, 0.5, 0.0)), 0.0, restarts=0, max_sweeps=1)


def test_k_must_cover_gaps():
    with pytest.raises(ValueError):
        optimize_rp(Instance((1.0, 0.5, 0.0)), 0.0, K=1)


# --- classic closed forms ---------------------------------------------------------------


def test_classic_secretary():
    s, v = classic_closed_forms(Classic.SECRETARY)
    assert s.times[0] == pytest.approx(0.3678794, abs=1e-7) and v == pytest.approx(1 / math.e)


def test_classic_one_two():
    s, v = classic_closed_forms("one-two")
    assert v == pytest.approx(0.5737, abs=5e-4)
    assert v == pytest.approx(0.5735669819, abs=1e-9)


def test_min_rank_product_formula():
    sol = optimize_min_rank(K=500)
    t = np.asarray(sol.schedule.times)
    m = np.arange(1, 400_001, dtype=float)
    logs = np.log(m / (m + 2)) / (m + 1)
    tail = np.cumsum(logs[::-1])[::-1]
    expected = np.exp(tail[:500] - 2.0 / 400_001)
    assert np.max(np.abs(t - expected)) < 1e-4
    assert -sol.value == pytest.approx(3.8695, abs=1e-3)


def test_min_rank_tail_closure_is_stationary():
    # adding explicit thresholds at their stationary values leaves the rank unchanged
    s, _ = classic_closed_forms(Classic.MIN_RANK, K=50)
    longer, _ = classic_closed_forms(Classic.MIN_RANK, K=80)
    assert min_rank_expected(np.array(s.times)) == pytest.approx(min_rank_expected(np.array(longer.times)), abs=1e-10)
