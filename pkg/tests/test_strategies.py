from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convoffload.conv_core import LayerSpec, PixelId, random_operands
from convoffload.errors import AcceleratorTooSmall, CapacityExceeded, ScheduleError
from convoffload.exec_model import HardwareSpec, run_and_verify, simulate, validate_strategy
from convoffload.strategies import (GENERATORS, GroupSchedule, compile_schedule,
                                    gen_row_by_row, gen_s1_baseline, gen_zigzag, s1_params)


def ids(schedule):
    return schedule.to_ids()


def test_s1_params_worked(layer, hw):
    p = s1_params(layer, hw)
    assert (p.nb_patches_max, p.k_min, p.k_max) == (3, 3, 9)
    p = s1_params(layer, hw, override=2)
    assert (p.nb_patches_max, p.k_min, p.k_max) == (2, 5, 9)
    assert s1_params(layer, replace(hw, nbop_pe=9 * 36)).k_min == 1


def test_s1_params_errors(layer, hw):
    with pytest.raises(AcceleratorTooSmall):
        s1_params(layer, replace(hw, nbop_pe=35))
    with pytest.raises(AcceleratorTooSmall):
        s1_params(layer, hw, override=4)


def test_baseline(layer):
    assert ids(gen_s1_baseline(layer)) == [[i] for i in range(9)]
    one = LayerSpec(1, 3, 3, 1, 3, 3)
    assert ids(gen_s1_baseline(one)) == [[0]]


def test_row_by_row_examples(layer):
    assert ids(gen_row_by_row(layer, 2)) == [[0, 1], [2, 3], [4, 5], [6, 7], [8]]
    assert ids(gen_row_by_row(layer, 3)) == [[0, 1, 2], [3, 4, 5], [6, 7, 8]]
    assert ids(gen_row_by_row(layer, 9)) == [list(range(9))]


def test_zigzag_examples(layer):
    # P00,P01 | P02,P12 | P11,P10 | P20,P21 | P22
    assert ids(gen_zigzag(layer, 2)) == [[0, 1], [2, 5], [3, 4], [6, 7], [8]]
    assert ids(gen_zigzag(layer, 3)) == ids(gen_row_by_row(layer, 3))
    single_row = LayerSpec(1, 3, 8, 1, 3, 3)
    for m in range(1, 7):
        assert gen_zigzag(single_row, m) == gen_row_by_row(single_row, m)


def test_generator_size_checks(layer):
    with pytest.raises(ScheduleError):
        gen_row_by_row(layer, 0)
    with pytest.raises(ScheduleError):
        gen_zigzag(layer, 4, max_patches=3)


def test_schedule_validation(layer):
    with pytest.raises(ScheduleError):
        GroupSchedule.from_ids([[0, 1], [1, 2, 3, 4, 5, 6, 7, 8]], layer)
    with pytest.raises(ScheduleError):
        GroupSchedule.from_ids([[0, 1]], layer)
    with pytest.raises(ScheduleError):
        GroupSchedule.from_ids([[0, 1, 2, 3, 4, 5, 6, 7, 8], []], layer)
    with pytest.raises(ScheduleError):
        gen_row_by_row(layer, 4).check(3)


def test_compile_worked(layer, hw):
    strategy = compile_schedule(gen_row_by_row(layer, 2), layer, hw)
    s1 = strategy.steps[0]
    assert s1.load_ker == {0, 1} and not s1.write and not s1.free_inp
    assert len(s1.load_inp) == 12
    assert strategy.flush.free_ker == {0, 1}
    assert all(not s.load_ker for s in strategy.steps[1:])


def test_compile_single_group(layer):
    hw = HardwareSpec(nbop_pe=1000, size_mem=1000)
    strategy = compile_schedule(gen_row_by_row(layer, 9), layer, hw)
    (step,) = strategy.steps
    assert step.load_inp == {PixelId(h, w) for h in range(5) for w in range(5)}
    assert not step.free_inp


def test_compile_capacity(layer, hw):
    with pytest.raises(CapacityExceeded) as exc:
        compile_schedule(gen_row_by_row(layer, 2), layer, replace(hw, size_mem=70))
    assert exc.value.step == 2


def test_baseline_not_better_than_groups_of_three(layer):
    hw = HardwareSpec(nbop_pe=120, size_mem=200)
    base = simulate(compile_schedule(gen_s1_baseline(layer), layer, hw), layer, hw).duration
    row = simulate(compile_schedule(gen_row_by_row(layer, 3), layer, hw), layer, hw).duration
    assert base >= row


def test_groups_are_sets(layer, hw):
    a = GroupSchedule.from_ids([[1, 0], [3, 2], [5, 4], [7, 6], [8]], layer)
    assert compile_schedule(a, layer, hw) == compile_schedule(gen_row_by_row(layer, 2), layer, hw)


def test_reload_one_counts_distinct_pixels(layer):
    hw = HardwareSpec(nbop_pe=1000, size_mem=1000)
    strategy = compile_schedule(gen_row_by_row(layer, 3), layer, hw)
    report = validate_strategy(strategy, layer, hw, nb_data_reload=1)
    assert report.ok
    assert report.metrics.load_traffic == 25


layers = st.builds(
    lambda c, hk, wk, eh, ew, n, sh, sw: LayerSpec(c, hk + eh, wk + ew, n, hk, wk, sh, sw),
    st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.integers(0, 4),
    st.integers(0, 4), st.integers(1, 2), st.integers(1, 2), st.integers(1, 2))


@settings(max_examples=60, deadline=None)
@given(layers, st.integers(1, 8), st.sampled_from(sorted(GENERATORS)), st.integers(0, 1000))
def test_generators_compute_the_convolution(layer, size, name, seed):
    hw = HardwareSpec(nbop_pe=10**6, size_mem=10**6)
    sched = GENERATORS[name](layer, min(size, layer.n_patches))
    strategy = compile_schedule(sched, layer, hw)
    x, k = random_operands(layer, np.random.default_rng(seed))
    _, m = run_and_verify(strategy, x, k, layer, hw)
    loads = sum(len(t.loaded) for t in m.traces)
    assert loads == sum(len(s.load_inp) for s in strategy.steps)


@settings(max_examples=60, deadline=None)
@given(layers, st.integers(1, 3))
def test_row_equals_zigzag_on_full_rows(layer, rows):
    hw = HardwareSpec(nbop_pe=10**6, size_mem=10**6)
    size = min(rows, layer.h_out) * layer.w_out
    row, zz = gen_row_by_row(layer, size), gen_zigzag(layer, size)
    assert row == zz
    d = [simulate(compile_schedule(s, layer, hw), layer, hw).duration for s in (row, zz)]
    assert d[0] == d[1]


@settings(max_examples=60, deadline=None)
@given(layers, st.integers(1, 6), st.randoms(use_true_random=False))
def test_within_group_order_is_irrelevant(layer, size, rnd):
    hw = HardwareSpec(nbop_pe=10**6, size_mem=10**6)
    sched = gen_zigzag(layer, min(size, layer.n_patches))
    shuffled = []
    for g in sched.to_ids():
        g = list(g)
        rnd.shuffle(g)
        shuffled.append(g)
    again = GroupSchedule.from_ids(shuffled, layer)
    assert compile_schedule(again, layer, hw) == compile_schedule(sched, layer, hw)
