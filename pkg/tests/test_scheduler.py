import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anysr.imaging import ImagePlanar
from anysr.lfr import LevelGrid, identity_predictor
from anysr.resample import resize, scaled_size
from anysr.scheduler import (
    DeploymentPlan,
    PlanError,
    execute,
    plan,
    plan_custom,
    plan_equal,
    recursion_count,
)


def test_known_plans():
    assert plan(3).steps == (2.0, 1.5)
    assert plan(4).steps == (2.0, 2.0)
    assert plan(2).steps == (2.0,)
    assert plan(1.7).steps == (1.7,)
    assert plan(5.7).steps == pytest.approx((2.0, 2.0, 1.425))
    assert plan(2.75).steps == (2.0, 1.375)


def test_equal_plans():
    assert plan_equal(3, 2).steps == pytest.approx((math.sqrt(3),) * 2, abs=1e-12)
    assert plan_equal(4, 3).steps == pytest.approx((4 ** (1 / 3),) * 3, abs=1e-12)
    with pytest.raises(PlanError):
        plan_equal(4, 1)
    with pytest.raises(PlanError):
        plan_equal(4, 0)


def test_recursion_count_exact_at_powers_of_two():
    assert [recursion_count(r) for r in (1.5, 2, 2.0000001, 4, 8, 8.5)] == [1, 1, 2, 2, 3, 4]


def test_custom_plan_accepts_rounded_ratios():
    p = plan_custom(3, [1.732, 1.732])
    assert math.prod(p.steps) == pytest.approx(3, rel=1e-12)
    assert p.steps[0] == 1.732
    rounded = plan_custom(4, [2.0, 1.8, 1.1])
    assert rounded.steps[:2] == (2.0, 1.8) and math.prod(rounded.steps) == pytest.approx(4, rel=1e-12)
    with pytest.raises(PlanError):
        plan_custom(4, [2.0, 1.2])
    with pytest.raises(PlanError):
        plan_custom(3, [])


def test_invalid_plans():
    for R in (1.0, 0.5, math.inf, math.nan):
        with pytest.raises(PlanError):
            plan(R)
    with pytest.raises(PlanError):
        DeploymentPlan(3.0, (3.0,))
    with pytest.raises(PlanError):
        DeploymentPlan(3.0, (2.0, 1.4))
    with pytest.raises(PlanError):
        DeploymentPlan(1.0, (1.0,))


def test_fuzzed_products():
    rng = np.random.default_rng(7)
    for R in rng.uniform(1.0, 32.0, 1000):
        if R <= 1.0:
            continue
        p = plan(R)
        assert abs(math.prod(p.steps) - R) <= 1e-9 * R
        assert len(p) == math.ceil(math.log2(R)) or R <= 2
        assert list(p.steps) == sorted(p.steps, reverse=True)
        e = plan_equal(R, len(p))
        assert abs(math.prod(e.steps) - R) <= 1e-9 * R


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 64.0, exclude_min=True))
def test_plan_ratios_in_range(R):
    p = plan(R)
    assert all(1.0 < r <= 2.0 for r in p.steps)
    assert len(p) == recursion_count(R)


def test_execute_sizes_follow_ceil_chain(rng):
    lr = ImagePlanar(rng.uniform(0, 1, (3, 24, 24)))
    grid = LevelGrid(11)
    assert execute(plan(2.0), lr, identity_predictor, grid).shape == (3, 48, 48)
    lr48 = ImagePlanar(rng.uniform(0, 1, (3, 48, 48)))
    out = execute(plan(3), lr48, identity_predictor, grid)
    assert out.shape == (3, 144, 144) == resize(lr48, 3.0).shape
    odd = ImagePlanar(rng.uniform(0, 1, (3, 13, 7)))
    out = execute(plan(2.75), odd, identity_predictor, grid)
    assert out.height == scaled_size(scaled_size(13, 2.0), 1.375)
    assert out.width == scaled_size(scaled_size(7, 2.0), 1.375)


def test_identity_predictor_equals_chained_bicubic(rng):
    lr = ImagePlanar(rng.uniform(0, 1, (3, 10, 10)))
    out = execute(plan(3.3), lr, identity_predictor, LevelGrid(11))
    assert out == resize(resize(lr, 2.0), 1.65)


def test_out_size_applies_to_last_step(rng):
    lr = ImagePlanar(rng.uniform(0, 1, (3, 10, 10)))
    out = execute(plan_equal(3, 2), lr, identity_predictor, LevelGrid(11), out_size=(30, 30))
    assert out.shape == (3, 30, 30)


def test_single_step_is_one_pass(rng):
    calls = []

    def pred(x, levels):
        calls.append(sorted(levels))
        return {l: x for l in levels}

    execute(plan(1.35), ImagePlanar(rng.uniform(0, 1, (3, 6, 6))), pred, LevelGrid(11))
    assert calls == [[3, 4]]
