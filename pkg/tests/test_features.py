import dataclasses

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from strategies import scenarios

from onefeat.features import (
    PHYSICAL_BOUNDS,
    Attribute,
    BoundViolation,
    FeatureId,
    Perturbation,
    apply,
    bounds_for,
    delta_bounds,
    enumerate_features,
    feature_value,
)
from onefeat.scenario import Direction, NeighborState, VehicleKind

LF_SPEED = FeatureId(Direction.LEFT_FRONT, Attribute.SPEED_X, 0)
LF_DIST = FeatureId(Direction.LEFT_FRONT, Attribute.DISTANCE, 1)


def test_enumeration_order(scenario):
    labels = [f.label for f in enumerate_features(scenario)]
    assert labels == [
        "LeftFront.SpeedX",
        "LeftFront.Distance",
        "LeftBehind.SpeedX",
        "LeftBehind.Distance",
    ]
    assert [f.ordinal for f in enumerate_features(scenario)] == [0, 1, 2, 3]


def test_no_neighbors_no_features(scenario):
    assert enumerate_features(dataclasses.replace(scenario, neighbors=())) == []


def test_relative_bounds(scenario):
    lo, hi = bounds_for(scenario, LF_DIST, 0.1)
    assert lo == pytest.approx(92.7) and hi == pytest.approx(113.3)
    lo, hi = bounds_for(scenario, LF_SPEED, 0.1)
    assert lo == pytest.approx(76.887) and hi == pytest.approx(93.973)
    assert delta_bounds(scenario, LF_DIST, 0.1) == pytest.approx((-10.3, 10.3))


def test_physical_clipping(scenario):
    s = dataclasses.replace(
        scenario,
        neighbors=(
            NeighborState(Direction.FRONT, VehicleKind.CAR, 240.0, 195.0),
        ),
    )
    front_speed = FeatureId(Direction.FRONT, Attribute.SPEED_X, 0)
    front_dist = FeatureId(Direction.FRONT, Attribute.DISTANCE, 1)
    assert bounds_for(s, front_speed, 0.1) == pytest.approx((216.0, 250.0))
    assert bounds_for(s, front_dist, 0.1) == pytest.approx((175.5, 200.0))


def test_zero_speed_gives_degenerate_interval(scenario):
    s = dataclasses.replace(
        scenario, neighbors=(NeighborState(Direction.FRONT, VehicleKind.CAR, 0.0, 50.0),)
    )
    assert bounds_for(s, FeatureId(Direction.FRONT, Attribute.SPEED_X, 0), 0.3) == (0.0, 0.0)


@pytest.mark.parametrize("budget", [0.0, 1.0, -0.1, 1.5])
def test_budget_must_be_a_fraction(scenario, budget):
    with pytest.raises(ValueError):
        bounds_for(scenario, LF_DIST, budget)


def test_apply_changes_one_field(scenario):
    out = apply(scenario, Perturbation(LF_DIST, -5.0), 0.1)
    assert out.neighbor(Direction.LEFT_FRONT).distance == 98.0
    assert out.neighbor(Direction.LEFT_FRONT).speed_x == 85.43
    assert out.neighbor(Direction.LEFT_BEHIND) == scenario.neighbor(Direction.LEFT_BEHIND)
    assert out.ego == scenario.ego and out.map == scenario.map
    assert scenario.neighbor(Direction.LEFT_FRONT).distance == 103.0  # input untouched


def test_apply_endpoint_and_violation(scenario):
    out = apply(scenario, Perturbation(LF_DIST, 10.3), 0.1)
    assert out.neighbor(Direction.LEFT_FRONT).distance == pytest.approx(113.3)
    with pytest.raises(BoundViolation):
        apply(scenario, Perturbation(LF_DIST, 10.31), 0.1)
    with pytest.raises(BoundViolation):
        apply(scenario, Perturbation(LF_SPEED, -9.0), 0.1)


def test_zero_delta_is_identity(scenario):
    assert apply(scenario, Perturbation(LF_SPEED, 0.0), 0.1) == scenario


def test_missing_neighbor_raises(scenario):
    with pytest.raises(KeyError):
        feature_value(scenario, FeatureId(Direction.FRONT, Attribute.DISTANCE, 0))


budgets = st.floats(0.01, 0.99)
fractions = st.floats(0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(scenarios(min_neighbors=1), st.data(), budgets, fractions)
def test_apply_touches_exactly_one_field(s, data, budget, u):
    feats = enumerate_features(s)
    f = data.draw(st.sampled_from(feats))
    lo, hi = delta_bounds(s, f, budget)
    d = lo + (hi - lo) * u
    out = apply(s, Perturbation(f, d), budget)
    changed = [
        (a.direction, name)
        for a, b in zip(s.neighbors, out.neighbors)
        for name in ("kind", "speed_x", "distance", "direction")
        if getattr(a, name) != getattr(b, name)
    ]
    assert set(changed) <= {(f.direction, "speed_x" if f.attribute is Attribute.SPEED_X else "distance")}
    assert out.ego == s.ego and out.map == s.map and out.id == s.id


@settings(max_examples=200, deadline=None)
@given(scenarios(min_neighbors=1), st.data(), budgets, fractions)
def test_perturbed_value_within_bounds(s, data, budget, u):
    f = data.draw(st.sampled_from(enumerate_features(s)))
    lo, hi = delta_bounds(s, f, budget)
    out = apply(s, Perturbation(f, lo + (hi - lo) * u), budget)
    v = feature_value(out, f)
    orig = feature_value(s, f)
    vlo, vhi = bounds_for(s, f, budget)
    assert vlo <= v <= vhi
    assert abs(v - orig) <= budget * abs(orig) * (1 + 1e-12) + 1e-12
    phys = PHYSICAL_BOUNDS[f.attribute]
    assert phys.contains(v)


@settings(max_examples=200, deadline=None)
@given(scenarios(min_neighbors=1), st.data(), budgets, budgets)
def test_bounds_nest(s, data, a, b):
    assume(a != b)
    small, large = sorted((a, b))
    f = data.draw(st.sampled_from(enumerate_features(s)))
    lo1, hi1 = bounds_for(s, f, small)
    lo2, hi2 = bounds_for(s, f, large)
    assert lo2 <= lo1 <= hi1 <= hi2
