import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _instances import M_ABS
from minmaxcert.attack_set import (INF, AttackSet, ExtendedReal, HalfSpace, InfeasibleSetError, Norm, NormBall,
                                   bounding_box, conjugate_constraint, contains, contains_batch, coordinate_extremes,
                                   dual_norm, from_dict, load_attack_set, norm, perspective_conjugate,
                                   perspective_constraint, save_attack_set, verify_bounded)
from minmaxcert.model import perspective_component


# ---- perspective (norm balls and half-spaces)


def test_perspective_t0_is_norm():
    c = NormBall(Norm.L2, [1.0, 0.0], 0.5)
    assert perspective_constraint(c, [1.0, 0.0], 0.0) == 1.0


def test_perspective_t1_is_value(rng):
    cons = [NormBall(k, rng.standard_normal(3), 0.7) for k in Norm] + [HalfSpace(rng.standard_normal(3), 0.3)]
    for c in cons:
        x = rng.standard_normal(3)
        assert perspective_constraint(c, x, 1.0) == c(x)


def test_perspective_linf_example():
    c = NormBall(Norm.LINF, [2.0, 2.0], 1.0)
    assert perspective_constraint(c, [1.0, 1.0], 0.5) == -0.5


def test_perspective_halfspace_formula():
    c = HalfSpace([1.0, -2.0], 3.0)
    assert perspective_constraint(c, [1.0, 1.0], 2.0) == 1.0 - 2.0 + 6.0


def test_perspective_negative_t():
    with pytest.raises(ValueError):
        perspective_constraint(NormBall(Norm.L1, [0.0], 1.0), [0.0], -0.1)
    with pytest.raises(ValueError):
        perspective_conjugate(HalfSpace([1.0], 0.0), [1.0], -1.0)


def test_perspective_homogeneous(rng):
    for kind in Norm:
        c = NormBall(kind, rng.standard_normal(2), 0.8)
        h = HalfSpace(rng.standard_normal(2), 0.4)
        for _ in range(100):
            x, t, s = rng.standard_normal(2), rng.uniform(0, 2), rng.uniform(0.1, 5)
            for f in (c, h):
                assert perspective_constraint(f, s * x, s * t) == pytest.approx(s * perspective_constraint(f, x, t),
                                                                                rel=1e-12, abs=1e-12)
            z = rng.standard_normal(2)
            lhs, rhs = perspective_conjugate(c, s * z, s * t), perspective_conjugate(c, z, t)
            assert lhs.infinite == rhs.infinite
            if rhs.is_finite:
                assert lhs.value == pytest.approx(s * rhs.value, rel=1e-12, abs=1e-12)


def test_perspective_limit_t_to_zero(rng):
    for kind in Norm:
        c = NormBall(kind, rng.standard_normal(3), 0.5)
        for _ in range(50):
            x = rng.standard_normal(3)
            v0 = perspective_constraint(c, x, 0.0)
            for k in range(4, 9):
                assert abs(perspective_constraint(c, x, 10.0**-k) - v0) <= 1e-3 * (1 + abs(v0))


def test_max_affine_perspective(rng):
    from minmaxcert.model import MinMaxModel, evaluate

    g = MinMaxModel.random(rng, 2, 3, 4)
    for _ in range(100):
        x, t, i = rng.standard_normal(2), rng.uniform(0.01, 3), int(rng.integers(3))
        gi = MinMaxModel(g.a[i:i + 1], g.b[i:i + 1])
        assert perspective_component(g, i, x, t) == pytest.approx(t * evaluate(gi, x / t), rel=1e-12, abs=1e-12)
    # t = 0: recession function, the limit of t g_i(x / t)
    x = rng.standard_normal(2)
    v0 = perspective_component(g, 0, x, 0.0)
    assert v0 == np.max(g.a[0] @ x)
    for k in range(4, 9):
        assert abs(perspective_component(g, 0, x, 10.0**-k) - v0) <= 1e-3 * (1 + abs(v0))
    assert perspective_component(M_ABS, 0, [0.5], 1.0) == 0.5


# ---- conjugates


def test_conjugate_example():
    c = NormBall(Norm.L2, [1.0, 1.0], 0.5)
    assert conjugate_constraint(c, [0.6, 0.0]) == ExtendedReal.finite(0.6 + 0.5)


@pytest.mark.parametrize("kind", list(Norm))
def test_conjugate_outside_dual_ball(kind):
    c = NormBall(kind, [0.3, -0.2], 1.0)
    assert conjugate_constraint(c, [1.5, 1.5]) == INF
    assert not conjugate_constraint(c, [1.5, 1.5]).is_finite


@pytest.mark.parametrize("kind", list(Norm))
def test_conjugate_at_zero(kind):
    c = NormBall(kind, [3.0, -7.0], 0.25)
    assert conjugate_constraint(c, [0.0, 0.0]) == ExtendedReal.finite(0.25)


def test_halfspace_conjugate():
    h = HalfSpace([1.0, 2.0], -0.5)
    assert conjugate_constraint(h, [1.0, 2.0]) == ExtendedReal.finite(0.5)
    assert conjugate_constraint(h, [1.0, 2.0 + 1e-6]) == INF


def test_perspective_conjugate_examples():
    c = NormBall(Norm.L2, [1.0, 0.0], 0.5)
    assert perspective_conjugate(c, [0.0, 0.0], 0.0) == ExtendedReal.finite(0.0)
    assert perspective_conjugate(c, [1e-3, 0.0], 0.0) == INF
    c1 = NormBall(Norm.L1, [1.0, 0.0], 2.0)
    assert perspective_conjugate(c1, [1.0, 1.0], 2.0) == ExtendedReal.finite(5.0)
    h = HalfSpace([1.0, -1.0], 2.0)
    assert perspective_conjugate(h, [3.0, -3.0], 3.0) == ExtendedReal.finite(-6.0)
    assert perspective_conjugate(h, [3.0, -3.0], 2.0) == INF


def test_perspective_conjugate_limit(rng):
    for kind in Norm:
        c = NormBall(kind, rng.standard_normal(2), 0.5)
        for k in range(4, 9):
            assert perspective_conjugate(c, [0.0, 0.0], 10.0**-k).value == pytest.approx(0.5 * 10.0**-k, abs=1e-3)
            assert perspective_conjugate(c, [1e-2, 0.0], 10.0**-k) == INF


def _fenchel_young(c, X, Z):
    cx = c.values(X)
    checked = 0
    for x, z, v in zip(X, Z, cx):
        cz = conjugate_constraint(c, z)
        if cz.is_finite:
            assert v + cz.value >= z @ x - 1e-12 * (1 + abs(z @ x))
            checked += 1
    return checked


@pytest.mark.parametrize("kind", list(Norm))
def test_fenchel_young_norm_ball(rng, kind):
    c = NormBall(kind, rng.standard_normal(3), 0.9)
    X = 3 * rng.standard_normal((10_000, 3))
    Z = rng.uniform(-1, 1, (10_000, 3))
    # scale z into the dual unit ball so every sample is a finite pair; the
    # 1e-12 shrink keeps rounding from landing just outside
    Z /= np.maximum(1.0, np.linalg.norm(Z, ord=kind.dual.ord, axis=1))[:, None] * (1 + 1e-12)
    assert _fenchel_young(c, X, Z) == 10_000
    # equality at subgradient witnesses: z in the dual unit sphere aligned with x - center
    for x in X[:100]:
        v = x - c.center
        if kind is Norm.L2:
            z = v / np.linalg.norm(v)
        elif kind is Norm.LINF:
            z = np.zeros(3)
            r = np.argmax(np.abs(v))
            z[r] = np.sign(v[r])
        else:
            z = np.sign(v)
        z = z * (1 - 1e-12)
        assert c(x) + conjugate_constraint(c, z).value == pytest.approx(z @ x, abs=1e-10)


def test_fenchel_young_halfspace(rng):
    h = HalfSpace(rng.standard_normal(3), 0.4)
    X = 3 * rng.standard_normal((10_000, 3))
    Z = np.repeat(h.psi[None, :], 10_000, axis=0)
    assert _fenchel_young(h, X, Z) == 10_000
    # for a half-space the inequality is tight on its whole domain
    assert np.allclose(h.values(X) - h.omega, X @ h.psi, atol=1e-12)


@pytest.mark.parametrize("kind", list(Norm))
def test_conjugate_grid_oracle(rng, kind):
    center = rng.uniform(-0.5, 0.5, 2)
    c = NormBall(kind, center, 0.4)
    h = 5e-3
    grid = np.stack(np.meshgrid(*[np.arange(-3, 3 + h, h)] * 2), axis=-1).reshape(-1, 2)
    cvals = c.values(grid)
    for _ in range(20):
        z = rng.uniform(-1, 1, 2)
        z /= max(1.0, dual_norm(kind, z)) * (1 + 1e-12)
        est = float(np.max(grid @ z - cvals))
        exact = conjugate_constraint(c, z).value
        assert est <= exact + 1e-12
        # sup attained at the center; the grid misses it by at most h per coordinate
        assert exact - est <= 2 * h * 2


# ---- norms, membership, boundedness


def test_dual_norms():
    assert norm(Norm.L2, [3.0, 4.0]) == 5.0
    assert dual_norm(Norm.LINF, [1.0, -2.0, 3.0]) == 6.0
    assert dual_norm(Norm.L1, [1.0, -2.0]) == 2.0


def test_norm_parse():
    assert Norm.parse("inf") is Norm.LINF and Norm.parse("L2") is Norm.L2
    with pytest.raises(ValueError):
        Norm.parse("l3")


def test_contains_center_and_outside():
    X = AttackSet.ball([0.5, -0.5], 0.1, Norm.LINF)
    assert contains(X, [0.5, -0.5])
    assert not contains(X, [0.5 + 0.1 + 2e-6, -0.5], tol=1e-6)


def test_contains_batch_matches_direct(rng):
    X = AttackSet([NormBall(Norm.L2, [0.0, 0.0], 1.0), HalfSpace([1.0, 1.0], -0.2), NormBall(Norm.L1, [0.3, 0], 1.2)])
    P = rng.uniform(-1.5, 1.5, (1000, 2))
    direct = np.array([all(c(p) <= 1e-6 for c in X.constraints) for p in P])
    assert np.array_equal(contains_batch(X, P), direct)
    assert all(contains(X, p) == f for p, f in zip(P, direct))


def test_invalid_constraints():
    with pytest.raises(ValueError):
        NormBall(Norm.L2, [0.0], 0.0)
    with pytest.raises(ValueError):
        HalfSpace([0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        AttackSet([])
    with pytest.raises(ValueError):
        AttackSet([NormBall(Norm.L2, [0.0], 1.0), HalfSpace([1.0, 0.0], 0.0)])


def test_bounded_checks():
    assert verify_bounded(AttackSet.ball([0.0, 0.0], 1.0, Norm.LINF))
    assert not verify_bounded(AttackSet([HalfSpace([1.0, 0.0], 0.0)]))
    box = AttackSet.box([-1.0, 2.0], [3.0, 2.5])
    assert verify_bounded(box)
    lo, hi = coordinate_extremes(box)
    assert np.allclose(lo, [-1.0, 2.0], atol=1e-7) and np.allclose(hi, [3.0, 2.5], atol=1e-7)


def test_infeasible_set_reported():
    X = AttackSet([HalfSpace([1.0], 1.0), HalfSpace([-1.0], 1.0)])  # x <= -1 and x >= 1
    with pytest.raises(InfeasibleSetError):
        verify_bounded(X)


def test_bounding_box_l1_ball():
    lo, hi = bounding_box(AttackSet([NormBall(Norm.L1, [1.0, 2.0], 0.5), HalfSpace([1.0, 0.0], -1.0)]))
    assert np.allclose(lo, [0.5, 1.5], atol=1e-7) and np.allclose(hi, [1.0, 2.5], atol=1e-7)


# ---- extended reals


def test_extended_real_ordering():
    assert ExtendedReal.finite(3.0) < INF and INF > 1e308 and float(INF) == math.inf
    assert (INF + 1.0) == INF and ExtendedReal.finite(1.0) + 2.0 == ExtendedReal.finite(3.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_extended_real_add_property(a, b):
    s = ExtendedReal.finite(a) + ExtendedReal.finite(b)
    assert s.is_finite and s.value == a + b
    assert (ExtendedReal.finite(a) + INF) == INF


# ---- serialization


def test_json_roundtrip(tmp_path):
    X = AttackSet([NormBall(Norm.L1, [0.0, 1.0], 0.3), HalfSpace([1.0, -1.0], 0.25)])
    save_attack_set(X, tmp_path / "x.json")
    Y = load_attack_set(tmp_path / "x.json")
    assert Y.to_dict() == X.to_dict()


def test_box_sugar():
    X = from_dict({"d": 2, "constraints": [{"type": "box", "lo": [0, 0], "hi": [1, 2]}]})
    assert len(X) == 4 and X.is_polyhedral
    assert contains(X, [1.0, 2.0]) and not contains(X, [1.1, 0.0])


def test_bad_constraint_named():
    with pytest.raises(ValueError, match="radius"):
        from_dict({"constraints": [{"type": "norm_ball", "norm": "l2", "center": [0.0]}]})
    with pytest.raises(ValueError, match="constraints\\[1\\]"):
        from_dict(json.loads('{"constraints": [{"type": "half_space", "psi": [1], "omega": 0},'
                             ' {"type": "ellipse"}]}'))
