import numpy as np
import pytest

from _instances import M_ABS, random_attack_set
from minmaxcert import conic
from minmaxcert.attack_set import AttackSet, HalfSpace, Norm, NormBall, UnboundedSetError, contains
from minmaxcert.certify import (CertificationError, CertifyOptions, CertStatus, SlaterStatus, build_dual,
                                build_primal, certified_accuracy, certified_radius, certify,
                                conjugate_system_feasible, dual_solution,
                                enumerate_oracle, extract_attack, max_affine_conjugate, primal_solution,
                                prune_redundant, verify_slater)
from minmaxcert.model import MinMaxModel, evaluate

BOX = AttackSet.box([-1.0], [2.0])


def _solve_primal(model, X):
    prog = build_primal(model, X)
    sol = conic.solve(prog, CertifyOptions().solver)
    assert sol.ok
    return primal_solution(prog, sol)


def _solve_dual(model, X):
    prog = build_dual(model, X)
    sol = conic.solve(prog)
    assert sol.ok
    return dual_solution(prog, sol)


def _direct_convex_min(a, b, X):
    """min_x max_j (a_j.x + b_j) over X with cvxpy, an independent modelling stack."""
    import cvxpy as cp

    x = cp.Variable(X.d)
    cons = []
    for c in X.constraints:
        if isinstance(c, HalfSpace):
            cons.append(c.psi @ x + c.omega <= 0)
        else:
            cons.append(cp.norm(x - c.center, c.norm.ord) <= c.radius)
    prob = cp.Problem(cp.Minimize(cp.max(a @ x + b)), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value, x.value


# ---- pruning


def test_prune_dominated_piece():
    g = MinMaxModel(np.array([[[1.0], [1.0]]]), np.array([[0.0, -1.0]]))
    pruned, removed = prune_redundant(g)
    assert removed == [(0, 1)]
    assert pruned.n == 1


def test_prune_keeps_abs():
    g = MinMaxModel(np.array([[[1.0], [-1.0]]]), np.array([[0.0, 0.0]]))
    pruned, removed = prune_redundant(g)
    assert removed == [] and pruned.n == 2


def test_prune_matches_grid_activity(rng):
    grid = np.linspace(-100, 100, 200_001)
    for _ in range(20):
        m, n = int(rng.integers(1, 4)), int(rng.integers(1, 7))
        g = MinMaxModel.random(rng, 1, m, n)
        _, removed = prune_redundant(g)
        vals = g.a[..., 0][None] * grid[:, None, None] + g.b[None]
        active = vals >= vals.max(axis=2, keepdims=True) - 1e-9
        for i in range(m):
            for j in range(n):
                assert ((i, j) in removed) == (not active[:, i, j].any())


def test_prune_preserves_values(rng):
    for _ in range(20):
        g = MinMaxModel.random(rng, 2, 3, 5)
        pruned, _ = prune_redundant(g)
        X = rng.uniform(-10, 10, (500, 2))
        assert np.max(np.abs(evaluate(pruned, X) - evaluate(g, X))) <= 1e-12


# ---- primal


def test_primal_m_abs():
    assert _solve_primal(M_ABS, BOX).objective == pytest.approx(0.0, abs=1e-8)


def test_primal_constant():
    g = MinMaxModel.constant(5.0, 2)
    X = AttackSet.ball([0.3, 0.1], 0.5, Norm.L2)
    assert _solve_primal(g, X).objective == pytest.approx(5.0, abs=1e-8)


def test_primal_single_component_matches_direct(rng):
    for _ in range(10):
        d = int(rng.integers(1, 4))
        g = prune_redundant(MinMaxModel.random(rng, d, 1, 4))[0]
        X = random_attack_set(rng, d)
        direct, xd = _direct_convex_min(g.a[0], g.b[0], X)
        P = _solve_primal(g, X)
        assert P.objective == pytest.approx(direct, abs=1e-6 * (1 + abs(direct)))
        attack, _, _ = extract_attack(P, g, X)
        assert evaluate(g, attack) == pytest.approx(direct, abs=1e-6 * (1 + abs(direct)))


def test_primal_solution_invariants(rng):
    g = prune_redundant(MinMaxModel.random(rng, 2, 4, 3))[0]
    P = _solve_primal(g, AttackSet.ball([0.0, 0.0], 1.0, Norm.L1))
    assert np.all(P.lam >= -1e-8) and abs(P.lam.sum() - 1) <= 1e-8
    assert P.objective == pytest.approx(P.eta.sum(), abs=1e-12)


# ---- dual


def test_dual_abs_on_box():
    g = MinMaxModel(np.array([[[1.0], [-1.0]]]), np.array([[0.0, 0.0]]))
    assert _solve_dual(g, AttackSet.box([-1.0], [1.0])).objective == pytest.approx(0.0, abs=1e-7)


def test_dual_m_abs_matches_primal():
    assert _solve_dual(M_ABS, BOX).objective == pytest.approx(_solve_primal(M_ABS, BOX).objective, abs=1e-7)


def test_dual_solution_invariants(rng):
    g = prune_redundant(MinMaxModel.random(rng, 2, 3, 3))[0]
    X = AttackSet([NormBall(Norm.L2, [0.0, 0.0], 1.0), HalfSpace([1.0, 0.5], -0.3)])
    D = _solve_dual(g, X)
    assert np.abs(D.y + D.z.sum(axis=1)).max() <= 1e-6
    assert np.abs(D.y - np.einsum("ij,ijk->ik", D.theta, g.a)).max() <= 1e-6
    assert np.all(D.nu >= -1e-8) and np.all(np.diagonal(D.nu, axis1=1, axis2=2) == 0)


def test_weak_duality_random(rng):
    for _ in range(30):
        d = int(rng.integers(1, 4))
        g = prune_redundant(MinMaxModel.random(rng, d, int(rng.integers(1, 5)), int(rng.integers(1, 5))))[0]
        X = random_attack_set(rng, d)
        lo, up = _solve_primal(g, X).objective, _solve_dual(g, X).objective
        assert up <= lo + 1e-6 * (1 + abs(lo))


def test_max_affine_conjugate_domain():
    a = np.array([[1.0], [-1.0]])
    b = np.zeros(2)
    # |x| has conjugate 0 on [-1, 1] and +inf outside
    assert max_affine_conjugate(a, b, [0.5]) == pytest.approx(0.0, abs=1e-8)
    assert max_affine_conjugate(a, b, [1.5]) == np.inf


def test_conjugate_system_abs():
    a, b = np.array([[1.0], [-1.0]]), np.zeros(2)
    assert conjugate_system_feasible(a, b, [0.5], 0.0)
    assert not conjugate_system_feasible(a, b, [0.5], -0.1)
    assert not conjugate_system_feasible(a, b, [1.5], 100.0)


def test_conjugate_system_matches_lp(rng):
    for _ in range(20):
        a, b = rng.standard_normal((4, 2)), rng.standard_normal(4)
        g, _ = prune_redundant(MinMaxModel(a[None], b[None]))
        y = rng.dirichlet(np.ones(g.n)) @ g.a[0]
        val = max_affine_conjugate(g.a[0], g.b[0], y)
        assert conjugate_system_feasible(g.a[0], g.b[0], y, val + 1e-4)
        assert not conjugate_system_feasible(g.a[0], g.b[0], y, val - 1e-4)


# ---- Slater


def test_slater_polyhedral_ok():
    assert verify_slater(M_ABS, BOX) is SlaterStatus.OK


def test_slater_l2_ok(rng):
    for _ in range(5):
        g = prune_redundant(MinMaxModel.random(rng, 2, 3, 3))[0]
        assert verify_slater(g, AttackSet.ball(rng.standard_normal(2), 0.7, Norm.L2), 1e-6) is SlaterStatus.OK


def test_zero_radius_rejected_upstream():
    with pytest.raises(ValueError):
        AttackSet.ball([0.0], 0.0, Norm.L2)


# ---- attack extraction and certify


def test_m_abs_attack_atoms():
    P = _solve_primal(M_ABS, BOX)
    attack, lam, atoms = extract_attack(P, M_ABS, BOX)
    for i, x in atoms.items():
        assert min(abs(x[0]), abs(x[0] - 1)) <= 1e-6
    assert evaluate(M_ABS, attack) == pytest.approx(0.0, abs=1e-8)


def test_certify_m_abs():
    r = certify(M_ABS, BOX)
    assert r.status is CertStatus.CERTIFIED and r.p_star == 0.0
    assert r.slater is SlaterStatus.OK and r.gap <= 1e-6


def test_certify_constant_negative():
    X = AttackSet.ball([0.2, -0.4], 0.3, Norm.L2)
    r = certify(MinMaxModel.constant(-1.0, 2), X)
    assert r.status is CertStatus.FALSIFIED
    assert r.p_star == pytest.approx(-1.0, abs=1e-8)
    assert contains(X, r.attack) and evaluate(MinMaxModel.constant(-1.0, 2), r.attack) == -1.0


def test_certify_result_json_schema():
    obj = certify(M_ABS, BOX).to_dict()
    assert set(obj) == {"p_star", "gap", "status", "attack", "atom_weights", "slater"}
    assert obj["status"] in ("certified", "falsified", "indeterminate")
    assert obj["slater"] in ("ok", "fail", "indeterminate")


def test_certify_rejects_unbounded():
    with pytest.raises(UnboundedSetError):
        certify(M_ABS, AttackSet([HalfSpace([1.0], 0.0)]))


def test_certify_dimension_mismatch():
    with pytest.raises(ValueError):
        certify(M_ABS, AttackSet.ball([0.0, 0.0], 1.0))


def test_pruning_does_not_change_pstar(rng):
    for _ in range(10):
        g = MinMaxModel.random(rng, 2, 3, 5)
        X = random_attack_set(rng, 2)
        a = certify(g, X).p_star
        b = certify(g, X, CertifyOptions(prune=False)).p_star
        assert a == pytest.approx(b, abs=1e-6)


def test_nested_balls(rng):
    for _ in range(10):
        g = MinMaxModel.random(rng, 3, 3, 3)
        c = rng.standard_normal(3)
        small = certify(g, AttackSet.ball(c, 0.3, Norm.L2)).p_star
        big = certify(g, AttackSet.ball(c, 0.6, Norm.L2)).p_star
        assert small >= big - 1e-6


def test_enumerate_oracle_m_abs():
    assert enumerate_oracle(M_ABS, BOX) == pytest.approx(0.0, abs=1e-8)
    val, x = enumerate_oracle(M_ABS, BOX, return_point=True)
    assert contains(BOX, x)


def test_enumerate_oracle_grid(rng):
    h = 2e-3
    for _ in range(10):
        g = MinMaxModel.random(rng, 2, 3, 3)
        X = AttackSet.box([-0.5, -0.5], [0.5, 0.5])
        grid = np.stack(np.meshgrid(*[np.arange(-0.5, 0.5 + h / 2, h)] * 2), axis=-1).reshape(-1, 2)
        gmin = evaluate(g, grid).min()
        L1 = np.abs(g.a).sum(axis=2).max()
        o = enumerate_oracle(g, X)
        assert o <= gmin + 1e-7 and gmin <= o + L1 * h


# ---- radius and accuracy


def test_radius_constant():
    assert certified_radius(MinMaxModel.constant(2.0, 2), [0.0, 0.0], Norm.LINF) == 1.0


def test_radius_identity():
    g = MinMaxModel(np.array([[[1.0]]]), np.array([[0.0]]))
    assert certified_radius(g, [0.5], Norm.LINF) == pytest.approx(0.5, abs=1e-3)


def test_radius_misclassified_is_zero():
    g = MinMaxModel(np.array([[[1.0]]]), np.array([[0.0]]))
    assert certified_radius(g, [-0.5], Norm.LINF) == 0.0


def test_radius_recertifies(rng):
    tol = 1e-3
    done = 0
    while done < 5:
        g = MinMaxModel.random(rng, 2, 3, 3)
        c = rng.standard_normal(2)
        if evaluate(g, c) < 0.05:
            continue
        r = certified_radius(g, c, Norm.LINF, eps_max=1.0, tol=tol)
        if r >= 1.0:
            continue
        assert certify(g, AttackSet.ball(c, r, Norm.LINF)).status is CertStatus.CERTIFIED
        assert certify(g, AttackSet.ball(c, r + 2 * tol, Norm.LINF)).status is CertStatus.FALSIFIED
        done += 1


def test_accuracy_zero_radius_is_clean(rng):
    g = MinMaxModel.random(rng, 2, 3, 3)
    pts = rng.standard_normal((30, 2))
    labels = np.where(rng.uniform(size=30) < 0.5, 1, 0)
    clean = float(np.mean(evaluate(g, pts[labels == 1]) >= 0))
    assert certified_accuracy(g, pts, labels, 0.0) == clean


def test_accuracy_large_radius_zero(rng):
    g = MinMaxModel(np.array([[[1.0, 0.0]]]), np.array([[0.0]]))
    pts = rng.uniform(0.1, 0.5, (10, 2))
    assert certified_accuracy(g, pts, np.ones(10), 0.6) == 0.0


def test_accuracy_monotone(rng):
    g = MinMaxModel.random(rng, 2, 3, 3)
    pts = rng.standard_normal((15, 2))
    labels = np.ones(15)
    curve = [certified_accuracy(g, pts, labels, e) for e in (0.0, 0.05, 0.1, 0.2, 0.4)]
    assert all(b <= a for a, b in zip(curve, curve[1:]))


def test_accuracy_parallel_matches(rng):
    g = MinMaxModel.random(rng, 2, 3, 3)
    pts = rng.standard_normal((8, 2))
    labels = np.ones(8)
    assert certified_accuracy(g, pts, labels, 0.1, jobs=2) == certified_accuracy(g, pts, labels, 0.1)


def test_indeterminate_radius_raises(monkeypatch):
    import sys

    C = sys.modules["minmaxcert.certify"]  # the package re-exports the function under the same name

    def fake(model, X, opts=None):
        return C.CertificationResult(float("nan"), float("nan"), None, None, CertStatus.INDETERMINATE,
                                     SlaterStatus.INDETERMINATE)

    monkeypatch.setattr(C, "certify", fake)
    g = MinMaxModel(np.array([[[1.0]]]), np.array([[0.0]]))
    with pytest.raises(CertificationError):
        C.certified_radius(g, [0.5])
