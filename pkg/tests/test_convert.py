import json

import numpy as np
import pytest

from minmaxcert.attack_set import AttackSet
from minmaxcert.certify import certify, prune_redundant
from minmaxcert.convert import ConversionTooLarge, ReluNet1H, load_net, relu_to_minmax
from minmaxcert.model import evaluate


def test_relu_shape():
    g = relu_to_minmax(ReluNet1H([[1.0]], [0.0], [1.0], 0.0))
    assert (g.m, g.n) == (1, 2)
    assert evaluate(g, [[-2.0], [0.0], [3.0]]).tolist() == [0.0, 0.0, 3.0]


def test_negative_relu_shape():
    g = relu_to_minmax(ReluNet1H([[1.0]], [0.0], [-1.0], 0.0))
    assert (g.m, g.n) == (2, 1)
    assert evaluate(g, [[-2.0], [3.0]]).tolist() == [0.0, -3.0]


def test_cap_refusal():
    net = ReluNet1H(np.ones((15, 2)), np.zeros(15), np.ones(15), 0.0)
    with pytest.raises(ConversionTooLarge, match="2\\^15"):
        relu_to_minmax(net)
    with pytest.raises(ConversionTooLarge):
        relu_to_minmax(ReluNet1H.random(np.random.default_rng(0), 2, 6), cap=1)


def test_exact_on_samples(rng):
    for _ in range(20):
        d, h = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        net = ReluNet1H.random(rng, d, h)
        g = relu_to_minmax(net)
        X = rng.uniform(-5, 5, (2000, d))
        assert np.max(np.abs(evaluate(g, X) - net(X))) <= 1e-12 * (1 + np.abs(net(X)).max())


def test_pruned_still_exact(rng):
    net = ReluNet1H.random(rng, 2, 6)
    g, _ = prune_redundant(relu_to_minmax(net))
    X = rng.uniform(-5, 5, (2000, 2))
    assert np.max(np.abs(evaluate(g, X) - net(X))) <= 1e-10


def test_zero_weight_units_dropped():
    net = ReluNet1H([[1.0], [2.0], [3.0]], [0.0, 0.0, 0.0], [1.0, 0.0, -1.0], 0.5)
    g = relu_to_minmax(net)
    assert (g.m, g.n) == (2, 2)


def test_certify_matches_grid(rng):
    h = 1e-3
    grid = np.arange(-1.0, 1.0 + h / 2, h)[:, None]
    for _ in range(5):
        net = ReluNet1H.random(rng, 1, 4)
        res = certify(relu_to_minmax(net), AttackSet.box([-1.0], [1.0]))
        gmin = net(grid).min()
        L = np.sum(np.abs(net.w2 * net.W1[:, 0]))
        assert res.p_star <= gmin + 1e-6 and gmin <= res.p_star + L * h


def test_json_roundtrip(rng, tmp_path):
    net = ReluNet1H.random(rng, 3, 4)
    p = tmp_path / "net.json"
    p.write_text(json.dumps(net.to_dict()))
    back = load_net(p)
    assert np.array_equal(back.W1, net.W1) and back.b2 == net.b2


def test_bad_net_fields():
    with pytest.raises(ValueError, match="w2"):
        ReluNet1H.from_dict({"W1": [[1.0]], "b1": [0.0], "b2": 0.0})
    with pytest.raises(ValueError):
        ReluNet1H([[1.0]], [0.0, 1.0], [1.0], 0.0)
