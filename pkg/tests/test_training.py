import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from posegnn import synthgen as sg
from posegnn.autodiff import Tensor
from posegnn.errors import NumericError, ValidationError
from posegnn.network import NetConfig, PoseNet
from posegnn.posegraph import preset
from posegnn.training import (
    Cell, OptimState, Schedule, ablate, default_grid, evaluate, format_curve, rmsprop_step, run_cell, train,
)

SKEL = sg.lsp_skeleton()
MAP = (8, 8)


@pytest.fixture(scope="module")
def data():
    tr = sg.stack_samples(sg.generate(16, seed=1, map_size=MAP))
    va = sg.stack_samples(sg.generate(8, seed=2, map_size=MAP))
    return tr, va


def small_cfg(**kw):
    return replace(NetConfig(map_size=MAP, width=4, stages=2, T=1), **kw)


def small_net(seed=0, **kw):
    return PoseNet(small_cfg(**kw), preset("tree", SKEL), seed=seed)


def quick(**kw):
    return replace(Schedule(epochs=2, batch_size=4, lr=1e-3, augment=False), **kw)


# --------------------------------------------------------------------------- rmsprop

def test_rmsprop_zero_grad_keeps_params_and_decays_v():
    p = Tensor(np.array([1.0, -2.0]))
    st_ = OptimState(lr=0.1, rho=0.9, v={0: np.array([4.0, 1.0])})
    rmsprop_step([p], [np.zeros(2)], st_)
    assert p.data.tolist() == [1.0, -2.0]
    np.testing.assert_allclose(st_.v[0], [3.6, 0.9], rtol=0, atol=1e-15)


def test_rmsprop_first_step_closed_form():
    g = np.array([3.0, -0.5, 100.0])
    p = Tensor(np.zeros(3))
    rmsprop_step([p], [g], OptimState(lr=0.01))
    expected = -0.01 * np.sign(g) / math.sqrt(1 - 0.99)
    np.testing.assert_allclose(p.data, expected, rtol=1e-6)


def test_rmsprop_two_step_scalar_trace():
    lr, rho, eps = 0.05, 0.9, 1e-8
    p = Tensor(np.array([0.7]))
    st_ = OptimState(lr, rho, eps)
    theta, v = 0.7, 0.0
    for g in (0.3, -1.1):
        rmsprop_step([p], [np.array([g])], st_)
        v = rho * v + (1 - rho) * g * g
        theta = theta - lr * g / (math.sqrt(v) + eps)
    assert abs(p.data[0] - theta) < 1e-12
    assert abs(st_.v[0][0] - v) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), steps=st.integers(1, 5))
def test_rmsprop_accumulator_nonnegative(seed, steps):
    rng = np.random.default_rng(seed)
    p = Tensor(rng.normal(size=(3, 2)))
    st_ = OptimState(lr=1e-2)
    for _ in range(steps):
        rmsprop_step([p], [rng.normal(size=(3, 2)) * 10 ** rng.uniform(-6, 3)], st_)
        assert (st_.v[0] >= 0).all()


def test_rmsprop_none_grad_treated_as_zero():
    p = Tensor(np.ones(2))
    rmsprop_step([p], [None], OptimState(lr=1.0))
    assert p.data.tolist() == [1.0, 1.0]


# --------------------------------------------------------------------------- training

def test_zero_epochs_leaves_initialisation(data):
    tr, va = data
    net, ref = small_net(), small_net()
    res = train(net, tr, va, quick(epochs=0), seed=0)
    for (n, a), (_, b) in zip(net.parameters(), ref.parameters()):
        assert np.array_equal(a.data, b.data), n
    assert res.curve == []


def test_single_sample_loss_strictly_decreases():
    one = sg.stack_samples(sg.generate(1, seed=5, map_size=MAP))
    net = small_net(seed=3)
    res = train(net, one, None, quick(epochs=10, batch_size=1, lr=2e-4, lr_drop_frac=1.0), seed=0)
    losses = [l for _, s, l, _ in res.curve if s == "train"]
    assert len(losses) == 10
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_same_seed_same_curve(data):
    tr, va = data
    sched = quick(augment=True)
    a = train(small_net(seed=4), tr, va, sched, seed=9)
    b = train(small_net(seed=4), tr, va, sched, seed=9)
    assert format_curve(a.curve) == format_curve(b.curve)
    c = train(small_net(seed=4), tr, va, sched, seed=10)
    assert format_curve(a.curve) != format_curve(c.curve)


def test_curve_has_train_and_val_rows(data):
    tr, va = data
    res = train(small_net(), tr, va, quick(), seed=0)
    assert [(e, s) for e, s, _, _ in res.curve] == [(0, "train"), (0, "val"), (1, "train"), (1, "val")]
    assert format_curve(res.curve).splitlines()[0] == "epoch,split,loss,mean_pckh"


def test_lr_drop_epoch():
    assert Schedule(epochs=30).drop_epoch == 24
    assert Schedule(epochs=250).drop_epoch == 200
    assert Schedule(epochs=5, lr_drop_frac=1.0).drop_epoch == 5


def test_nan_loss_aborts_with_diagnostics(data):
    tr, _ = data
    net = small_net()
    net.backbone.params["s1.head.b"].data[0] = np.nan
    with pytest.raises(NumericError, match=r"epoch 0, batch 0.*max \|grad\|"):
        train(net, tr, None, quick(), seed=0)


def test_invalid_inputs(data):
    tr, _ = data
    with pytest.raises(ValidationError):
        train(small_net(), tr.subset([]), None, quick(), seed=0)
    with pytest.raises(ValidationError):
        train(small_net(), tr, None, quick(batch_size=0), seed=0)


# --------------------------------------------------------------------------- evaluation

def test_evaluate_is_side_effect_free(data):
    _, va = data
    net = small_net(seed=2)
    before = [p.data.copy() for _, p in net.parameters()]
    a, b = evaluate(net, va), evaluate(net, va)
    assert a.pckh.tolist() == b.pckh.tolist() and a.stage_pckh == b.stage_pckh and a.loss == b.loss
    assert all(np.array_equal(x, p.data) for x, (_, p) in zip(before, net.parameters()))


def test_evaluate_report_invariants(data):
    _, va = data
    rep = evaluate(small_net(), va)
    assert ((rep.pckh >= 0) & (rep.pckh <= 1)).all() and ((rep.pck >= 0) & (rep.pck <= 1)).all()
    assert rep.mean_pckh == pytest.approx(rep.pckh.mean())
    assert len(rep.stage_pckh) == 3 and rep.stage_pckh[-1] == pytest.approx(rep.mean_pckh)


def test_evaluate_mismatch_named(data):
    _, va = data
    from posegnn.posegraph import PoseGraph
    net3 = PoseNet(NetConfig(num_joints=3, map_size=MAP, width=3, stages=1, T=0),
                   PoseGraph.from_edges(3, [(0, 1), (1, 2)], "tree"))
    with pytest.raises(ValidationError, match="K mismatch"):
        evaluate(net3, va)
    with pytest.raises(ValidationError, match="map size mismatch"):
        evaluate(small_net(map_size=(16, 16)), va)


# --------------------------------------------------------------------------- ablation

def test_default_grid_has_sixteen_cells():
    cells = default_grid()
    assert len(cells) == 16 and len(set(cells)) == 16
    assert {c.T for c in cells} == {0, 1, 2, 3}


def test_t0_and_t2_share_backbone_init():
    a, b = small_net(seed=7, T=0), small_net(seed=7, T=2)
    for (_, x), (_, y) in zip(a.backbone.parameters(), b.backbone.parameters()):
        assert np.array_equal(x.data, y.data)


def test_single_cell_ablation_equals_plain_run(data):
    tr, va = data
    cell = Cell(True, 1, "tree", 0)
    (_, _, res), = ablate([cell], small_cfg(), tr, va, quick())
    net = PoseNet(small_cfg(cpf=True, T=1), preset("tree", SKEL), seed=0)
    plain = train(net, tr, va, quick(), seed=0)
    assert res.report.pckh.tolist() == plain.report.pckh.tolist()
    assert res.report.meta == {"cpf": "on", "graph": "tree", "T": "1", "seed": "0"}
    _, res2 = run_cell(cell, small_cfg(), tr, va, quick())
    assert format_curve(res2.curve) == format_curve(res.curve)
