import numpy as np
import pytest

from posegnn.autodiff import Tape, Tensor, backward
from posegnn.backbone import Backbone
from posegnn.errors import ConfigError, FormatError, ShapeError
from posegnn.network import NetConfig, PoseNet, deep_supervision_loss, read_checkpoint, write_checkpoint
from posegnn.posegraph import PoseGraph

from oracles import naive_conv2d


def _img(seed, B=2, H=8):
    return Tensor(np.random.default_rng(seed).uniform(size=(B, 1, H, H)))


def test_zero_lift_equals_no_cpf():
    on = Backbone(num_joints=3, width=4, stages=3, cpf=True, seed=1)
    off = Backbone(num_joints=3, width=4, stages=3, cpf=False, seed=1)
    for k, v in off.params.items():
        assert np.array_equal(on.params[k].data, v.data)
    for s in (2, 3):
        on.params[f"s{s}.lift.w"].data[...] = 0
        on.params[f"s{s}.lift.b"].data[...] = 0
    x = _img(0)
    for a, b in zip(on.forward(x)[0], off.forward(x)[0]):
        assert np.array_equal(a.data, b.data)


def test_default_zero_lift_starts_equal_to_no_cpf():
    on = Backbone(num_joints=3, width=4, stages=3, cpf=True, seed=2)
    off = Backbone(num_joints=3, width=4, stages=3, cpf=False, seed=2)
    x = _img(4)
    for a, b in zip(on.forward(x)[0], off.forward(x)[0]):
        assert np.array_equal(a.data, b.data)
    uni = Backbone(num_joints=3, width=4, stages=3, cpf=True, seed=2, lift_init="uniform")
    assert np.abs(uni.params["s2.lift.w"].data).max() > 0
    with pytest.raises(ConfigError):
        Backbone(num_joints=3, lift_init="normal")


def test_single_stage():
    bb = Backbone(num_joints=3, width=4, stages=1, cpf=True, seed=1)
    preds, _ = bb.forward(_img(1))
    assert len(preds) == 1 and preds[0].shape == (2, 3, 4, 4)
    assert not any("lift" in k for k in bb.params)


def _relu(a):
    return np.maximum(a, 0)


def test_stagewise_scalar_oracle():
    bb = Backbone(num_joints=2, width=3, stages=2, cpf=True, seed=4)
    rng = np.random.default_rng(5)
    for t in bb.params.values():
        t.data[...] = rng.normal(size=t.shape) * 0.5
    x = _img(2, B=1, H=8)
    preds, _ = bb.forward(x)

    P = {k: v.data for k, v in bb.params.items()}
    f = _relu(naive_conv2d(x.data, P["stem0.w"], P["stem0.b"], stride=2, padding=1))
    f1 = _relu(naive_conv2d(_relu(naive_conv2d(f, P["s1.c1.w"], P["s1.c1.b"], padding=1)), P["s1.c2.w"], P["s1.c2.b"], padding=1))
    p1 = naive_conv2d(f1, P["s1.head.w"], P["s1.head.b"])
    fused = f1 + naive_conv2d(p1, P["s2.lift.w"], P["s2.lift.b"])
    f2 = _relu(naive_conv2d(_relu(naive_conv2d(fused, P["s2.c1.w"], P["s2.c1.b"], padding=1)), P["s2.c2.w"], P["s2.c2.b"], padding=1))
    p2 = naive_conv2d(f2, P["s2.head.w"], P["s2.head.b"])
    np.testing.assert_allclose(preds[0].data, p1, atol=1e-10, rtol=0)
    np.testing.assert_allclose(preds[1].data, p2, atol=1e-10, rtol=0)


def test_backbone_errors():
    with pytest.raises(ConfigError):
        Backbone(stages=0)
    with pytest.raises(ShapeError):
        Backbone(num_joints=2, width=2).forward(Tensor(np.zeros((1, 1, 7, 7))))


def test_deep_supervision_loss():
    rng = np.random.default_rng(6)
    gt = rng.normal(size=(2, 3, 4, 4))
    assert deep_supervision_loss([Tensor(gt)] * 3, Tensor(gt), Tensor(gt)).item() == 0.0
    p = Tensor(gt + 0.1)
    two = deep_supervision_loss([p] * 2, Tensor(gt), Tensor(gt)).item()
    four = deep_supervision_loss([p] * 4, Tensor(gt), Tensor(gt)).item()
    assert four == pytest.approx(2 * two, rel=1e-12)
    preds = [rng.normal(size=gt.shape) for _ in range(3)]
    fin = rng.normal(size=gt.shape)
    ref = 0.0
    for m in preds + [fin]:
        for b in range(2):
            ref += ((m[b] - gt[b]) ** 2).sum() / 3 / 2
    got = deep_supervision_loss([Tensor(m) for m in preds], Tensor(fin), Tensor(gt)).item()
    assert got == pytest.approx(ref, rel=1e-12)


def _tiny_net(T=2, cpf=True, seed=0, dtype=np.float64):
    g = PoseGraph.from_edges(3, [(0, 1), (1, 2)], "tree")
    cfg = NetConfig(num_joints=3, map_size=(4, 4), width=3, stages=2, cpf=cpf, T=T)
    return PoseNet(cfg, g, seed=seed, dtype=dtype)


def test_gradients_reach_every_stage():
    net = _tiny_net()
    rng = np.random.default_rng(7)
    with Tape():
        preds, fin = net.forward(_img(3))
        loss = deep_supervision_loss(preds, fin, Tensor(rng.normal(size=(2, 3, 4, 4))))
    backward(loss)
    for name, p in net.parameters():
        assert p.grad is not None and np.abs(p.grad).sum() > 0, name


def test_param_counts():
    net = _tiny_net(T=2)
    c = net.param_counts()
    assert c["backbone"] == sum(p.size for _, p in net.backbone.parameters())
    assert c["pgnn"] == sum(p.size for _, p in net.pgnn.parameters())
    assert _tiny_net(T=0).param_counts()["pgnn"] == 0


def test_t_does_not_change_backbone_init():
    a, b = _tiny_net(T=0, seed=3), _tiny_net(T=2, seed=3)
    for (n1, p1), (n2, p2) in zip(a.backbone.parameters(), b.backbone.parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)


def test_checkpoint_round_trip(tmp_path):
    net = _tiny_net(T=2)
    p = tmp_path / "m.ckpt"
    write_checkpoint(net, p)
    back = read_checkpoint(p)
    assert back.cfg == net.cfg and back.graph == net.graph
    for (n1, a), (n2, b) in zip(net.parameters(), back.parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(a.data.astype(np.float32), b.data)
    q = tmp_path / "n.ckpt"
    write_checkpoint(back, q)
    assert p.read_bytes() == q.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"nope" + bytes(20))
    with pytest.raises(FormatError, match="magic"):
        read_checkpoint(p)
    write_checkpoint(_tiny_net(), p)
    raw = p.read_bytes()
    p.write_bytes(raw[:-7])
    with pytest.raises(FormatError):
        read_checkpoint(p)
