import math
import os

import numpy as np
import pytest

from posegnn import synthgen as sg
from posegnn.errors import ConfigError, FormatError


@pytest.fixture(scope="module")
def skel():
    return sg.lsp_skeleton()


def test_skeleton_is_single_rooted_tree(skel):
    assert skel.num_joints == 14
    assert skel.parent.count(-1) == 1
    assert sorted(skel.topological_order()) == list(range(14))


def test_mirror_pairs_involutive(skel):
    perm = skel.mirror_permutation()
    assert np.array_equal(perm[perm], np.arange(14))
    for a, b in skel.mirror_pairs:
        assert skel.joint_names[a].replace("l_", "") == skel.joint_names[b].replace("r_", "")


def test_render_gaussian_peak_and_neighbour():
    m = sg.render_gaussian((16, 16), 1.0, 32, 32)
    assert m[16, 16] == 1.0
    # closed form exp(-1/2) for a one-pixel offset
    assert m[16, 17] == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert m[16, 17] == pytest.approx(0.60653, abs=1e-5)
    assert m.max() == 1.0


def test_render_gaussian_far_tail_and_errors():
    assert sg.render_gaussian((-100, -100), 1.0, 32, 32).max() < 1e-6
    with pytest.raises(ConfigError):
        sg.render_gaussian((1, 1), 0.0, 4, 4)


def test_sample_determinism(skel):
    assert sg.sample_pose(skel, 123).equals(sg.sample_pose(skel, 123))
    assert not sg.sample_pose(skel, 123).equals(sg.sample_pose(skel, 124))


def test_zero_ranges_give_canonical_pose(skel):
    d = sg.Difficulty(angle_scale=0.0, global_rotation=0.0, length_jitter=0.0)
    rel = []
    for seed in range(5):
        s = sg.sample_pose(skel, seed, d)
        rel.append(s.joints - s.joints[skel.index("neck")])
    for r in rel[1:]:
        np.testing.assert_allclose(r, rel[0], atol=1e-12)
    # upright: head above neck above hips above ankles
    r = rel[0]
    assert r[skel.index("head_top"), 1] < 0 < r[skel.index("l_hip"), 1] < r[skel.index("l_ankle"), 1]


def test_degenerate_config_rejected(skel):
    with pytest.raises(ConfigError):
        sg.sample_pose(skel, 0, sg.Difficulty(figure_scale=0.0))


def test_joints_in_bounds_sweep(skel):
    d = sg.Difficulty(occluder_prob=0.0)
    for seed in range(1000):
        s = sg.sample_pose(skel, seed, d)
        assert s.visible.all(), seed


def test_heatmap_argmax_and_lengths(skel):
    for s in sg.generate(50, seed=3):
        assert s.head_len > 0 and s.torso_len > 0
        K, H, W = s.gt_heatmaps.shape
        for k in range(K):
            if s.visible[k]:
                r, c = np.unravel_index(np.argmax(s.gt_heatmaps[k]), (H, W))
                x, y = sg.round_half_up(s.joints[k])
                assert (c, r) == (x, y)
                assert s.gt_heatmaps[k, r, c] == 1.0


def test_identity_augment_is_noop(skel):
    s = sg.sample_pose(skel, 5)
    t = sg.augment(s, 99, sg.IDENTITY_AUGMENT, skel)
    assert t.equals(s)


def test_double_flip_restores(skel):
    s = sg.sample_pose(skel, 6)
    f = sg.apply_transform(s, skel, flip=True)
    assert not np.allclose(f.joints, s.joints)
    ff = sg.apply_transform(f, skel, flip=True)
    np.testing.assert_allclose(ff.joints, s.joints, atol=1e-12)
    np.testing.assert_array_equal(ff.image, s.image)
    np.testing.assert_array_equal(ff.gt_heatmaps, s.gt_heatmaps)


def test_flip_swaps_sides(skel):
    s = sg.sample_pose(skel, 8, sg.Difficulty(angle_scale=0.0, global_rotation=0.0))
    f = sg.apply_transform(s, skel, flip=True)
    l, r = skel.index("l_wrist"), skel.index("r_wrist")
    # facing the camera, the left wrist stays on the image right after relabelling
    assert s.joints[l, 0] > s.joints[r, 0]
    assert f.joints[l, 0] > f.joints[r, 0]


def test_rotation_is_rigid(skel):
    s = sg.sample_pose(skel, 7)
    t = sg.apply_transform(s, skel, rotation_deg=30.0)
    d0 = np.linalg.norm(s.joints[:, None] - s.joints[None], axis=-1)
    d1 = np.linalg.norm(t.joints[:, None] - t.joints[None], axis=-1)
    np.testing.assert_allclose(d1, d0, atol=1e-6)


def test_scale_rescales_lengths(skel):
    s = sg.sample_pose(skel, 9)
    t = sg.apply_transform(s, skel, scale=0.8)
    assert t.head_len == pytest.approx(0.8 * s.head_len)
    assert t.torso_len == pytest.approx(0.8 * s.torso_len)


def test_gain_clamps(skel):
    s = sg.sample_pose(skel, 10)
    t = sg.apply_transform(s, skel, gain=3.0)
    assert t.image.max() <= 1.0 and t.image.min() >= 0.0


def test_dataset_round_trip(tmp_path, skel):
    samples = sg.generate(5, seed=1)
    p = tmp_path / "d.pgnd"
    sg.write_dataset(samples, p)
    back = sg.read_dataset(p)
    assert all(sg.to_float32(a).equals(b) for a, b in zip(samples, back))
    q = tmp_path / "e.pgnd"
    sg.write_dataset(back, q)
    assert p.read_bytes() == q.read_bytes()


def test_dataset_file_size(tmp_path):
    samples = sg.generate(100, seed=2)
    p = tmp_path / "d.pgnd"
    sg.write_dataset(samples, p)
    K, H, W, Hi, Wi = 14, 32, 32, 64, 64
    record = 4 * (Hi * Wi + 2 * K + K + K * H * W + 2)
    assert os.path.getsize(p) == 32 + 100 * record


def test_dataset_corruption(tmp_path):
    p = tmp_path / "d.pgnd"
    sg.write_dataset(sg.generate(2, seed=0), p)
    raw = bytearray(p.read_bytes())
    bad = tmp_path / "bad.pgnd"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        sg.read_dataset(bad)
    bad.write_bytes(raw[:-10])
    with pytest.raises(FormatError, match="truncated"):
        sg.read_dataset(bad)
    bad.write_bytes(raw + b"\0" * 8)
    with pytest.raises(FormatError, match="mismatch"):
        sg.read_dataset(bad)
    v = bytearray(raw)
    v[4] = 9
    bad.write_bytes(bytes(v))
    with pytest.raises(FormatError, match="version"):
        sg.read_dataset(bad)
