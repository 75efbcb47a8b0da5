import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tramark import data, nn


def test_zero_noise_reproduces_templates():
    ds = data.generate_synthetic(5, 7, 12, 0.0, seed=3)
    for c in range(5):
        rows = ds.inputs[ds.labels == c]
        assert len(rows) == 7
        assert np.all(rows == rows[0])
    assert len({r.tobytes() for r in ds.inputs}) == 5


def test_generate_counts_and_range():
    ds = data.generate_synthetic(10, 200, 784, 0.25, seed=0)
    assert len(ds) == 2000 and ds.input_dim == 784
    assert np.all(np.bincount(ds.labels) == 200)
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1


def test_negative_noise_rejected():
    with pytest.raises(ValueError):
        data.generate_synthetic(3, 2, 4, -0.1, seed=0)


def test_template_seed_shares_templates():
    a = data.generate_synthetic(3, 4, 9, 0.0, seed=1, template_seed=42)
    b = data.generate_synthetic(3, 6, 9, 0.0, seed=2, template_seed=42)
    np.testing.assert_array_equal(a.inputs[::4], b.inputs[::6])
    c = data.generate_synthetic(3, 4, 9, 0.3, seed=2, template_seed=42)
    assert not np.array_equal(a.inputs, c.inputs)


def test_margin_blanks_border():
    ds = data.generate_synthetic(3, 2, 784, 0.0, seed=0, margin=4)
    img = ds.inputs.reshape(-1, 28, 28)
    assert not img[:, :4].any() and not img[:, -4:].any() and not img[:, :, :4].any()
    assert img[:, 4:24, 4:24].any()
    with pytest.raises(ValueError):
        data.generate_synthetic(3, 2, 30, 0.0, seed=0, margin=2)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_synthetic_task_is_learnable(seed):
    ds = data.generate_synthetic(4, 50, 16, 0.25, seed=seed)
    spec = nn.NetworkSpec((16, 16, 4))
    p = spec.init_params(np.random.default_rng(seed))
    for _ in range(50):
        _, g = nn.loss_and_gradient(spec, p, ds.inputs, ds.labels)
        p = nn.sgd_step(p, g, 0.5)
    assert nn.accuracy(spec, p, ds.inputs, ds.labels) >= 0.95


def _idx_pair(tmp_path, n=10000, labels=None):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, n) if labels is None else labels
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    data.write_idx(ip, lp, imgs, labels)
    return ip, lp, imgs


def test_load_idx_full_size(tmp_path):
    ip, lp, imgs = _idx_pair(tmp_path)
    ds = data.load_idx(ip, lp)
    assert len(ds) == 10000 and ds.input_dim == 784 and ds.class_count == 10
    np.testing.assert_allclose(ds.inputs[3], imgs[3].ravel() / 255.0, rtol=1e-6)
    assert ds.inputs.max() <= 1 and ds.inputs.min() >= 0


def test_load_idx_count_mismatch(tmp_path):
    ip, _, _ = _idx_pair(tmp_path, n=5)
    _, lp, _ = _idx_pair(tmp_path / ".." / tmp_path.name, n=5)
    lp2 = tmp_path / "lab4.idx"
    data.write_idx(tmp_path / "x.idx", lp2, np.zeros((4, 28, 28)), np.zeros(4))
    with pytest.raises(data.FormatError, match="count mismatch"):
        data.load_idx(ip, lp2)


def test_load_idx_empty_file(tmp_path):
    ip, lp, _ = _idx_pair(tmp_path, n=3)
    empty = tmp_path / "empty.idx"
    empty.write_bytes(b"")
    with pytest.raises(data.FormatError, match="byte offset 0"):
        data.load_idx(empty, lp)


def test_load_idx_bad_magic_and_truncation(tmp_path):
    ip, lp, _ = _idx_pair(tmp_path, n=3)
    raw = ip.read_bytes()
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x00\x00\x08\x01" + raw[4:])
    with pytest.raises(data.FormatError, match="bad magic"):
        data.load_idx(bad, lp)
    cut = tmp_path / "cut.idx"
    cut.write_bytes(raw[:-10])
    with pytest.raises(data.FormatError, match=f"byte offset {len(raw) - 10}"):
        data.load_idx(cut, lp)


def test_iid_partition_balanced():
    ds = data.generate_synthetic(4, 25, 3, 0.1, seed=0)
    plan = data.iid_partition(ds, 10, seed=0)
    assert all(len(ix) == 10 for ix in plan.client_indices)
    assert sorted(np.concatenate(plan.client_indices)) == list(range(100))


def test_dirichlet_large_gamma_near_uniform():
    ds = data.generate_synthetic(5, 1000, 2, 0.1, seed=0)
    for seed in range(3):
        plan = data.dirichlet_partition(ds, 5, 1e6, seed)
        for ix in plan.client_indices:
            hist = np.bincount(ds.labels[ix], minlength=5)
            assert np.all(np.abs(hist - 200) <= 0.2 * 200)


def test_dirichlet_two_clients_one_class():
    ds = data.LabeledDataset(np.zeros((10, 2), np.float32), np.zeros(10, np.int64), 2)
    plan = data.dirichlet_partition(ds, 2, 0.5, seed=0)
    a, b = plan.client_indices
    assert sorted(np.concatenate([a, b])) == list(range(10))
    assert len(a) and len(b)


def test_dirichlet_deterministic_and_errors():
    ds = data.generate_synthetic(3, 10, 2, 0.1, seed=0)
    p1 = data.dirichlet_partition(ds, 4, 0.5, seed=7)
    p2 = data.dirichlet_partition(ds, 4, 0.5, seed=7)
    assert all(np.array_equal(a, b) for a, b in zip(p1.client_indices, p2.client_indices))
    with pytest.raises(ValueError):
        data.dirichlet_partition(ds, 4, 0.0, seed=0)
    with pytest.raises(ValueError):
        data.dirichlet_partition(ds.subset([0, 1]), 3, 0.5, seed=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 15), st.floats(0.01, 100), st.integers(2, 6),
       st.integers(1, 8))
def test_dirichlet_is_a_partition(seed, n, gamma, classes, per_class):
    ds = data.generate_synthetic(classes, per_class, 2, 0.1, seed=0)
    if len(ds) < n:
        with pytest.raises(ValueError):
            data.dirichlet_partition(ds, n, gamma, seed)
        return
    plan = data.dirichlet_partition(ds, n, gamma, seed)
    allix = np.concatenate(plan.client_indices)
    assert sorted(allix) == list(range(len(ds)))
    assert all(len(ix) > 0 for ix in plan.client_indices)


def test_watermark_labels_distinct_when_n_equals_c():
    sets = data.build_watermark_datasets(10, 100, 784, 10, seed=0)
    assert [w.target_label for w in sets] == list(range(10))
    assert all(w.size == 100 and w.holdout_triggers.shape == (100, 784) for w in sets)


def test_watermark_labels_wrap_around():
    sets = data.build_watermark_datasets(12, 5, 64, 10, seed=0)
    assert sets[10].target_label == 0 and sets[11].target_label == 1


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(1, 30))
def test_trigger_sets_pairwise_disjoint(seed, n, size):
    sets = data.build_watermark_datasets(n, size, 49, 10, seed=seed)
    hashes = [data.row_hashes(np.concatenate([w.triggers, w.holdout_triggers])) for w in sets]
    for i in range(n):
        for j in range(i + 1, n):
            assert not hashes[i] & hashes[j]


def test_base_patterns_are_separated():
    sets = data.build_watermark_datasets(10, 200, 784, 10, seed=1, jitter=0.1)
    means = [w.triggers.mean(axis=0) for w in sets]
    for i in range(10):
        own = np.linalg.norm(sets[i].holdout_triggers.mean(axis=0) - means[i])
        for j in range(10):
            if i != j:
                assert np.linalg.norm(means[i] - means[j]) > 5 * own


def test_block_pattern_is_blocky():
    p = data.block_pattern(np.random.default_rng(0), 784).reshape(28, 28)
    assert len(np.unique(p)) == 16
    assert np.all(p[:7, :7] == p[0, 0])


def test_watermarks_deterministic():
    a = data.build_watermark_datasets(3, 4, 16, 3, seed=5)
    b = data.build_watermark_datasets(3, 4, 16, 3, seed=5)
    assert all(x.triggers.tobytes() == y.triggers.tobytes() for x, y in zip(a, b))


def test_ood_source_uses_label_i():
    ood = data.generate_synthetic(4, 30, 16, 0.2, seed=0)
    sets = data.build_watermark_datasets(3, 10, 16, 10, seed=0, source="ood_idx_dataset", ood=ood)
    for i, w in enumerate(sets):
        pool = data.row_hashes(ood.inputs[ood.labels == i])
        assert data.row_hashes(w.triggers) <= pool and data.row_hashes(w.holdout_triggers) <= pool
        assert w.size == 10 and w.target_label == i
    with pytest.raises(ValueError, match="distinct OOD labels"):
        data.build_watermark_datasets(5, 10, 16, 10, seed=0, source="ood_idx_dataset", ood=ood)


def test_watermark_size_validated():
    with pytest.raises(ValueError):
        data.build_watermark_datasets(2, 0, 16, 2, seed=0)


def test_watermark_testset_labels():
    sets = data.build_watermark_datasets(3, 4, 16, 3, seed=0)
    x, y = data.watermark_testset(sets)
    assert x.shape == (12, 16) and list(y) == [0] * 4 + [1] * 4 + [2] * 4
