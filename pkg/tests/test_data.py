import gzip
import math
import struct

import numpy as np
import pytest

from rrae import data


def test_shift_values():
    t = np.array([0.0, math.pi / 2])
    assert data.gen_shift(t, 0.0)[0] == 0.0
    assert data.gen_shift(t, 0.5)[1] == pytest.approx(0.0, abs=1e-15)
    tv = np.linspace(0, 2 * math.pi, 50)
    assert np.allclose(data.gen_shift(tv, 1.0), -np.sin(tv), atol=1e-15)


def stair_oracle(t_v, p, ph0=0.875, amp0=1.0, kappa=2.286, y0=2.3, w=2 * math.pi):
    """Line-by-line scalar evaluation of the stair algorithm."""
    amp = p
    ph = ph0 + kappa * (amp - amp0)
    out, acc = [], 0.0
    for t in t_v:
        g = amp * math.sqrt(t) * math.sin(w * (t - ph)) - y0
        acc += ((abs(g) + g) / 2) ** 5
        out.append(acc)
    return np.array(out)


def test_stair_matches_scalar_oracle():
    t = np.linspace(0, 1, 200)
    got = data.gen_stair(t, 3.0)
    ref = stair_oracle(t, 3.0)
    assert np.max(np.abs(got - ref)) <= 1e-12 * max(1.0, np.abs(ref).max())


def test_stair_oracle_on_wide_grid():
    t = np.linspace(0, 10, 200)
    for p in (1.0, 2.7, 5.0):
        ref = stair_oracle(t, p)
        assert np.max(np.abs(data.gen_stair(t, p) - ref)) <= 1e-12 * np.abs(ref).max()


def test_stair_first_entry_and_monotone():
    t = np.linspace(0, 10, 200)
    for p in np.linspace(1, 5, 9):
        col = data.gen_stair(t, p)
        assert col[0] == 0.0
        assert np.all(np.diff(col) >= 0)


def test_stair_negative_grid_rejected():
    with pytest.raises(data.DomainError):
        data.gen_stair(np.array([-0.1, 0.0]), 2.0)


def test_stair_params_validation():
    with pytest.raises(ValueError):
        data.StairParams(w=0.0)


def test_freqs_values():
    t = np.linspace(0, 10, 11)
    assert data.gen_freqs(np.zeros(1), 0.4, 0.9)[0] == 0.0
    assert np.allclose(data.gen_freqs(t, 0.35, 0.35), 2 * np.sin(0.35 * np.pi * t), atol=1e-15)
    v = data.gen_freqs(np.array([1.0]), 0.4, 0.9)[0]
    assert v == pytest.approx(math.sin(0.4 * math.pi) + math.sin(0.9 * math.pi), abs=1e-15)


def test_gauss_values():
    p1, p2 = 2.0, 5.5
    peak = data.gen_gauss(np.array([p1]), p1, p2)[0]
    assert 1.3 <= peak <= 1.3 + 1.3 * math.exp(-1 / 0.08)
    t = np.linspace(0, 7, 200)
    ref = [1.3 * math.exp(-(x - p1) ** 2 / 0.08) + 1.3 * math.exp(-(x - p2) ** 2 / 0.08) for x in t]
    assert np.max(np.abs(data.gen_gauss(t, p1, p2) - ref)) <= 1e-14


def test_gauss_symmetry():
    p1, p2, d = 2.0, 5.0, 0.13
    second = lambda x: 1.3 * math.exp(-(x - p2) ** 2 / 0.08)  # noqa: E731
    lhs = data.gen_gauss(np.array([p1 + d]), p1, p2)[0] - second(p1 + d)
    rhs = data.gen_gauss(np.array([p1 - d]), p1, p2)[0] - second(p1 - d)
    assert lhs == pytest.approx(rhs, abs=1e-15)


def test_time_grid_validation():
    assert np.all(np.diff(data.time_grid(0, 1, 5)) > 0)
    with pytest.raises(ValueError):
        data.time_grid(0, 1, 1)


@pytest.mark.parametrize("family,n_train,n_test,bounds", [
    ("shift", 17, 80, (0.0, 1.7)),
    ("stair", 40, 300, (1.0, 5.0)),
])
def test_sample_params_1d(family, n_train, n_test, bounds):
    fam = data.FAMILIES[family]
    ps = data.sample_params(fam.bounds, fam.train_counts, fam.test_count, fam.seeds)
    assert ps.train.shape == (n_train, 1) and ps.test.shape == (n_test, 1)
    assert ps.train[0, 0] == bounds[0] and ps.train[-1, 0] == bounds[1]
    assert np.allclose(np.diff(ps.train[:, 0]), (bounds[1] - bounds[0]) / (n_train - 1))
    assert np.all(ps.inside(ps.test))


def test_sample_params_2d_grid():
    fam = data.FAMILIES["gauss"]
    ps = data.sample_params(fam.bounds, fam.train_counts, fam.test_count, fam.seeds)
    assert ps.train.shape == (64, 2)
    assert len(np.unique(ps.train[:, 0])) == 8 and len(np.unique(ps.train[:, 1])) == 8
    assert np.all(ps.inside(ps.test))


def test_sample_params_reproducible():
    a = data.sample_params([(0, 1)], [3], 10, [5])
    b = data.sample_params([(0, 1)], [3], 10, [5])
    assert np.array_equal(a.test, b.test)


def test_sample_params_validation():
    with pytest.raises(ValueError):
        data.sample_params([(0, 1)], [0], 5, [0])


def test_normalize_properties():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(6, 30)) * 3 + 1
    X[2] = 4.0
    Xn, st = data.normalize(X)
    assert np.all(Xn[2] == 0)
    others = [0, 1, 3, 4, 5]
    assert np.all(np.abs(Xn[others].mean(axis=1)) <= 1e-12)
    assert np.all(np.abs(Xn[others].std(axis=1) - 1) <= 1e-10)
    assert np.all(st.std >= st.eps_std)
    assert np.max(np.abs(data.denormalize(Xn, st) - X)) <= 1e-12


def test_dataset_defaults_and_determinism():
    a = data.make_dataset(data.DataConfig("shift"))
    b = data.make_dataset(data.DataConfig("shift"))
    assert a.X.shape == (200, 17) and a.X_test.shape == (200, 80)
    assert a.X.tobytes() == b.X.tobytes() and a.X_test.tobytes() == b.X_test.tobytes()


def test_unknown_family():
    with pytest.raises(ValueError):
        data.make_dataset(data.DataConfig("spiral"))


def test_dataset_round_trip(tmp_path):
    ds = data.make_dataset(data.DataConfig("gauss", T=30, train_counts=(3, 4), test_count=5))
    data.save_dataset(ds, tmp_path)
    back = data.load_dataset(tmp_path)
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.X_test, ds.X_test)
    assert np.array_equal(back.params.train, ds.params.train)
    assert np.array_equal(back.norm.mean, ds.norm.mean)
    assert back.family == "gauss"


def test_idx_round_trip(tmp_path):
    imgs = np.random.default_rng(1).integers(0, 256, size=(4, 3, 5), dtype=np.uint8)
    data.write_idx(tmp_path / "x.idx", imgs)
    raw = (tmp_path / "x.idx").read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x03"
    assert struct.unpack(">3I", raw[4:16]) == (4, 3, 5)
    assert np.array_equal(data.read_idx(tmp_path / "x.idx"), imgs)
    (tmp_path / "x.idx.gz").write_bytes(gzip.compress(raw))
    cols = data.images_dataset(tmp_path / "x.idx.gz", limit=2)
    assert cols.shape == (15, 2)
    assert np.allclose(cols[:, 1], imgs[1].ravel() / 255.0)


def test_idx_big_endian_types(tmp_path):
    vals = np.array([1.5, -2.25, 3.0])
    (tmp_path / "f.idx").write_bytes(b"\x00\x00\x0e\x01" + struct.pack(">I", 3) + vals.astype(">f8").tobytes())
    assert np.array_equal(data.read_idx(tmp_path / "f.idx"), vals)


@pytest.mark.parametrize("blob", [b"\x01\x00\x08\x01", b"\x00\x00\x07\x01\x00\x00\x00\x01\x00",
                                  b"\x00\x00\x08\x01\x00\x00\x00\x05\x00"])
def test_idx_rejects_malformed(tmp_path, blob):
    (tmp_path / "bad.idx").write_bytes(blob)
    with pytest.raises(ValueError):
        data.read_idx(tmp_path / "bad.idx")
