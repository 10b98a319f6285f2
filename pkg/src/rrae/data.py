"""Synthetic parametric curve families and dataset I/O.

Each family maps a parameter vector ``p`` to one column sampled on a time
grid.  Train parameters sit on an equidistant grid over the family's box;
test parameters are drawn uniformly inside that box from a Philox stream.
"""

import csv
import gzip
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

EPS_STD = 1e-8


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class StairParams:
    ph0: float = 0.875
    amp0: float = 1.0
    kappa: float = 2.286
    y0: float = 2.3
    w: float = 2 * np.pi

    def __post_init__(self):
        if self.w <= 0:
            raise ValueError("stair frequency w must be positive")


def time_grid(start, stop, n):
    if n < 2 or not stop > start:
        raise ValueError(f"need T >= 2 and stop > start, got T={n}, [{start}, {stop}]")
    return np.linspace(start, stop, n)


def gen_shift(t, p):
    return np.sin(np.asarray(t, dtype=np.float64) - p * np.pi)


def gen_stair(t, p, sp=StairParams()):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise DomainError("stair curves need a non-negative time grid")
    amp = p
    ph = sp.ph0 + sp.kappa * (amp - sp.amp0)
    g = amp * np.sqrt(t) * np.sin(sp.w * (t - ph)) - sp.y0
    h = ((np.abs(g) + g) / 2) ** 5
    return np.cumsum(h)


def gen_freqs(t, p1, p2):
    t = np.asarray(t, dtype=np.float64)
    return np.sin(p1 * np.pi * t) + np.sin(p2 * np.pi * t)


def gen_gauss(t, p1, p2):
    t = np.asarray(t, dtype=np.float64)
    return 1.3 * np.exp(-((t - p1) ** 2) / 0.08) + 1.3 * np.exp(-((t - p2) ** 2) / 0.08)


@dataclass(frozen=True)
class Family:
    name: str
    bounds: tuple  # one (lo, hi) pair per parameter dimension
    grid: tuple  # (start, stop) of the time axis
    train_counts: tuple
    test_count: int
    seeds: tuple  # test seeds, one per parameter dimension
    k_max: int
    kappa_w: float | None

    @property
    def dims(self):
        return len(self.bounds)


# Test seeds are the ones listed for the reference runs; streams differ from
# the original framework so only the seed values carry over.
FAMILIES = {
    "shift": Family("shift", ((0.0, 1.7),), (0.0, 2 * np.pi), (17,), 80, (0,), 1, None),
    "stair": Family("stair", ((1.0, 5.0),), (0.0, 10.0), (40,), 300, (0,), 1, None),
    "freqs": Family("freqs", ((0.3, 0.5), (0.8, 1.0)), (0.0, 10.0), (8, 8), 100, (140, 8), 12, 0.66),
    "gauss": Family("gauss", ((1.0, 3.0), (4.0, 6.0)), (0.0, 7.0), (8, 8), 100, (1000, 50), 2, 0.13),
}


def generate_column(family, t, p, stair=StairParams()):
    if family == "shift":
        return gen_shift(t, p[0])
    if family == "stair":
        return gen_stair(t, p[0], stair)
    if family == "freqs":
        return gen_freqs(t, p[0], p[1])
    if family == "gauss":
        return gen_gauss(t, p[0], p[1])
    raise ValueError(f"unknown family {family!r}")


@dataclass
class ParamSet:
    bounds: list
    train: np.ndarray  # (D_train, dims)
    test: np.ndarray  # (D_test, dims)
    train_counts: list
    seeds: list

    @property
    def dims(self):
        return len(self.bounds)

    def inside(self, points):
        pts = np.atleast_2d(points)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.all((pts >= lo) & (pts <= hi), axis=1)


def sample_params(bounds, train_counts, test_count, seeds):
    """Equidistant train grid (first dimension varies slowest) and uniform test draws."""
    bounds = [tuple(map(float, b)) for b in bounds]
    if len(train_counts) != len(bounds) or len(seeds) != len(bounds):
        raise ValueError("need one train count and one seed per parameter dimension")
    if min(train_counts) < 1 or test_count < 1:
        raise ValueError("train and test counts must be >= 1")
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(bounds, train_counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    train = np.stack([m.ravel() for m in mesh], axis=1)
    cols = []
    for (lo, hi), seed in zip(bounds, seeds):
        rng = np.random.Generator(np.random.Philox(int(seed)))
        cols.append(rng.uniform(lo, hi, size=test_count))
    test = np.stack(cols, axis=1)
    return ParamSet(bounds, train, test, list(train_counts), [int(s) for s in seeds])


@dataclass
class Normalization:
    mean: np.ndarray  # (T, 1)
    std: np.ndarray  # (T, 1)
    eps_std: float = EPS_STD


def normalize(X, stats=None, eps_std=EPS_STD):
    """Per-row (time sample) standardisation across columns."""
    X = np.asarray(X, dtype=np.float64)
    if stats is None:
        if X.shape[1] < 2:
            raise ValueError("need at least two columns to estimate a standard deviation")
        mean = X.mean(axis=1, keepdims=True)
        std = np.maximum(X.std(axis=1, keepdims=True), eps_std)
        stats = Normalization(mean, std, eps_std)
    return (X - stats.mean) / stats.std, stats


def denormalize(Xn, stats):
    return np.asarray(Xn) * stats.std + stats.mean


@dataclass
class Dataset:
    family: str
    t: np.ndarray
    X: np.ndarray  # raw train snapshots, (T, D_train)
    X_test: np.ndarray  # raw test snapshots, (T, D_test)
    params: ParamSet
    norm: Normalization = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.X.shape[1] != len(self.params.train):
            raise ValueError("train columns do not match train parameters")
        if self.norm is None:
            _, self.norm = normalize(self.X)

    @property
    def Xn(self):
        return normalize(self.X, self.norm)[0]

    @property
    def T(self):
        return self.X.shape[0]


@dataclass(frozen=True)
class DataConfig:
    family: str = "shift"
    T: int = 200
    grid: tuple | None = None
    train_counts: tuple | None = None
    test_count: int | None = None
    seeds: tuple | None = None
    stair: StairParams = StairParams()

    def resolved(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {sorted(FAMILIES)}")
        fam = FAMILIES[self.family]
        return Family(
            fam.name,
            fam.bounds,
            tuple(self.grid) if self.grid is not None else fam.grid,
            tuple(self.train_counts) if self.train_counts is not None else fam.train_counts,
            self.test_count if self.test_count is not None else fam.test_count,
            tuple(self.seeds) if self.seeds is not None else fam.seeds,
            fam.k_max,
            fam.kappa_w,
        )


def make_dataset(cfg=DataConfig()):
    fam = cfg.resolved()
    t = time_grid(fam.grid[0], fam.grid[1], cfg.T)
    ps = sample_params(fam.bounds, fam.train_counts, fam.test_count, fam.seeds)

    def build(points):
        return np.stack([generate_column(fam.name, t, p, cfg.stair) for p in points], axis=1)

    meta = {"grid": list(fam.grid), "T": cfg.T}
    if fam.name == "stair":
        meta["stair"] = asdict(cfg.stair)
    return Dataset(fam.name, t, build(ps.train), build(ps.test), ps, meta=meta)


# ---------------------------------------------------------------------------
# files


def _write_matrix_csv(path, X, params):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([";".join(repr(float(v)) for v in p) for p in params])
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def _read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    params = np.array([[float(v) for v in h.split(";")] for h in rows[0]])
    X = np.array([[float(v) for v in r] for r in rows[1:]])
    return X, params


def save_dataset(ds, out_dir):
    """Write train/test CSVs (header = parameter values) and a JSON sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix_csv(out / "train.csv", ds.X, ds.params.train)
    _write_matrix_csv(out / "test.csv", ds.X_test, ds.params.test)
    sidecar = {
        "format": "rrae-dataset/1",
        "family": ds.family,
        "t": ds.t.tolist(),
        "bounds": [list(b) for b in ds.params.bounds],
        "train_counts": list(ds.params.train_counts),
        "seeds": list(ds.params.seeds),
        "normalization": {
            "mean": ds.norm.mean.ravel().tolist(),
            "std": ds.norm.std.ravel().tolist(),
            "eps_std": ds.norm.eps_std,
        },
        "meta": ds.meta,
    }
    with open(out / "dataset.json", "w") as fh:
        json.dump(sidecar, fh, indent=1)
    return [out / "train.csv", out / "test.csv", out / "dataset.json"]


def load_dataset(in_dir):
    d = Path(in_dir)
    with open(d / "dataset.json") as fh:
        side = json.load(fh)
    if side.get("format") != "rrae-dataset/1":
        raise ValueError(f"unsupported dataset format {side.get('format')!r}")
    X, ptrain = _read_matrix_csv(d / "train.csv")
    X_test, ptest = _read_matrix_csv(d / "test.csv")
    ps = ParamSet([tuple(b) for b in side["bounds"]], ptrain, ptest,
                  side["train_counts"], side["seeds"])
    nm = side["normalization"]
    norm = Normalization(np.array(nm["mean"])[:, None], np.array(nm["std"])[:, None], nm["eps_std"])
    return Dataset(side["family"], np.array(side["t"]), X, X_test, ps, norm, side.get("meta", {}))


IDX_TYPES = {
    0x08: np.dtype(np.uint8),
    0x09: np.dtype(np.int8),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def read_idx(path):
    """Parse an IDX file (optionally gzipped) into an ndarray of its stored shape."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError("not an IDX file: bad magic")
    dtype = IDX_TYPES.get(raw[2])
    if dtype is None:
        raise ValueError(f"unknown IDX element type 0x{raw[2]:02x}")
    ndim = raw[3]
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    count = int(np.prod(dims)) if dims else 1
    body = raw[4 + 4 * ndim:]
    if len(body) != count * dtype.itemsize:
        raise ValueError(f"IDX payload holds {len(body)} bytes, expected {count * dtype.itemsize}")
    return np.frombuffer(body, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array):
    a = np.asarray(array)
    code = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09}.get(a.dtype)
    if code is None:
        raise ValueError("write_idx supports uint8/int8 arrays only")
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, code, a.ndim]))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def images_dataset(path, limit=None):
    """Load an IDX image file (magic 0x00000803) as a (pixels, n_images) float matrix in [0, 1]."""
    imgs = read_idx(path)
    if imgs.ndim != 3:
        raise ValueError(f"expected a 3-D image tensor, got {imgs.ndim}-D")
    if limit is not None:
        imgs = imgs[:limit]
    return imgs.reshape(imgs.shape[0], -1).T.astype(np.float64) / 255.0
