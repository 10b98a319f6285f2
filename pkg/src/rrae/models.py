"""Autoencoder variants sharing one MLP encoder/decoder core.

Variants:

* ``vanilla``      plain autoencoder, any latent length
* ``diabolo``      bottleneck autoencoder whose latent length is the parameter count
* ``rrae_strong``  decoder sees the rank-``k_max`` truncated SVD of the batch latent
* ``rrae_weak``    extra penalty ||Y - U A|| with trainable U (unit columns) and A
* ``irmae``        ``l`` square bias-free linear layers after the encoder
* ``lorae``        one such layer plus a nuclear-norm penalty on its output
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .nn import MlpSpec, init_mlp, mlp_forward

VARIANTS = ("vanilla", "diabolo", "rrae_strong", "rrae_weak", "irmae", "lorae")
CHECKPOINT_FORMAT = "rrae-checkpoint/1"


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    input_dim: int
    latent_dim: int
    k_max: int | None = None
    inner_layers: int = 0
    nuclear_weight: float = 0.001
    inner_bias: bool = False
    width: int = 64
    encoder_depth: int = 1
    decoder_depth: int = 6
    activation: str = "softplus"
    param_count: int | None = None  # intrinsic parameter dimension, checked for diabolo

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.variant in ("rrae_strong", "rrae_weak"):
            if self.k_max is None or not 1 <= self.k_max <= self.latent_dim:
                raise ConfigurationError(
                    f"{self.variant} needs 1 <= k_max <= latent_dim, got k_max={self.k_max}")
        if self.variant == "irmae" and self.inner_layers < 1:
            raise ConfigurationError("irmae needs at least one inner linear layer")
        if self.variant == "lorae" and not self.nuclear_weight > 0:
            raise ConfigurationError("lorae needs a positive nuclear-norm weight")
        if (self.variant == "diabolo" and self.param_count is not None
                and self.latent_dim != self.param_count):
            raise ConfigurationError(
                f"diabolo latent_dim ({self.latent_dim}) must equal the parameter count "
                f"({self.param_count})")

    @property
    def encoder(self):
        return MlpSpec(self.input_dim, self.latent_dim, self.width, self.encoder_depth, self.activation)

    @property
    def decoder(self):
        return MlpSpec(self.latent_dim, self.input_dim, self.width, self.decoder_depth, self.activation)

    @property
    def n_inner(self):
        if self.variant == "irmae":
            return self.inner_layers
        if self.variant == "lorae":
            return 1
        return 0


@dataclass
class ModelState:
    spec: ModelSpec
    params: dict  # name -> ndarray
    meta: dict = field(default_factory=dict)

    def copy(self):
        return ModelState(self.spec, {k: v.copy() for k, v in self.params.items()}, dict(self.meta))


@dataclass
class LatentFactorization:
    U: np.ndarray  # (L, k)
    A: np.ndarray  # (k, D)
    sigma: np.ndarray | None
    source: str  # trained_weak | svd_strong | identity
    residual: float  # ||Y - U A||_F / ||Y||_F


def init_state(spec, seed, n_samples=None):
    """Fresh parameters; the weak variant also needs the dataset size for A."""
    params = {}
    for prefix, mlp, offset in (("enc", spec.encoder, 0), ("dec", spec.decoder, 1)):
        for i, (W, b) in enumerate(init_mlp(mlp, seed * 7919 + offset)):
            params[f"{prefix}.W{i}"] = W
            params[f"{prefix}.b{i}"] = b
    rng = np.random.Generator(np.random.Philox(seed * 7919 + 2))
    L = spec.latent_dim
    for i in range(spec.n_inner):
        bound = np.sqrt(1.0 / L)
        params[f"inner.W{i}"] = rng.uniform(-bound, bound, size=(L, L))
        if spec.inner_bias:
            params[f"inner.b{i}"] = rng.uniform(-bound, bound, size=(L, 1))
    if spec.variant == "rrae_weak":
        if n_samples is None:
            raise ConfigurationError("rrae_weak needs the dataset size to allocate A")
        U = rng.normal(size=(L, spec.k_max))
        params["U"] = U / np.linalg.norm(U, axis=0, keepdims=True)
        params["A"] = np.zeros((spec.k_max, n_samples))
    return ModelState(spec, params)


def init_weak_from_latent(state, X):
    """Start U, A at the rank-k truncated SVD of the current latent of X.

    The penalty then starts near zero instead of pulling Y towards U @ 0.
    """
    Y = encode(state, X).value
    res = ad.svd(Y)
    k = state.spec.k_max
    state.params["U"] = res.U[:, :k].copy()
    state.params["A"] = res.sigma[:k, None] * res.Vt[:k]
    return state


def as_nodes(state):
    return {k: ad.Node(v) for k, v in state.params.items()}


def _mlp_params(nodes, prefix, n_layers):
    return [(nodes[f"{prefix}.W{i}"], nodes[f"{prefix}.b{i}"]) for i in range(n_layers)]


def inner_layers(state, Y, nodes):
    for i in range(state.spec.n_inner):
        Y = ad.matmul(nodes[f"inner.W{i}"], Y)
        if f"inner.b{i}" in nodes:
            Y = ad.add(Y, nodes[f"inner.b{i}"])
    return Y


def encode(state, X, nodes=None):
    """Latent matrix (L x bs) for the columns of X (already normalised)."""
    nodes = nodes if nodes is not None else as_nodes(state)
    spec = state.spec
    X = ad.constant(X)
    if X.rows != spec.input_dim:
        raise ad.DimensionError(f"model expects {spec.input_dim} rows, got {X.shape}")
    enc = spec.encoder
    Y = mlp_forward(enc, _mlp_params(nodes, "enc", len(enc.layer_shapes())), X)
    return inner_layers(state, Y, nodes)


def decoder_input(state, Y):
    spec = state.spec
    if spec.variant != "rrae_strong":
        return Y
    Y = ad.constant(Y)
    if spec.k_max > min(Y.shape):
        raise ConfigurationError(
            f"k_max={spec.k_max} exceeds min(L, batch size) = {min(Y.shape)}; "
            "use a larger batch")
    return ad.truncated_reconstruct(Y, spec.k_max)


def decode(state, Z, nodes=None):
    nodes = nodes if nodes is not None else as_nodes(state)
    dec = state.spec.decoder
    return mlp_forward(dec, _mlp_params(nodes, "dec", len(dec.layer_shapes())), Z)


def forward(state, X, nodes=None):
    """(latent, decoder input, reconstruction), all in normalised units."""
    nodes = nodes if nodes is not None else as_nodes(state)
    Y = encode(state, X, nodes)
    Z = decoder_input(state, Y)
    return Y, Z, decode(state, Z, nodes)


def loss(state, X, batch_indices=None, nodes=None):
    """Total training loss plus a dict with per-term nodes and the latents.

    Every term is a raw Frobenius norm; the total divides their weighted
    sum by the batch size.
    """
    nodes = nodes if nodes is not None else as_nodes(state)
    spec = state.spec
    X = ad.constant(X)
    Y, Z, Xr = forward(state, X, nodes)
    terms = {"reconstruction": ad.frobenius_norm(ad.sub(X, Xr))}
    if spec.variant == "rrae_weak":
        if batch_indices is None:
            raise ValueError("rrae_weak loss needs the dataset indices of the batch")
        A_b = batch_columns_weak(nodes["A"], batch_indices)
        terms["factorization"] = ad.frobenius_norm(ad.sub(Y, ad.matmul(nodes["U"], A_b)))
    elif spec.variant == "lorae":
        terms["nuclear"] = ad.scale(ad.nuclear_norm(Y), spec.nuclear_weight)
    total = terms["reconstruction"]
    for name, node in terms.items():
        if name != "reconstruction":
            total = ad.add(total, node)
    return ad.scale(total, 1.0 / X.cols), {"terms": terms, "latent": Y, "decoder_input": Z}


def batch_columns_weak(A, batch_indices):
    A = ad.constant(A)
    idx = np.asarray(batch_indices).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= A.cols):
        raise ad.ParameterError(
            f"batch indices must lie in [0, {A.cols}), got range [{idx.min()}, {idx.max()}]")
    return ad.column_slice(A, idx)


def nuclear_norm(a):
    return ad.nuclear_norm(a)


def factorize_latent(state, Y):
    """Basis and coefficients of a full latent matrix Y (L x D)."""
    spec = state.spec
    Y = np.asarray(Y)
    ynorm = np.linalg.norm(Y)
    if spec.variant == "rrae_strong":
        res = ad.svd(Y)
        k = spec.k_max
        U = res.U[:, :k]
        A = res.sigma[:k, None] * res.Vt[:k]
        fac = LatentFactorization(U, A, res.sigma[:k].copy(), "svd_strong", 0.0)
    elif spec.variant == "rrae_weak":
        fac = LatentFactorization(state.params["U"].copy(), state.params["A"].copy(), None,
                                  "trained_weak", 0.0)
    else:
        fac = LatentFactorization(np.eye(Y.shape[0]), Y.copy(), None, "identity", 0.0)
    fac.residual = float(np.linalg.norm(Y - fac.U @ fac.A) / ynorm) if ynorm > 0 else 0.0
    return fac


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state, norm=None, factorization=None):
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": __version__,
        "spec": asdict(state.spec),
        "meta": state.meta,
        "factorization": None,
    }
    arrays = {f"param/{k}": v for k, v in state.params.items()}
    if norm is not None:
        arrays["norm/mean"] = norm.mean
        arrays["norm/std"] = norm.std
        meta["eps_std"] = norm.eps_std
    if factorization is not None:
        arrays["fac/U"] = factorization.U
        arrays["fac/A"] = factorization.A
        if factorization.sigma is not None:
            arrays["fac/sigma"] = factorization.sigma
        meta["factorization"] = {"source": factorization.source, "residual": factorization.residual}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


class VersionMismatchError(ValueError):
    pass


def load_checkpoint(path):
    """Return (state, normalization or None, factorization or None)."""
    from .data import Normalization

    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise VersionMismatchError(
                f"checkpoint format {meta.get('format')!r} != expected {CHECKPOINT_FORMAT!r}")
        if meta.get("version") != __version__:
            raise VersionMismatchError(
                f"checkpoint written by version {meta.get('version')}, this is {__version__}")
        params = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
        norm = None
        if "norm/mean" in z.files:
            norm = Normalization(z["norm/mean"].copy(), z["norm/std"].copy(), meta["eps_std"])
        fac = None
        if meta["factorization"] is not None:
            fac = LatentFactorization(
                z["fac/U"].copy(), z["fac/A"].copy(),
                z["fac/sigma"].copy() if "fac/sigma" in z.files else None,
                meta["factorization"]["source"], meta["factorization"]["residual"])
    state = ModelState(ModelSpec(**meta["spec"]), params, meta["meta"])
    return state, norm, fac
