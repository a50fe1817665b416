"""Small dense encoder, P x K batch sampling and the momentum training loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import DegenerateCatalog, DivergedTraining, ShapeMismatch
from .metric import LOSSES, EmbeddingBatch, TripletConfig

NONLINEARITIES = ("rectifier", "tanh")


@dataclass(frozen=True)
class EncoderSpec:
    input_dim: int
    hidden_dims: Tuple[int, ...] = ()
    embed_dim: int = 128
    nonlinearity: str = "rectifier"
    normalize_output: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if min((self.input_dim, self.embed_dim) + self.hidden_dims) < 1:
            raise ValueError("all layer dimensions must be positive")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def layer_dims(self) -> Tuple[int, ...]:
        return (self.input_dim,) + self.hidden_dims + (self.embed_dim,)


@dataclass
class EncoderParams:
    spec: EncoderSpec
    weights: List[np.ndarray]  # each fan_in x fan_out
    biases: List[np.ndarray]

    def __post_init__(self):
        dims = self.spec.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeMismatch("layer count does not match the encoder spec")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ShapeMismatch(f"layer {i} has shapes {W.shape}, {b.shape}")

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.spec, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> List[np.ndarray]:
        """Parameters in file order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(spec: EncoderSpec, rng: np.random.Generator) -> EncoderParams:
    """Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)); zero biases."""
    dims = spec.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(spec, weights, biases)


def _activate(kind, z):
    return np.maximum(z, 0.0) if kind == "rectifier" else np.tanh(z)


def encoder_forward(params: EncoderParams, features, return_cache: bool = False):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.spec.input_dim:
        raise ShapeMismatch(f"features must be n x {params.spec.input_dim}, got {X.shape}")
    inputs, pre = [], []
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ W + b
        pre.append(z)
        h = z if i == last else _activate(params.spec.nonlinearity, z)
    norms = None
    if params.spec.normalize_output:
        norms = np.linalg.norm(h, axis=1, keepdims=True)
        h = np.divide(h, norms, out=np.zeros_like(h), where=norms > 0)
    if return_cache:
        return h, (inputs, pre, h, norms)
    return h


def encoder_backward(params: EncoderParams, features, upstream_grad, cache=None) -> EncoderParams:
    """Reverse-mode gradient of ``sum(upstream_grad * encoder_forward(features))``.

    The result reuses :class:`EncoderParams` as a container for the
    per-layer weight and bias gradients.
    """
    if cache is None:
        _, cache = encoder_forward(params, features, return_cache=True)
    inputs, pre, out, norms = cache
    G = np.asarray(upstream_grad, dtype=np.float64)
    if G.shape != out.shape:
        raise ShapeMismatch(f"upstream gradient must be {out.shape}, got {G.shape}")
    if norms is not None:
        G = (G - out * np.sum(out * G, axis=1, keepdims=True))
        G = np.divide(G, norms, out=np.zeros_like(G), where=norms > 0)
    n_layers = len(params.weights)
    gW: List[Optional[np.ndarray]] = [None] * n_layers
    gb: List[Optional[np.ndarray]] = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        gW[i] = inputs[i].T @ G
        gb[i] = G.sum(axis=0)
        if i:
            G = G @ params.weights[i].T
            z = pre[i - 1]
            if params.spec.nonlinearity == "rectifier":
                G = G * (z > 0)
            else:
                G = G * (1.0 - np.tanh(z) ** 2)
    return EncoderParams(params.spec, gW, gb)


@dataclass
class CatalogView:
    """Feature rows with their work labels, grouped by work for batch sampling."""

    features: np.ndarray
    labels: np.ndarray
    groups: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeMismatch("one label per feature row required")
        groups = {}
        for i, lab in enumerate(self.labels.tolist()):
            groups.setdefault(lab, []).append(i)
        self.groups = {k: np.array(v) for k, v in groups.items()}

    @classmethod
    def from_catalog(cls, catalog, features) -> "CatalogView":
        return cls(features, np.array(catalog.work_ids))


def sample_batch(view: CatalogView, P: int, K: int, rng: np.random.Generator):
    """Draw P distinct classes uniformly among those with >= K samples, then K samples each."""
    eligible = [k for k, idx in view.groups.items() if idx.size >= K]
    if len(eligible) < P:
        raise DegenerateCatalog(f"only {len(eligible)} classes have >= {K} samples, need {P}")
    chosen = rng.choice(len(eligible), size=P, replace=False)
    rows = np.concatenate([rng.choice(view.groups[eligible[c]], size=K, replace=False) for c in chosen])
    return view.features[rows], view.labels[rows]


@dataclass(frozen=True)
class TrainConfig:
    batch_classes: int = 12
    samples_per_class: int = 3
    steps: int = 1000
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    loss_kind: str = "prototypical"
    triplet: TripletConfig = TripletConfig()

    def __post_init__(self):
        if self.loss_kind not in LOSSES:
            raise ValueError(f"unknown loss {self.loss_kind!r}")
        if self.batch_classes < 2:
            raise ValueError("batch_classes must be >= 2")
        min_k = 2 if self.loss_kind == "standard" else 1
        if self.samples_per_class < min_k:
            raise ValueError(f"{self.loss_kind} loss needs samples_per_class >= {min_k}")
        if self.steps < 0 or self.learning_rate < 0 or not 0 <= self.momentum < 1:
            raise ValueError("invalid steps, learning_rate or momentum")


@dataclass
class TrainingLog:
    steps: List[int] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    active: List[int] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("step,loss,active_count\n")
            for s, l, a in zip(self.steps, self.losses, self.active):
                f.write(f"{s},{l!r},{a}\n")


def train(view: CatalogView, spec: EncoderSpec, cfg: TrainConfig) -> Tuple[EncoderParams, TrainingLog]:
    rng = np.random.default_rng(cfg.seed)
    params = init_params(spec, rng)
    log = TrainingLog()
    loss_fn = LOSSES[cfg.loss_kind]
    velocity = [np.zeros_like(a) for a in params.arrays()]
    for step in range(cfg.steps):
        X, y = sample_batch(view, cfg.batch_classes, cfg.samples_per_class, rng)
        emb, cache = encoder_forward(params, X, return_cache=True)
        if not np.all(np.isfinite(emb)):
            raise DivergedTraining(step)
        res = loss_fn(EmbeddingBatch(emb, y), cfg.triplet)
        if not np.isfinite(res.loss):
            raise DivergedTraining(step)
        log.steps.append(step)
        log.losses.append(res.loss)
        log.active.append(res.active_count)
        if res.active_count == 0:
            grads = None
        else:
            grads = encoder_backward(params, X, res.grad, cache).arrays()
        for v, p, g in zip(velocity, params.arrays(), grads or [None] * len(velocity)):
            v *= cfg.momentum
            if g is not None:
                v -= cfg.learning_rate * g
            p += v
        if not params.all_finite():
            raise DivergedTraining(step)
    return params, log
