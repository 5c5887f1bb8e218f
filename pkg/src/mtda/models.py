"""Three-head adversarial model and its loss variants.

The feature extractor F (two 3x3 conv/relu/avg-pool blocks, global average
pooling, dense to a 64-d feature z) feeds a scene classifier C (dense,
softmax) and a domain discriminator D (dense 64->32, relu, dense 32->out)
through a gradient-reversal node. The discriminator head depends on the
mode:

- ``dann``    binary source/target, squared-error loss on softmax output
              (all targets collapsed to one domain label);
- ``mtda-c1`` plain multi-class domain cross-entropy over M domains;
- ``mtda-c2`` domain cross-entropy weighted per sample by (u+1)/T, so
              harder-to-adapt domains (larger index u) receive larger
              discriminator gradients;
- ``mtda-r``  scalar regression of the domain index with squared error.

F's update direction is the classification loss minus lambda_d times the
domain loss; the reversal node realizes the sign flip in one backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from mtda import autodiff as ad
from mtda import checkpoint
from mtda.errors import ContractError, ShapeError

FEATURE_DIM = 64
DISC_HIDDEN = 32
DEFAULT_T = 10.0


class Mode(str, Enum):
    DANN = "dann"
    MTDA_C1 = "mtda-c1"
    MTDA_C2 = "mtda-c2"
    MTDA_R = "mtda-r"


def head_width(mode: Mode, n_domains: int) -> int:
    if mode is Mode.DANN:
        return 2
    if mode is Mode.MTDA_R:
        return 1
    return n_domains


@dataclass
class ModelConfig:
    n_classes: int
    n_domains: int
    mode: Mode
    in_channels: int = 1
    conv_channels: tuple = (4, 8)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.n_classes < 2 or self.n_domains < 2:
            raise ContractError("need at least 2 classes and 2 domains")


class AdversarialModel:
    """Parameter store plus mode tag; construction fixes the D head width."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        expected = head_width(config.mode, config.n_domains)
        if params["d/w2"].shape[1] != expected:
            raise ContractError(
                f"discriminator width {params['d/w2'].shape[1]} inconsistent with mode "
                f"{config.mode.value} (expected {expected})"
            )
        for name, arr in params.items():
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"non-finite parameter {name}")

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int, dtype=np.float32) -> "AdversarialModel":
        rng = np.random.default_rng(seed)
        c1, c2 = config.conv_channels
        out = head_width(config.mode, config.n_domains)

        def glorot(*shape):
            fan_in = int(np.prod(shape[1:])) if len(shape) > 2 else shape[0]
            fan_out = shape[0] if len(shape) > 2 else shape[1]
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            return rng.normal(scale=scale, size=shape).astype(dtype)

        params = {
            "f/conv1": glorot(c1, config.in_channels, 3, 3),
            "f/conv2": glorot(c2, c1, 3, 3),
            "f/w": glorot(c2, FEATURE_DIM),
            "f/b": np.zeros(FEATURE_DIM, dtype=dtype),
            "c/w": glorot(FEATURE_DIM, config.n_classes),
            "c/b": np.zeros(config.n_classes, dtype=dtype),
            "d/w1": glorot(FEATURE_DIM, DISC_HIDDEN),
            "d/b1": np.zeros(DISC_HIDDEN, dtype=dtype),
            "d/w2": glorot(DISC_HIDDEN, out),
            "d/b2": np.zeros(out, dtype=dtype),
        }
        return cls(config, params)

    def save(self, path):
        meta = np.array(
            [
                list(Mode).index(self.config.mode),
                self.config.n_classes,
                self.config.n_domains,
                self.config.in_channels,
                *self.config.conv_channels,
            ],
            dtype=np.float64,
        )
        checkpoint.save_tensors(path, {"meta/config": meta, **self.params})

    @classmethod
    def load(cls, path) -> "AdversarialModel":
        tensors = checkpoint.load_tensors(path)
        meta = tensors.pop("meta/config")
        config = ModelConfig(
            n_classes=int(meta[1]),
            n_domains=int(meta[2]),
            mode=list(Mode)[int(meta[0])],
            in_channels=int(meta[3]),
            conv_channels=(int(meta[4]), int(meta[5])),
        )
        return cls(config, tensors)


@dataclass
class ForwardPass:
    z: ad.Tensor
    y_logits: ad.Tensor
    y_pred: ad.Tensor
    d_out: ad.Tensor  # logits for classification modes, raw (n,1) for regression
    d_pred: ad.Tensor  # softmax for classification modes, == d_out for regression
    leaves: dict = field(default_factory=dict)  # param name -> leaf Tensor


def forward(model: AdversarialModel, x: np.ndarray, lambda_d: float = 1.0) -> ForwardPass:
    """Build the computation graph for a batch x of shape (n, c, h, w)."""
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[:, None, :, :]
    if x.ndim != 4 or x.shape[1] != model.config.in_channels:
        raise ShapeError("input must be (n, c, h, w) with matching channels", x.shape)
    leaves = {name: ad.Tensor(arr, requires_grad=True, name=name) for name, arr in model.params.items()}

    h = ad.avg_pool2(ad.relu(ad.conv2d(ad.Tensor(x, name="x"), leaves["f/conv1"])))
    h = ad.avg_pool2(ad.relu(ad.conv2d(h, leaves["f/conv2"])))
    z = ad.dense(ad.global_avg_pool(h), leaves["f/w"], leaves["f/b"])

    y_logits = ad.dense(z, leaves["c/w"], leaves["c/b"])
    y_pred = ad.softmax(y_logits)

    rev = ad.gradient_reversal(z, lambda_d)
    d_hidden = ad.relu(ad.dense(rev, leaves["d/w1"], leaves["d/b1"]))
    d_out = ad.dense(d_hidden, leaves["d/w2"], leaves["d/b2"])
    d_pred = d_out if model.config.mode is Mode.MTDA_R else ad.softmax(d_out)
    return ForwardPass(z=z, y_logits=y_logits, y_pred=y_pred, d_out=d_out, d_pred=d_pred, leaves=leaves)


# ---------------------------------------------------------------------------
# losses


def scene_loss(y_logits: ad.Tensor, y_onehot: np.ndarray, mask_source: np.ndarray) -> ad.Tensor:
    """Mean cross-entropy over labeled (source) rows; unlabeled rows contribute 0."""
    mask = np.asarray(mask_source, dtype=bool)
    n_labeled = int(mask.sum())
    if n_labeled == 0:
        raise ContractError("batch has no source rows")
    # Weight-0 rows contribute neither loss nor gradient, so unlabeled rows
    # just need any valid one-hot placeholder.
    y = np.array(y_onehot, dtype=np.float64)
    y[~mask] = 0.0
    y[~mask, 0] = 1.0
    weights = mask.astype(np.float64) / n_labeled
    return ad.softmax_cross_entropy(y_logits, y, weights)


def dann_domain_loss(d_pred: ad.Tensor, d_binary: np.ndarray) -> ad.Tensor:
    """Squared-error domain loss against the 2-class one-hots (source=[0,1])."""
    d_binary = np.asarray(d_binary, dtype=np.float64)
    if d_binary.ndim != 2 or d_binary.shape[1] != 2 or d_pred.shape != d_binary.shape:
        raise ShapeError("binary domain labels must be (n, 2)", d_pred.shape, d_binary.shape)
    return ad.mse_loss(d_pred, d_binary)


def weighted_domain_ce(d_logits: ad.Tensor, d_onehot: np.ndarray, u: np.ndarray, t: float = DEFAULT_T) -> ad.Tensor:
    """Domain CE with per-sample weight (u+1)/T, mean-reduced over the batch."""
    u = np.asarray(u)
    if np.any(u < 0) or not np.issubdtype(u.dtype, np.integer):
        raise ContractError("domain indices must be non-negative integers")
    if t <= 0:
        raise ContractError("T must be positive")
    n = d_logits.shape[0]
    weights = (u + 1.0) / t / n
    return ad.softmax_cross_entropy(d_logits, np.asarray(d_onehot, dtype=np.float64), weights)


def plain_domain_ce(d_logits: ad.Tensor, d_onehot: np.ndarray) -> ad.Tensor:
    n = d_logits.shape[0]
    return ad.softmax_cross_entropy(d_logits, np.asarray(d_onehot, dtype=np.float64), np.full(n, 1.0 / n))


def regression_domain_loss(d_raw: ad.Tensor, u: np.ndarray) -> ad.Tensor:
    """Mean squared error of the scalar head against real-valued indices."""
    u = np.asarray(u, dtype=np.float64).reshape(-1, 1)
    if d_raw.shape != u.shape:
        raise ShapeError("regression head must be (n, 1)", d_raw.shape, u.shape)
    return ad.mse_loss(d_raw, u)


def feature_objective(l_y: ad.Tensor, l_d: ad.Tensor, lambda_d: float) -> ad.Tensor:
    """L_y - lambda_d * L_d; in training this is realized by the reversal node."""
    if lambda_d < 0:
        raise ContractError("lambda_d must be >= 0")
    return l_y - lambda_d * l_d


def domain_loss_for_mode(
    mode: Mode, fwd: ForwardPass, batch, t: float = DEFAULT_T, normalize_index: bool = False
) -> ad.Tensor:
    """Dispatch the mode's discriminator loss for a Batch.

    `normalize_index` rescales MTDA-R regression targets to [0, 1]; it keeps
    the regression gradient magnitude comparable to the CE variants so one
    lambda_d works across modes. Off by default: the index is regressed raw.
    """
    if mode is Mode.DANN:
        return dann_domain_loss(fwd.d_pred, batch.d_binary)
    if mode is Mode.MTDA_C1:
        return plain_domain_ce(fwd.d_out, batch.d_onehot)
    if mode is Mode.MTDA_C2:
        return weighted_domain_ce(fwd.d_out, batch.d_onehot, batch.u, t=t)
    targets = batch.u.astype(np.float64)
    if normalize_index:
        targets = targets / max(batch.d_onehot.shape[1] - 1, 1)
    return regression_domain_loss(fwd.d_out, targets)


@dataclass
class Batch:
    """One training minibatch. `y_onehot` rows are meaningful only where
    `source_mask` is set; `u` follows the domain index table (source = 0)."""

    x: np.ndarray
    y_onehot: np.ndarray
    d_onehot: np.ndarray
    u: np.ndarray
    source_mask: np.ndarray

    def __post_init__(self):
        if not np.array_equal(self.source_mask, self.u == 0):
            raise ContractError("source mask must match u == 0")

    @property
    def d_binary(self):
        # DANN collapses all targets to one label: source=[0,1], target=[1,0]
        out = np.zeros((len(self.u), 2))
        out[self.source_mask, 1] = 1.0
        out[~self.source_mask, 0] = 1.0
        return out


def conditional_mean_oracle(samples) -> dict:
    """Empirical conditional mean of d per discrete z value.

    The squared-error-optimal constant predictor per z; MSE-trained
    discriminators must converge to this table.
    """
    sums: dict = {}
    counts: dict = {}
    for z, d in samples:
        d = np.asarray(d, dtype=np.float64)
        if z in sums:
            sums[z] = sums[z] + d
            counts[z] += 1
        else:
            sums[z] = d.copy()
            counts[z] = 1
    return {z: sums[z] / counts[z] for z in sums}
