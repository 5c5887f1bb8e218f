"""Config-driven adversarial training, evaluation, sweeps, and exports.

Batches are half labeled source rows, half target rows drawn uniformly over
target domains, so every domain appears in expectation each step. One Adam
instance updates F, C and D jointly; the reversal node inside the model
carries -lambda_d into F. Model selection uses held-out *source* accuracy
(target labels are unavailable by the problem setting). Everything is
deterministic given (config, seed, data bytes).
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from mtda import autodiff as ad
from mtda import checkpoint
from mtda.errors import ContractError, NumericError
from mtda.geometry import (
    DomainIndexTable,
    assign_indices,
    domain_distance,
    pairs_from_embedding,
)
from mtda.models import (
    AdversarialModel,
    Batch,
    Mode,
    ModelConfig,
    domain_loss_for_mode,
    forward,
    scene_loss,
)
from mtda.tsne import TsneConfig, run_tsne

LAMBDA_GRID = (0.2, 0.5, 1.0, 2.0, 5.0, 8.0, 10.0)


@dataclass
class TrainConfig:
    mode: str = "mtda-c2"
    lambda_d: float = 1.0
    t: float = 10.0
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    source_fraction: float = 0.5
    holdout_fraction: float = 0.2
    lambda_grid: tuple = LAMBDA_GRID
    conv_channels: tuple = (4, 8)
    device_groups: dict = field(default_factory=dict)  # e.g. {"B&C": ["B", "C"]}
    normalize_index: bool = False  # rescale mtda-r regression targets to [0, 1]
    precision: str = "f32"  # f32 for training, f64 for gradient tests

    def __post_init__(self):
        Mode(self.mode)
        if self.lambda_d < 0:
            raise ContractError("lambda_d must be >= 0")
        n_src = int(round(self.batch_size * self.source_fraction))
        if n_src < 1 or n_src >= self.batch_size:
            raise ContractError("source fraction leaves an empty source or target half")

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    @classmethod
    def from_json(cls, path, overrides=None) -> "TrainConfig":
        payload = json.loads(Path(path).read_text())
        return cls.from_dict(payload, overrides)

    @classmethod
    def from_dict(cls, payload: dict, overrides=None) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**{
            k: tuple(v) if k in ("lambda_grid", "conv_channels") else v
            for k, v in payload.items()
        })
        for key, value in (overrides or {}).items():
            if key not in known:
                raise ContractError(f"unknown override key: {key}")
            current = getattr(cfg, key)
            if isinstance(current, bool):
                value = value in ("1", "true", "True")
            elif isinstance(current, int):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            elif isinstance(current, tuple):
                value = tuple(float(v) for v in str(value).split(","))
            cfg = replace(cfg, **{key: value})
        return cfg


@dataclass
class ExperimentReport:
    per_device: dict
    groups: dict
    config: dict
    seed: int
    index_table: dict
    wall_time_s: float = 0.0
    loss_curve: list = field(default_factory=list)  # (step, l_y, l_d, l_total)

    def to_json(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


class Adam:
    def __init__(self, params: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            if g is None:
                continue
            g = g.astype(self.params[k].dtype, copy=False)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1**self.t)
            v_hat = self.v[k] / (1 - b2**self.t)
            self.params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# data access


@dataclass
class LoadedDataset:
    rows: list
    features: np.ndarray  # aligned with rows, (n, h, w)
    classes: list
    devices: list
    source_device: str

    def class_onehot(self, scene):
        return np.eye(len(self.classes))[self.classes.index(scene)]


def load_dataset(rows) -> LoadedDataset:
    rows = [r for r in rows if r.feature_path]
    if not rows:
        raise ContractError("manifest has no rows with extracted features")
    feats = [checkpoint.load_tensors(r.feature_path)["features"] for r in rows]
    shapes = {f.shape for f in feats}
    if len(shapes) != 1:
        raise ContractError(f"inconsistent feature shapes: {sorted(shapes)}")
    classes = sorted({r.scene for r in rows if r.scene})
    source_device = _source_device(rows)
    devices = sorted({r.device for r in rows})
    return LoadedDataset(
        rows=rows,
        features=np.stack(feats),
        classes=classes,
        devices=devices,
        source_device=source_device,
    )


def _source_device(rows):
    labeled_train = {r.device for r in rows if r.split == "train" and r.scene}
    if len(labeled_train) != 1:
        raise ContractError(f"expected exactly one labeled source device, got {sorted(labeled_train)}")
    return labeled_train.pop()


# ---------------------------------------------------------------------------
# domain indexing pipeline


def compute_index_table(rows, seed=0, tsne_iters=500, max_rows_per_device=200) -> DomainIndexTable:
    """Joint t-SNE over time-averaged features, mean parallel-pair distances,
    then rank-based indices. Recomputed per experiment (the embedding is
    stochastic); persist the result next to the run for reproducibility."""
    data = load_dataset([r for r in rows if r.split == "train"])
    rng = np.random.default_rng(seed)
    keep = []
    for device in data.devices:
        idx = [i for i, r in enumerate(data.rows) if r.device == device]
        # parallel rows must survive subsampling; they carry the signal
        parallel = [i for i in idx if data.rows[i].parallel_group]
        rest = [i for i in idx if not data.rows[i].parallel_group]
        budget = max(0, max_rows_per_device - len(parallel))
        if len(rest) > budget:
            rest = list(rng.choice(rest, size=budget, replace=False))
        keep.extend(parallel + rest)
    keep = sorted(keep)
    rows_kept = [data.rows[i] for i in keep]
    vectors = data.features[keep].mean(axis=1)  # time-average to 64-d

    # Large perplexity + mild exaggeration keep inter-cluster distances more
    # faithful, which is what the pair distances measure.
    emb = run_tsne(
        vectors,
        TsneConfig(iters=tsne_iters, seed=seed, perplexity=min(30.0, len(vectors) / 2.0), exaggeration=4.0),
    )
    distances = {}
    for device in data.devices:
        if device == data.source_device:
            continue
        pairs = pairs_from_embedding(emb.points, rows_kept, device, data.source_device)
        if not pairs:
            raise ContractError(f"device {device} has no parallel data")
        distances[device] = domain_distance(pairs)
    return assign_indices(distances, source_device=data.source_device)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: AdversarialModel
    report: ExperimentReport
    best_holdout_accuracy: float


def _make_batch(data, config, index_table, src_idx, tgt_by_device, rng, n_domains):
    n_src = int(round(config.batch_size * config.source_fraction))
    n_tgt = config.batch_size - n_src
    chosen_src = rng.choice(src_idx, size=n_src, replace=len(src_idx) < n_src)
    target_devices = sorted(tgt_by_device)
    chosen_tgt = []
    for _ in range(n_tgt):
        dev = target_devices[rng.integers(len(target_devices))]
        pool = tgt_by_device[dev]
        chosen_tgt.append(pool[rng.integers(len(pool))])
    idx = np.concatenate([chosen_src, np.asarray(chosen_tgt, dtype=int)])
    u = np.array([index_table[data.rows[i].device].index for i in idx])
    y = np.zeros((len(idx), len(data.classes)))
    for pos, i in enumerate(idx):
        scene = data.rows[i].scene
        if u[pos] == 0 and scene:
            y[pos] = data.class_onehot(scene)
        else:
            y[pos, 0] = 1.0  # placeholder; masked out of the scene loss
    return Batch(
        x=data.features[idx].astype(config.dtype),
        y_onehot=y,
        d_onehot=np.eye(n_domains)[u],
        u=u,
        source_mask=u == 0,
    )


def train(config: TrainConfig, rows, index_table: DomainIndexTable, log_path=None) -> TrainResult:
    start = time.monotonic()
    mode = Mode(config.mode)
    data = load_dataset([r for r in rows if r.split == "train"])
    missing = set(data.devices) - set(index_table)
    if missing:
        raise ContractError(f"index table missing devices: {sorted(missing)}")
    n_domains = len(data.devices)

    src_all = [i for i, r in enumerate(data.rows) if r.device == data.source_device]
    tgt_by_device = {}
    for i, r in enumerate(data.rows):
        if r.device != data.source_device:
            tgt_by_device.setdefault(r.device, []).append(i)
    if not src_all or not tgt_by_device:
        raise ContractError("need at least one source row and one target domain")

    rng = np.random.default_rng(config.seed)
    src_all = np.array(src_all)
    rng.shuffle(src_all)
    n_holdout = max(1, int(round(config.holdout_fraction * len(src_all))))
    holdout_idx, src_train = src_all[:n_holdout], src_all[n_holdout:]
    if len(src_train) == 0:
        raise ContractError("no source rows left after holdout split")

    model = AdversarialModel.initialize(
        ModelConfig(
            n_classes=len(data.classes),
            n_domains=n_domains,
            mode=mode,
            conv_channels=tuple(int(c) for c in config.conv_channels),
        ),
        seed=config.seed,
        dtype=config.dtype,
    )
    optimizer = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.eps)

    n_src_per_batch = int(round(config.batch_size * config.source_fraction))
    steps_per_epoch = max(1, len(src_train) // n_src_per_batch)
    curve = []
    best_acc, best_params = -1.0, None
    step = 0
    for _epoch in range(config.epochs):
        for _ in range(steps_per_epoch):
            batch = _make_batch(data, config, index_table, src_train, tgt_by_device, rng, n_domains)
            fwd = forward(model, batch.x, lambda_d=config.lambda_d)
            l_y = scene_loss(fwd.y_logits, batch.y_onehot, batch.source_mask)
            l_d = domain_loss_for_mode(mode, fwd, batch, t=config.t, normalize_index=config.normalize_index)
            total = l_y + l_d
            if not np.isfinite(total.value):
                raise NumericError(f"non-finite loss at step {step}")
            ad.backward(total)
            optimizer.step({k: leaf.grad for k, leaf in fwd.leaves.items()})
            curve.append((step, float(l_y.value), float(l_d.value), float(total.value)))
            step += 1
        acc = _accuracy(model, data, holdout_idx)
        if acc > best_acc:
            best_acc = acc
            best_params = {k: v.copy() for k, v in model.params.items()}

    best_model = AdversarialModel(model.config, best_params)
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "L_y", "L_d", "L_total"])
            writer.writerows(curve)
    report = ExperimentReport(
        per_device={},
        groups={},
        config=asdict(config),
        seed=config.seed,
        index_table={d: {"distance": e.distance, "index": e.index} for d, e in index_table.items()},
        wall_time_s=time.monotonic() - start,
        loss_curve=curve,
    )
    return TrainResult(model=best_model, report=report, best_holdout_accuracy=best_acc)


def _accuracy(model, data, idx):
    if len(idx) == 0:
        return 0.0
    preds = predict(model, data.features[idx].astype(model.params["f/w"].dtype))
    truth = np.array([data.classes.index(data.rows[i].scene) for i in idx])
    return float((preds == truth).mean())


def predict(model, x, batch_size=64):
    out = []
    for lo in range(0, len(x), batch_size):
        fwd = forward(model, x[lo : lo + batch_size], lambda_d=0.0)
        out.append(np.argmax(fwd.y_pred.value, axis=1))
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model: AdversarialModel, rows, device_groups=None, config=None, index_table=None) -> ExperimentReport:
    import warnings

    test_rows = [r for r in rows if r.split == "test" and r.feature_path]
    data = _eval_dataset(test_rows)
    unlabeled = [r.id for r in data.rows if not r.scene]
    if unlabeled:
        raise ContractError(f"test rows missing evaluation labels: {unlabeled[:3]}...")
    preds = predict(model, data.features.astype(model.params["f/w"].dtype))
    truth = np.array([data.classes.index(r.scene) for r in data.rows])
    row_devices = np.array([r.device for r in data.rows])

    per_device = {}
    for device in data.devices:
        sel = row_devices == device
        if not sel.any():
            warnings.warn(f"device {device} has no test rows; omitted", RuntimeWarning)
            continue
        per_device[device] = {
            "accuracy": float((preds[sel] == truth[sel]).mean()),
            "count": int(sel.sum()),
        }
    groups = {}
    for name, members in (device_groups or {}).items():
        counts = [per_device[d]["count"] for d in members if d in per_device]
        accs = [per_device[d]["accuracy"] for d in members if d in per_device]
        if counts:
            groups[name] = float(np.average(accs, weights=counts))
    return ExperimentReport(
        per_device=per_device,
        groups=groups,
        config=asdict(config) if config else {},
        seed=config.seed if config else 0,
        index_table={d: {"distance": e.distance, "index": e.index} for d, e in (index_table or {}).items()},
    )


def _eval_dataset(rows):
    # like load_dataset but without the single-source-device requirement
    rows = [r for r in rows if r.feature_path]
    if not rows:
        raise ContractError("no test rows with features")
    feats = [checkpoint.load_tensors(r.feature_path)["features"] for r in rows]
    classes = sorted({r.scene for r in rows if r.scene})
    return LoadedDataset(
        rows=rows,
        features=np.stack(feats),
        classes=classes,
        devices=sorted({r.device for r in rows}),
        source_device="",
    )


# ---------------------------------------------------------------------------
# embedding export


def export_embeddings(model: AdversarialModel, rows, n_per_device, out_csv, seed=0, tsne_iters=500):
    import warnings

    if n_per_device < 5:
        raise ContractError("n_per_device must be >= 5")
    usable = [r for r in rows if r.feature_path]
    rng = np.random.default_rng(seed)
    chosen = []
    for device in sorted({r.device for r in usable}):
        pool = [r for r in usable if r.device == device]
        if len(pool) < n_per_device:
            warnings.warn(f"device {device}: only {len(pool)} rows available", RuntimeWarning)
            chosen.extend(pool)
        else:
            picks = rng.choice(len(pool), size=n_per_device, replace=False)
            chosen.extend(pool[i] for i in picks)
    feats = np.stack([checkpoint.load_tensors(r.feature_path)["features"] for r in chosen])
    z = []
    dtype = model.params["f/w"].dtype
    for lo in range(0, len(feats), 64):
        z.append(forward(model, feats[lo : lo + 64].astype(dtype), lambda_d=0.0).z.value)
    z = np.concatenate(z)
    emb = run_tsne(z, TsneConfig(iters=tsne_iters, seed=seed))
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "device", "scene", "y0", "y1"])
        for row, point in zip(chosen, emb.points):
            writer.writerow([row.id, row.device, row.scene, f"{point[0]:.6f}", f"{point[1]:.6f}"])
    return emb, chosen


# ---------------------------------------------------------------------------
# lambda sweep


def sweep(config: TrainConfig, rows, index_table, target_group=None):
    """One train+evaluate per grid value; failures are recorded, not fatal.

    Best lambda maximizes mean target-device accuracy (or the named group),
    ties to the smaller lambda.
    """
    results = []
    for lam in config.lambda_grid:
        run_cfg = replace(config, lambda_d=float(lam))
        try:
            outcome = train(run_cfg, rows, index_table)
            report = evaluate(
                outcome.model, rows, device_groups=config.device_groups,
                config=run_cfg, index_table=index_table,
            )
            source_device = _source_device([r for r in rows if r.split == "train" and r.feature_path])
            target_accs = [
                v["accuracy"] for d, v in report.per_device.items() if d != source_device
            ]
            score = (
                report.groups[target_group]
                if target_group
                else float(np.mean(target_accs)) if target_accs else 0.0
            )
            results.append({"lambda_d": float(lam), "score": score, "report": report, "error": None})
        except (ContractError, NumericError) as exc:
            results.append({"lambda_d": float(lam), "score": None, "report": None, "error": str(exc)})
    scored = [r for r in results if r["score"] is not None]
    best = min(scored, key=lambda r: (-r["score"], r["lambda_d"])) if scored else None
    return results, best
