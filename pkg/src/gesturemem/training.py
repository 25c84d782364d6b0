"""Training loop: paired short/long forward passes, recall fusion, contrastive
losses, SGD on the short-term encoder and decoder, momentum tracking of the
long-term encoder, FIFO enqueueing, and binary checkpoints.

Per step: encode the short windows (with gradients) and the long windows
(without); recall against the pre-step queue and fuse; classify; combine
cross-entropy with the configured contrastive term; apply SGD with weight decay
to the short-term encoder and decoder only; momentum-update the long-term
encoder; then enqueue the batch's long-term features. Only the enqueue mutates
the queue, so a sample never recalls features produced by its own batch.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from . import memory as mem
from . import losses
from .dataset import LabelMap, mean_center, split_subjects, window_dataset
from .errors import CheckpointError, ConfigError, NonFiniteError

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DTYPES = {"float32": np.float32, "float64": np.float64}
CONTRAST_KINDS = ("memory", "views")


@dataclass
class TrainConfig:
    """Full training configuration; defaults are the paper-scale settings."""

    # windowing
    short_len: int = 6
    window_scale: int = 10
    stride: int = 1
    eval_stride: int | None = None      # None -> non-overlapping (short_len)
    purity_required: bool = True
    center: bool = False
    input_scale: float = 1.0
    # encoder / decoder
    width: int = 32
    blocks: int = 2
    temporal_kernel: int = 3
    feature_dim: int = 128
    # memory queue
    queue_capacity: int = 65536
    momentum_coef: float = 0.99
    # losses
    temperature: float = 0.07
    mal_weight: float = 1.0
    denominator_mode: str = "negatives"
    # optimization
    learning_rate: float = 0.005
    weight_decay: float = 1e-4
    sgd_momentum: float = 0.0
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    # ablation / loss selection
    use_recall: bool = True
    use_mal: bool = True
    contrast_loss: str = "memory"
    jitter_sigma: float = 0.01
    # numerics / logging cadence
    dtype: str = "float32"
    eval_every: int = 1

    def __post_init__(self):
        if self.short_len < 1 or self.window_scale < 1 or self.stride < 1:
            raise ConfigError("short_len, window_scale, and stride must be >= 1")
        if self.eval_stride is not None and self.eval_stride < 1:
            raise ConfigError("eval_stride must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not (0.0 <= self.momentum_coef < 1.0):
            raise ConfigError("momentum_coef must be in [0, 1)")
        if self.contrast_loss not in CONTRAST_KINDS:
            raise ConfigError(f"contrast_loss must be one of {CONTRAST_KINDS}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate must be > 0 and weight_decay >= 0")
        if self.input_scale <= 0:
            raise ConfigError("input_scale must be positive")
        if not (0.0 <= self.sgd_momentum < 1.0):
            raise ConfigError("sgd_momentum must be in [0, 1)")
        self.loss_config()  # validates temperature / weight / mode

    @classmethod
    def desk_profile(cls, **overrides):
        """Small-scale profile for laptop-CPU experiments and the test suite.

        Centers each window per joint and rescales so the encoder sees O(1)
        signals: raw meter-scale coordinates carry centimeter-scale motion that
        this small network would otherwise contract into the normalization
        epsilon regime.
        """
        base = dict(short_len=6, window_scale=10, stride=2, queue_capacity=512,
                    feature_dim=32, width=16, batch_size=16, epochs=30,
                    center=True, input_scale=1000.0)
        base.update(overrides)
        return cls(**base)

    def encoder_config(self):
        return enc.EncoderConfig(blocks=self.blocks, width=self.width,
                                 temporal_kernel=self.temporal_kernel,
                                 feature_dim=self.feature_dim)

    def loss_config(self):
        return losses.LossConfig(temperature=self.temperature,
                                 mal_weight=self.mal_weight,
                                 denominator_mode=self.denominator_mode)

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainState:
    """Everything a training run mutates, plus what checkpoints persist."""

    config: TrainConfig
    label_map: LabelMap
    graph: enc.SkeletonGraph
    params_s: dict
    params_l: dict
    decoder: dict
    queue: mem.MemoryQueue
    velocities: dict | None
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0


def init_state(config, label_map):
    if label_map.num_classes < 2:
        raise ConfigError("need at least 2 classes to train")
    if config.queue_capacity < config.batch_size:
        log.warning("queue capacity %d is smaller than batch size %d; "
                    "each step overwrites the whole queue",
                    config.queue_capacity, config.batch_size)
    rng = np.random.default_rng(config.seed)
    dtype = config.np_dtype
    params_s, params_l, decoder = enc.init_encoders_from_rng(
        config.encoder_config(), label_map.num_classes, rng, dtype)
    queue = mem.MemoryQueue(config.queue_capacity, config.feature_dim, dtype=dtype)
    velocities = None
    if config.sgd_momentum > 0:
        velocities = {f"encoder_s/{k}": np.zeros_like(v) for k, v in params_s.items()}
        velocities.update({f"decoder/{k}": np.zeros_like(v) for k, v in decoder.items()})
    return TrainState(config=config, label_map=label_map, graph=enc.skeleton_graph(),
                      params_s=params_s, params_l=params_l, decoder=decoder,
                      queue=queue, velocities=velocities, rng=rng)


def _augment_views(x, rng, jitter_sigma, min_len):
    """Two augmented views per sample: random temporal crop-and-pad plus jitter."""
    b, c, t, v = x.shape
    views = np.empty((2 * b, c, t, v), dtype=x.dtype)
    for view in range(2):
        for i in range(b):
            length = int(rng.integers(min_len, t + 1))
            start = int(rng.integers(0, t - length + 1))
            crop = x[i, :, start:start + length, :]
            if length < t:
                pad = np.repeat(crop[:, -1:, :], t - length, axis=1)
                crop = np.concatenate([crop, pad], axis=1)
            views[view * b + i] = crop
    if jitter_sigma > 0:
        views += rng.normal(0.0, jitter_sigma, size=views.shape).astype(x.dtype)
    return views


def _sgd_apply(state, grads):
    """SGD with coupled weight decay over the short-term encoder and decoder.

    ``grads`` keys are prefixed parameter names (``encoder_s/...``,
    ``decoder/...``). With zero data gradient a parameter contracts by exactly
    (1 - lr * weight_decay) per step.
    """
    cfg = state.config
    lr, wd, momentum = cfg.learning_rate, cfg.weight_decay, cfg.sgd_momentum
    for name, g in grads.items():
        group, key = name.split("/", 1)
        params = state.params_s if group == "encoder_s" else state.decoder
        p = params[key]
        step_dir = g + wd * p
        if momentum > 0:
            vel = state.velocities[name]
            vel *= momentum
            vel += step_dir
            step_dir = vel
        params[key] = p - lr * step_dir


def train_step(state, x_short, x_long, labels):
    """One optimization step on a batch of (short window, long window, label).

    Mutates ``state`` in place and returns the step metrics. ``x_short`` is
    [B, C, T, V], ``x_long`` is [B, C, S*T, V].
    """
    cfg = state.config
    enc_cfg = cfg.encoder_config()
    loss_cfg = cfg.loss_config()
    adj = state.graph.normalized
    labels = np.asarray(labels)

    feats_s, cache_s = enc.encode_forward(state.params_s, x_short, adj, enc_cfg,
                                          want_cache=True)
    feats_l, _ = enc.encode_forward(state.params_l, x_long, adj, enc_cfg)

    if cfg.use_recall:
        recalled, recall_cache = mem.recall_batch_with_grad(state.queue, feats_s)
        fused = feats_s + recalled
    else:
        recall_cache = None
        fused = feats_s

    logits = fused @ state.decoder["w"].T + state.decoder["b"]
    ce, g_logits, probs = losses.softmax_cross_entropy_batch(logits, labels)
    accuracy = float((probs.argmax(axis=1) == labels).mean())

    g_fused = g_logits @ state.decoder["w"]
    g_feats = g_fused.copy()
    if cfg.use_recall:
        g_feats += mem.recall_batch_backward(recall_cache, g_fused)

    contrast = 0.0
    aug_cache = None
    g_aug = None
    if cfg.use_mal:
        if cfg.contrast_loss == "memory":
            contrast, g_con = losses.memory_augmented_loss_with_grad(
                feats_s, labels, state.queue, loss_cfg)
            g_feats += loss_cfg.mal_weight * g_con
        else:
            views = _augment_views(x_short, state.rng, cfg.jitter_sigma,
                                   min_len=max(cfg.temporal_kernel, x_short.shape[2] - 2))
            view_labels = np.concatenate([labels, labels])
            view_feats, aug_cache = enc.encode_forward(
                state.params_s, views, adj, enc_cfg, want_cache=True)
            contrast, g_views = losses.supervised_contrastive_loss_with_grad(
                view_feats, view_labels, loss_cfg)
            g_aug = loss_cfg.mal_weight * g_views

    total = losses.total_loss(ce, contrast, loss_cfg)
    if not np.isfinite(total):
        raise NonFiniteError(
            f"non-finite loss at step {state.step}: ce={ce!r} contrast={contrast!r}")

    param_grads, _ = enc.encode_backward(cache_s, g_feats)
    if g_aug is not None:
        aug_grads, _ = enc.encode_backward(aug_cache, g_aug)
        for k, v in aug_grads.items():
            param_grads[k] = param_grads[k] + v

    grads = {f"encoder_s/{k}": v for k, v in param_grads.items()}
    grads["decoder/w"] = g_logits.T @ fused
    grads["decoder/b"] = g_logits.sum(axis=0)

    _sgd_apply(state, grads)
    state.params_l = enc.momentum_update(state.params_l, state.params_s,
                                         cfg.momentum_coef)
    state.queue.enqueue_batch(feats_l, labels)
    state.step += 1
    return {"loss": float(total), "ce": float(ce), "contrast": float(contrast),
            "accuracy": accuracy}


def _stack_samples(samples, dtype, center, input_scale=1.0):
    data = np.stack([s.data for s in samples])
    if center:
        data = mean_center(data)
    if input_scale != 1.0:
        data = data * input_scale
    return np.ascontiguousarray(data, dtype=dtype)


def _eval_accuracy(state, x, labels, chunk=256):
    """Batched short-window accuracy against the current (frozen) queue."""
    cfg = state.config
    enc_cfg = cfg.encoder_config()
    adj = state.graph.normalized
    correct = 0
    for lo in range(0, x.shape[0], chunk):
        xs = x[lo:lo + chunk]
        feats, _ = enc.encode_forward(state.params_s, xs, adj, enc_cfg)
        if cfg.use_recall and state.queue.fill > 0:
            weights = mem.address_batch(state.queue, feats)
            feats = feats + weights @ state.queue.filled_features
        probs = enc.classify(state.decoder, feats)
        correct += int((probs.argmax(axis=1) == labels[lo:lo + chunk]).sum())
    return correct / x.shape[0]


@dataclass
class TrainResult:
    state: TrainState
    metrics: list = field(default_factory=list)


def prepare_data(config, recordings, label_map, split):
    """Window recordings into training pairs and a non-overlapping test set.

    Training keeps only samples whose long-term context window exists (and is
    label-pure when required). Returns dict with stacked arrays.
    """
    train_set = window_dataset(recordings, label_map, config.short_len,
                               config.window_scale, config.stride,
                               config.purity_required, with_long=True)
    train_idx, _ = split_subjects(train_set, split)
    pair_idx = [i for i in train_idx if train_set.longs[i] is not None]
    if not pair_idx:
        raise ConfigError("no training samples with a constructible long-term window")
    dtype = config.np_dtype
    x_short = _stack_samples([train_set.shorts[i] for i in pair_idx], dtype,
                             config.center, config.input_scale)
    x_long = _stack_samples([train_set.longs[i] for i in pair_idx], dtype,
                            config.center, config.input_scale)
    y_train = np.asarray([train_set.shorts[i].label for i in pair_idx], dtype=np.int64)

    eval_stride = config.eval_stride or config.short_len
    eval_set = window_dataset(recordings, label_map, config.short_len,
                              stride=eval_stride, with_long=False)
    _, test_idx = split_subjects(eval_set, split)
    test_samples = [eval_set.shorts[i] for i in test_idx]
    x_test = (_stack_samples(test_samples, dtype, config.center, config.input_scale)
              if test_samples else np.zeros((0, 3, config.short_len, 3), dtype))
    y_test = np.asarray([s.label for s in test_samples], dtype=np.int64)
    return {"x_short": x_short, "x_long": x_long, "y_train": y_train,
            "x_test": x_test, "y_test": y_test, "test_samples": test_samples}


def train(config, recordings, label_map, split, log_path=None, resume_from=None):
    """Run (or resume) a full training run; returns the final state and metrics.

    Deterministic for a fixed config and seed: data order, augmentation, and
    initialization all derive from one seeded generator whose state rides along
    in checkpoints.
    """
    data = prepare_data(config, recordings, label_map, split)
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        resumed = dataclasses.asdict(state.config)
        target = dataclasses.asdict(config)
        resumed.pop("epochs"), target.pop("epochs")
        if resumed != target:
            raise ConfigError("checkpoint config does not match the resume config")
        state.config = config
    else:
        state = init_state(config, label_map)

    x_short, x_long, y_train = data["x_short"], data["x_long"], data["y_train"]
    n = x_short.shape[0]
    metrics = []
    for epoch in range(state.epoch + 1, config.epochs + 1):
        order = state.rng.permutation(n)
        sums = {"loss": 0.0, "ce": 0.0, "contrast": 0.0, "accuracy": 0.0}
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            step_metrics = train_step(state, x_short[idx], x_long[idx], y_train[idx])
            for k in sums:
                sums[k] += step_metrics[k] * len(idx)
        state.epoch = epoch
        row = {"epoch": epoch, "split": "train"}
        row.update({k: sums[k] / n for k in sums})
        metrics.append(row)
        if config.eval_every and epoch % config.eval_every == 0 and len(data["y_test"]):
            acc = _eval_accuracy(state, data["x_test"], data["y_test"])
            metrics.append({"epoch": epoch, "split": "test", "accuracy": acc})
        log.info("epoch %d: train acc %.4f loss %.4f", epoch, row["accuracy"], row["loss"])

    if log_path is not None:
        write_metrics(log_path, metrics)
    return TrainResult(state=state, metrics=metrics)


def write_metrics(path, metrics):
    with open(path, "w", encoding="utf-8") as fh:
        for row in metrics:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# --- checkpoint format -----------------------------------------------------------
#
# One JSON header line (version, config, epoch/step counters, RNG state, queue
# cursors, label names, tensor manifest with shapes/offsets, payload SHA-256),
# then raw little-endian float32 tensor payloads in manifest order.


def _state_tensors(state):
    tensors = {}
    for k, v in sorted(state.params_s.items()):
        tensors[f"encoder_s/{k}"] = v
    for k, v in sorted(state.params_l.items()):
        tensors[f"encoder_l/{k}"] = v
    for k, v in sorted(state.decoder.items()):
        tensors[f"decoder/{k}"] = v
    tensors["memory/features"] = state.queue.features
    tensors["memory/labels"] = state.queue.labels
    if state.velocities is not None:
        for k, v in sorted(state.velocities.items()):
            tensors[f"velocity/{k}"] = v
    return tensors


def save_checkpoint(state, path):
    """Serialize a training state; the byte stream round-trips exactly."""
    tensors = _state_tensors(state)
    manifest = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name]).astype("<f4")
        raw = arr.tobytes()
        manifest.append({"name": name, "shape": list(tensors[name].shape),
                         "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "step": state.step,
        "rng_state": state.rng.bit_generator.state,
        "memory": {"fill": state.queue.fill, "head": state.queue.head},
        "labels": list(state.label_map.names),
        "has_velocities": state.velocities is not None,
        "tensors": manifest,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(payload)
    return path


def load_checkpoint(path):
    """Rebuild a TrainState from :func:`save_checkpoint` output."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {header.get('version')!r} is not supported "
            f"(expected {CHECKPOINT_VERSION}); no migration path")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointError("payload checksum mismatch: checkpoint is corrupt")

    config = TrainConfig.from_dict(header["config"])
    dtype = config.np_dtype
    arrays = {}
    for entry in header["tensors"]:
        lo, nbytes = entry["offset"], entry["nbytes"]
        if lo + nbytes > len(payload):
            raise CheckpointError(f"tensor {entry['name']} overruns the payload")
        flat = np.frombuffer(payload[lo:lo + nbytes], dtype="<f4")
        arrays[entry["name"]] = flat.reshape(entry["shape"])

    def group(prefix, cast):
        return {name[len(prefix):]: arrays[name].astype(cast)
                for name in arrays if name.startswith(prefix)}

    params_s = group("encoder_s/", dtype)
    params_l = group("encoder_l/", dtype)
    decoder = group("decoder/", dtype)
    label_map = LabelMap(names=list(header["labels"]))

    queue = mem.MemoryQueue(config.queue_capacity, config.feature_dim, dtype=dtype)
    queue.features[:] = arrays["memory/features"].astype(dtype)
    queue.labels[:] = np.rint(arrays["memory/labels"]).astype(np.int64)
    queue.fill = int(header["memory"]["fill"])
    queue.head = int(header["memory"]["head"])

    velocities = group("velocity/", dtype) if header["has_velocities"] else None

    bitgen = np.random.PCG64()
    bitgen.state = header["rng_state"]
    rng = np.random.Generator(bitgen)
    return TrainState(config=config, label_map=label_map, graph=enc.skeleton_graph(),
                      params_s=params_s, params_l=params_l, decoder=decoder,
                      queue=queue, velocities=velocities, rng=rng,
                      epoch=int(header["epoch"]), step=int(header["step"]))
