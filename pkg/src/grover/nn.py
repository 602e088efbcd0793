"""Numpy TextCNN classifier with a hand-written backward pass and Adam.

Two model kinds are supported:

* ``textcnn``: one branch per kernel size ``k``::

      embed -> conv1(k) -> ReLU -> maxpool(2, stride 2) -> conv2(k) -> ReLU
            -> max over time

  The branch outputs are concatenated, passed through (optional) inverted
  dropout and a single fully connected layer.
* ``bow_linear``: mean of the non-padding embeddings followed by the same
  dropout + fully connected head. Cheap, used as a diagnostic model.

Convolutions are computed as a sum of ``k`` shifted matmuls over the
flattened batch instead of an im2col copy; the conv1 layers of all branches
share those matmuls.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InputError, TrainingDiverged

PAD_ID = 0

MODEL_KINDS = ("textcnn", "bow_linear")


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int
    embedding_dim: int = 300
    seq_len: int = 100
    kernel_sizes: tuple[int, ...] = (2, 3, 4, 5)
    conv1_channels: int = 32
    conv2_channels: int = 16
    dropout_p: float = 0.0
    model_kind: str = "textcnn"

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model_kind {self.model_kind!r}; expected one of {MODEL_KINDS}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.embedding_dim < 1 or self.seq_len < 1:
            raise ConfigError("embedding_dim and seq_len must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.model_kind == "textcnn":
            if not self.kernel_sizes:
                raise ConfigError("textcnn needs at least one kernel size")
            if len(set(self.kernel_sizes)) != len(self.kernel_sizes):
                raise ConfigError(f"duplicate kernel sizes {self.kernel_sizes}")
            if self.conv1_channels < 1 or self.conv2_channels < 1:
                raise ConfigError("conv channel counts must be >= 1")
            for k in self.kernel_sizes:
                if not 1 <= k <= self.seq_len:
                    raise ConfigError(f"kernel size {k} outside [1, seq_len={self.seq_len}]")
                # conv1 -> pool(2) must leave at least k steps for conv2
                if (self.seq_len - k + 1) // 2 < k:
                    raise ConfigError(
                        f"seq_len={self.seq_len} too short for kernel {k}: "
                        f"need seq_len >= {3 * k - 1}"
                    )

    @property
    def feature_dim(self) -> int:
        if self.model_kind == "bow_linear":
            return self.embedding_dim
        return self.conv2_channels * len(self.kernel_sizes)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        if self.model_kind == "textcnn":
            d, c1, c2 = self.embedding_dim, self.conv1_channels, self.conv2_channels
            for k in self.kernel_sizes:
                shapes[f"conv1_w_{k}"] = (k, d, c1)
                shapes[f"conv1_b_{k}"] = (c1,)
                shapes[f"conv2_w_{k}"] = (k, c1, c2)
                shapes[f"conv2_b_{k}"] = (c2,)
        shapes["fc_w"] = (self.feature_dim, self.num_classes)
        shapes["fc_b"] = (self.num_classes,)
        return shapes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        return cls(**d)


@dataclass
class ClassifierParams:
    config: ClassifierConfig
    arrays: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def audit(self) -> None:
        """Raise ConfigError unless names/shapes match the config and values are finite."""
        expected = self.config.param_shapes()
        if set(expected) != set(self.arrays):
            raise ConfigError(f"parameter names {sorted(self.arrays)} != expected {sorted(expected)}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ConfigError(f"{name}: shape {self.arrays[name].shape} != {shape}")
            if not np.all(np.isfinite(self.arrays[name])):
                raise ConfigError(f"{name}: non-finite values")


def init_params(config: ClassifierConfig, seed: int, dtype=np.float64) -> ClassifierParams:
    """Glorot-uniform weights, zero biases, drawn in ``param_shapes`` order."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in config.param_shapes().items():
        if "_b" in name:
            arrays[name] = np.zeros(shape, dtype=dtype)
            continue
        if len(shape) == 3:
            k, cin, cout = shape
            fan_in, fan_out = k * cin, k * cout
        else:
            fan_in, fan_out = shape
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        arrays[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return ClassifierParams(config, arrays)


@dataclass
class Tape:
    """Activations saved by ``forward`` for ``loss_and_grad``."""

    batch: np.ndarray
    x: np.ndarray
    features: np.ndarray
    dropped: np.ndarray
    drop_mask: np.ndarray | None
    branches: dict = field(default_factory=dict)
    bow_mask: np.ndarray | None = None
    bow_count: np.ndarray | None = None


@dataclass
class Gradients:
    """Parameter gradients plus a row-sparse embedding gradient."""

    params: dict[str, np.ndarray]
    emb_ids: np.ndarray
    emb_rows: np.ndarray

    def embedding_dense(self, vocab_size: int) -> np.ndarray:
        dense = np.zeros((vocab_size, self.emb_rows.shape[1]), dtype=self.emb_rows.dtype)
        dense[self.emb_ids] = self.emb_rows
        return dense


def _matrix(embeddings) -> np.ndarray:
    return getattr(embeddings, "matrix", embeddings)


def _check_batch(params: ClassifierParams, E: np.ndarray, batch: np.ndarray) -> np.ndarray:
    cfg = params.config
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] != cfg.seq_len:
        raise ConfigError(f"batch shape {batch.shape} does not match (B, seq_len={cfg.seq_len})")
    if E.ndim != 2 or E.shape[1] != cfg.embedding_dim:
        raise ConfigError(f"embedding shape {E.shape} does not match dim {cfg.embedding_dim}")
    if batch.size and (batch.min() < 0 or batch.max() >= E.shape[0]):
        raise InputError(f"token id out of range [0, {E.shape[0]})")
    return batch


def _conv(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid convolution over axis 1, returned at full length ``L``.

    The input is treated as one flat ``(B*L, C)`` sequence so every shifted
    slice is contiguous. Rows ``t = L-k+1 .. L-1`` of each example straddle
    two examples; they are zeroed and must be ignored by the caller.
    """
    return _multi_conv(x, [w], [b])


def _multi_conv(x: np.ndarray, ws, bs) -> np.ndarray:
    """Several convolutions over the same input, output channels concatenated.

    Branches are laid out by descending width so that, for shift ``j``, all
    branches with ``k > j`` occupy a leading block of columns and need a single
    matmul.
    """
    B, L, cin = x.shape
    flat = x.reshape(B * L, cin)
    order = sorted(range(len(ws)), key=lambda i: -ws[i].shape[0])
    widths = [ws[i].shape[2] for i in order]
    edges = np.concatenate([[0], np.cumsum(widths)])
    kmax = ws[order[0]].shape[0]
    out = np.zeros((B * L, edges[-1]), dtype=np.result_type(x, ws[0]))
    for j in range(kmax):
        live = [i for i in order if ws[i].shape[0] > j]
        stop = edges[len(live)]
        wj = np.concatenate([ws[i][j] for i in live], axis=1)
        n = B * L - j
        out[:n, :stop] += flat[j:] @ wj
    out += np.concatenate([bs[i] for i in order])
    out = out.reshape(B, L, -1)
    for pos, i in enumerate(order):
        k = ws[i].shape[0]
        out[:, L - k + 1 :, edges[pos] : edges[pos + 1]] = 0.0
    # back to caller's branch order
    inverse = np.argsort(order)
    if list(order) != sorted(order):
        out = np.concatenate([out[:, :, edges[p] : edges[p + 1]] for p in inverse], axis=2)
    return out


def _multi_conv_backward(x: np.ndarray, ws, dout: np.ndarray):
    """Gradients of :func:`_multi_conv`. ``dout`` must be zero at invalid rows."""
    B, L, cin = x.shape
    flat = x.reshape(B * L, cin)
    order = sorted(range(len(ws)), key=lambda i: -ws[i].shape[0])
    caller_edges = np.concatenate([[0], np.cumsum([w.shape[2] for w in ws])])
    d = np.concatenate([dout[:, :, caller_edges[i] : caller_edges[i + 1]] for i in order], axis=2)
    d = d.reshape(B * L, -1)
    edges = np.concatenate([[0], np.cumsum([ws[i].shape[2] for i in order])])
    kmax = ws[order[0]].shape[0]
    dws = [np.empty_like(w) for w in ws]
    dx = np.zeros_like(flat)
    for j in range(kmax):
        live = [i for i in order if ws[i].shape[0] > j]
        stop = edges[len(live)]
        n = B * L - j
        dj = d[:n, :stop]
        gw = flat[j:].T @ dj
        wj = np.concatenate([ws[i][j] for i in live], axis=1)
        dx[j:] += dj @ wj.T
        for pos, i in enumerate(live):
            dws[i][j] = gw[:, edges[pos] : edges[pos + 1]]
    dbs = [dout[:, :, caller_edges[i] : caller_edges[i + 1]].sum(axis=(0, 1)) for i in range(len(ws))]
    return dx.reshape(B, L, cin), dws, dbs


def _widest_first(kernel_sizes) -> list[int]:
    return sorted(kernel_sizes, reverse=True)


def _pool_relu(h: np.ndarray, t: int):
    """ReLU then width-2/stride-2 max-pool over the first ``t`` rows of ``h``."""
    B, _, C = h.shape
    tp = t // 2
    pairs = h[:, : 2 * tp].reshape(B, tp, 2, C)
    left, right = pairs[:, :, 0], pairs[:, :, 1]
    take_right = right > left  # ties go to the left element
    pooled = np.maximum(np.maximum(left, right), 0.0)
    return pooled, take_right


def _pool_relu_backward(dpooled, pooled, take_right, L: int):
    B, tp, C = dpooled.shape
    g = dpooled * (pooled > 0)
    dh = np.zeros((B, L, C), dtype=dpooled.dtype)
    right = g * take_right
    dh[:, : 2 * tp] = np.stack([g - right, right], axis=2).reshape(B, 2 * tp, C)
    return dh


def forward(params: ClassifierParams, embeddings, batch, train_mode: bool = False, rng=None):
    """Return ``(logits, tape)`` for a ``B x seq_len`` batch of token ids."""
    cfg = params.config
    E = _matrix(embeddings)
    batch = _check_batch(params, E, batch)
    x = E[batch]
    tape = Tape(batch=batch, x=x, features=None, dropped=None, drop_mask=None)

    if cfg.model_kind == "bow_linear":
        mask = (batch != PAD_ID).astype(x.dtype)
        count = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
        feats = (x * mask[..., None]).sum(axis=1) / count
        tape.bow_mask, tape.bow_count = mask, count
    else:
        ks, c1 = cfg.kernel_sizes, cfg.conv1_channels
        L = cfg.seq_len
        wide = _widest_first(ks)
        h1 = _multi_conv(x, [params[f"conv1_w_{k}"] for k in wide], [params[f"conv1_b_{k}"] for k in wide])
        outs = []
        for k in ks:
            i = wide.index(k)
            p1, take_right = _pool_relu(h1[:, :, i * c1 : (i + 1) * c1], L - k + 1)
            h2 = _conv(p1, params[f"conv2_w_{k}"], params[f"conv2_b_{k}"])
            a2 = np.maximum(h2[:, : p1.shape[1] - k + 1], 0.0)
            top_arg = a2.argmax(axis=1)
            top = np.take_along_axis(a2, top_arg[:, None, :], axis=1)[:, 0, :]
            tape.branches[k] = dict(p1=p1, take_right=take_right, top=top, top_arg=top_arg)
            outs.append(top)
        feats = np.concatenate(outs, axis=1)

    tape.features = feats
    if train_mode and cfg.dropout_p > 0.0:
        if rng is None:
            raise ConfigError("train-mode dropout needs an rng")
        keep = 1.0 - cfg.dropout_p
        tape.drop_mask = (rng.random(feats.shape) < keep).astype(feats.dtype) / keep
        dropped = feats * tape.drop_mask
    else:
        dropped = feats
    tape.dropped = dropped
    logits = dropped @ params["fc_w"] + params["fc_b"]
    return logits, tape


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def loss_and_grad(logits, labels, tape: Tape, params: ClassifierParams, embeddings=None):
    """Mean softmax cross-entropy and its exact gradient.

    The embedding gradient is returned row-sparse: only ids present in the
    batch appear in ``emb_ids``. The padding row is frozen and never appears.
    """
    cfg = params.config
    labels = np.asarray(labels)
    B = logits.shape[0]
    if labels.shape != (B,):
        raise InputError(f"labels shape {labels.shape} != ({B},)")
    if B and (labels.min() < 0 or labels.max() >= cfg.num_classes):
        raise InputError(f"label out of range [0, {cfg.num_classes})")
    loss = cross_entropy(logits, labels)

    dlogits = softmax(logits)
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B

    grads = {"fc_w": tape.dropped.T @ dlogits, "fc_b": dlogits.sum(axis=0)}
    dfeat = dlogits @ params["fc_w"].T
    if tape.drop_mask is not None:
        dfeat = dfeat * tape.drop_mask

    if cfg.model_kind == "bow_linear":
        dx = (dfeat / tape.bow_count)[:, None, :] * tape.bow_mask[..., None]
    else:
        ks, c2 = cfg.kernel_sizes, cfg.conv2_channels
        L = cfg.seq_len
        dh1 = {}
        for i, k in enumerate(ks):
            br = tape.branches[k]
            dtop = dfeat[:, i * c2 : (i + 1) * c2] * (br["top"] > 0)
            dh2 = np.zeros(br["p1"].shape[:2] + (c2,), dtype=dtop.dtype)
            np.put_along_axis(dh2, br["top_arg"][:, None, :], dtop[:, None, :], axis=1)
            dp1, (grads[f"conv2_w_{k}"],), (grads[f"conv2_b_{k}"],) = _multi_conv_backward(
                br["p1"], [params[f"conv2_w_{k}"]], dh2
            )
            dh1[k] = _pool_relu_backward(dp1, br["p1"], br["take_right"], L)
        wide = _widest_first(ks)
        dx, dw1, db1 = _multi_conv_backward(
            tape.x, [params[f"conv1_w_{k}"] for k in wide], np.concatenate([dh1[k] for k in wide], axis=2)
        )
        for k, dw, db in zip(wide, dw1, db1):
            grads[f"conv1_w_{k}"], grads[f"conv1_b_{k}"] = dw, db

    ids, inverse = np.unique(tape.batch, return_inverse=True)
    rows = np.zeros((len(ids), dx.shape[2]), dtype=dx.dtype)
    np.add.at(rows, inverse.ravel(), dx.reshape(-1, dx.shape[2]))
    keep = ids != PAD_ID
    return loss, Gradients(grads, ids[keep], rows[keep])


@dataclass
class AdamState:
    """Adam moments for classifier params and (lazily) the embedding table."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    m_emb: np.ndarray
    v_emb: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: ClassifierParams, embeddings, **hyper) -> "AdamState":
        E = _matrix(embeddings)
        m = {k: np.zeros_like(a) for k, a in params.arrays.items()}
        v = {k: np.zeros_like(a) for k, a in params.arrays.items()}
        return cls(m=m, v=v, m_emb=np.zeros_like(E), v_emb=np.zeros_like(E), **hyper)


def adam_step(params: ClassifierParams, embeddings, grads: Gradients, state: AdamState):
    """One bias-corrected Adam update, in place.

    Embedding rows are updated lazily: only rows in ``grads.emb_ids`` have
    their moments and values touched, so rows absent from the batch stay
    bit-identical.
    """
    E = _matrix(embeddings)
    for name, g in grads.params.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in {name}")
    if not np.all(np.isfinite(grads.emb_rows)):
        raise TrainingDiverged("non-finite embedding gradient")
    for name, g in grads.params.items():
        if state.m[name].shape != g.shape:
            raise ConfigError(f"Adam state for {name} has shape {state.m[name].shape}, gradient {g.shape}")
    if state.m_emb.shape != E.shape:
        raise ConfigError("Adam embedding moments do not match the embedding table")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t

    for name, g in grads.params.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params.arrays[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)

    ids, g = grads.emb_ids, grads.emb_rows
    if len(ids):
        m = b1 * state.m_emb[ids] + (1.0 - b1) * g
        v = b2 * state.v_emb[ids] + (1.0 - b2) * (g * g)
        state.m_emb[ids] = m
        state.v_emb[ids] = v
        E[ids] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, embeddings, state


def predict(params: ClassifierParams, embeddings, batch, chunk: int = 512) -> np.ndarray:
    """Argmax class ids with train mode off. Ties go to the lowest class id."""
    batch = np.asarray(batch)
    out = np.empty(len(batch), dtype=np.int64)
    for start in range(0, len(batch), chunk):
        logits, _ = forward(params, embeddings, batch[start : start + chunk], train_mode=False)
        out[start : start + chunk] = logits.argmax(axis=1)
    return out


def accuracy(params: ClassifierParams, embeddings, ids, labels) -> float:
    if len(labels) == 0:
        return 0.0
    return float(np.mean(predict(params, embeddings, ids) == np.asarray(labels)))
