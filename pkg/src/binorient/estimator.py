"""Angle regressor: an 8-conv / 3-FC 1-D network trained with MSE on
(sin, cos) encodings of both angles, plus a template-matching baseline.

Architecture (input 5 x L):
  conv channels 5-16-16-32-32-64-64-128-128, kernel 7, same padding,
  stride 2 on every second layer; ReLU on hidden layers; dropout after the
  conv stack and after the first FC; FC sizes flatten-256-64-4 with a linear
  output (sin/cos targets are signed).

Training is fully reproducible: parameter init, shuffling, and dropout masks
all come from one seeded generator.  Per-channel input standardization is
fitted on the training batch and stored with the model.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError
from .features import FeatureBatch, FeatureTensor
from .geometry import wrap_deg

CONV_CHANNELS = (5, 16, 16, 32, 32, 64, 64, 128, 128)
CONV_KERNEL = 7
CONV_STRIDES = (1, 2, 1, 2, 1, 2, 1, 2)
FC_SIZES = (256, 64, 4)
_BOCN_MAGIC = b"BOCN"
_BOCN_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    learning_rate: float = 5e-4
    epochs: int = 30
    seed: int = 0
    dropout: float = 0.3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise InvalidInputError("dropout must lie in [0, 1)")


@dataclass(frozen=True)
class AnglePrediction:
    sin_dir: float
    cos_dir: float
    sin_ori: float
    cos_ori: float

    @property
    def theta_dir_deg(self) -> float:
        return wrap_deg(math.degrees(math.atan2(self.sin_dir, self.cos_dir)))

    @property
    def theta_ori_deg(self) -> float:
        return wrap_deg(math.degrees(math.atan2(self.sin_ori, self.cos_ori)))

    def raw(self) -> np.ndarray:
        return np.array([self.sin_dir, self.cos_dir, self.sin_ori, self.cos_ori])


def encode_angles(theta_dir_deg, theta_ori_deg) -> np.ndarray:
    """Targets [sin dir, cos dir, sin ori, cos ori]; vectorized."""
    d = np.radians(np.asarray(theta_dir_deg, dtype=np.float64))
    o = np.radians(np.asarray(theta_ori_deg, dtype=np.float64))
    return np.stack([np.sin(d), np.cos(d), np.sin(o), np.cos(o)], axis=-1)


def decode_raw(raw: np.ndarray) -> tuple[float, float]:
    dir_deg = wrap_deg(math.degrees(math.atan2(raw[0], raw[1])))
    ori_deg = wrap_deg(math.degrees(math.atan2(raw[2], raw[3])))
    return dir_deg, ori_deg


@dataclass
class ConvSpec:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int

    @property
    def pad(self) -> int:
        return self.kernel // 2

    def out_len(self, in_len: int) -> int:
        return (in_len + 2 * self.pad - self.kernel) // self.stride + 1


def _default_conv_specs(in_channels: int = 5):
    chans = (in_channels,) + CONV_CHANNELS[1:]
    return [ConvSpec(chans[i], chans[i + 1], CONV_KERNEL, CONV_STRIDES[i])
            for i in range(len(CONV_STRIDES))]


@dataclass
class EstimatorModel:
    """Parameter blocks plus the fitted per-channel input standardization."""

    conv_specs: list
    conv_w: list
    conv_b: list
    fc_w: list
    fc_b: list
    dropout: float
    input_shape: tuple        # (channels, L)
    norm_mean: np.ndarray     # (channels,)
    norm_std: np.ndarray      # (channels,)

    def params(self):
        return self.conv_w + self.conv_b + self.fc_w + self.fc_b

    def set_params(self, blocks) -> None:
        nc = len(self.conv_w)
        nf = len(self.fc_w)
        self.conv_w = list(blocks[:nc])
        self.conv_b = list(blocks[nc:2 * nc])
        self.fc_w = list(blocks[2 * nc:2 * nc + nf])
        self.fc_b = list(blocks[2 * nc + nf:])

    @property
    def dtype(self):
        return self.conv_w[0].dtype

    def astype(self, dtype) -> "EstimatorModel":
        return EstimatorModel(
            [ConvSpec(s.in_ch, s.out_ch, s.kernel, s.stride) for s in self.conv_specs],
            [w.astype(dtype) for w in self.conv_w],
            [b.astype(dtype) for b in self.conv_b],
            [w.astype(dtype) for w in self.fc_w],
            [b.astype(dtype) for b in self.fc_b],
            self.dropout, self.input_shape,
            self.norm_mean.astype(dtype), self.norm_std.astype(dtype))

    def flat_size(self) -> int:
        n = self.input_shape[1]
        for s in self.conv_specs:
            n = s.out_len(n)
        return n * self.conv_specs[-1].out_ch

    def validate_chain(self) -> None:
        specs = self.conv_specs
        if specs[0].in_ch != self.input_shape[0]:
            raise InvalidInputError("first conv in_ch does not match input")
        for prev, cur in zip(specs, specs[1:]):
            if cur.in_ch != prev.out_ch:
                raise InvalidInputError("conv channel chain is inconsistent")
        for spec, w, b in zip(specs, self.conv_w, self.conv_b):
            if w.shape != (spec.out_ch, spec.in_ch, spec.kernel) or b.shape != (spec.out_ch,):
                raise InvalidInputError("conv parameter shape mismatch")
        sizes = (self.flat_size(),) + tuple(w.shape[0] for w in self.fc_w)
        for i, (w, b) in enumerate(zip(self.fc_w, self.fc_b)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise InvalidInputError("fc parameter shape mismatch")
        for p in self.params():
            if not np.all(np.isfinite(p)):
                raise InvalidInputError("model parameters contain NaN/Inf")


def init_model(seed: int, input_len: int = 512, in_channels: int = 5,
               dropout: float = 0.3, dtype=np.float32,
               conv_specs=None, fc_sizes=FC_SIZES) -> EstimatorModel:
    """Uniform fan-in initialization from a seeded stream."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    specs = conv_specs if conv_specs is not None else _default_conv_specs(in_channels)
    conv_w, conv_b = [], []
    for s in specs:
        bound = 1.0 / math.sqrt(s.in_ch * s.kernel)
        conv_w.append(rng.uniform(-bound, bound,
                                  (s.out_ch, s.in_ch, s.kernel)).astype(dtype))
        conv_b.append(np.zeros(s.out_ch, dtype=dtype))
    model = EstimatorModel(specs, conv_w, conv_b, [], [], dropout,
                           (in_channels, input_len),
                           np.zeros(in_channels, dtype=dtype),
                           np.ones(in_channels, dtype=dtype))
    sizes = (model.flat_size(),) + tuple(fc_sizes)
    fc_w, fc_b = [], []
    for i in range(len(fc_sizes)):
        bound = 1.0 / math.sqrt(sizes[i])
        fc_w.append(rng.uniform(-bound, bound, (sizes[i + 1], sizes[i])).astype(dtype))
        fc_b.append(np.zeros(sizes[i + 1], dtype=dtype))
    model.fc_w = fc_w
    model.fc_b = fc_b
    model.validate_chain()
    return model


def _ws_get(ws: dict | None, key, shape, dtype):
    """Reusable scratch buffer; avoids re-faulting large allocations every
    batch during training.  Falls back to fresh arrays when ws is None."""
    if ws is None:
        return np.empty(shape, dtype=dtype)
    buf = ws.get(key)
    if buf is None or buf.shape != shape or buf.dtype != dtype:
        buf = ws[key] = np.empty(shape, dtype=dtype)
    return buf


def _im2col(x: np.ndarray, spec: ConvSpec, ws: dict | None, key) -> np.ndarray:
    """Channels-last (B, L, C) -> (B*out_len, K*C) patch matrix.

    With the (k, c) column order each patch is a contiguous memory block, so
    the copy is a straight row gather.
    """
    xp = np.pad(x, ((0, 0), (spec.pad, spec.pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(
        xp, (spec.kernel, spec.in_ch), axis=(1, 2))[:, ::spec.stride, 0]
    b, o, k, c = win.shape
    cols = _ws_get(ws, key, (b * o, k * c), x.dtype)
    np.copyto(cols.reshape(b, o, k, c), win)
    return cols


def _weights_flat(w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    # stored (C_out, C_in, K); patch columns are ordered (k, c)
    return np.ascontiguousarray(w.transpose(2, 1, 0)).reshape(-1, spec.out_ch)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, spec: ConvSpec,
                  ws: dict | None = None, layer: int = -1):
    """x: channels-last (B, L, C_in) -> ((B, out_len, C_out), cols)."""
    cols = _im2col(x, spec, ws, ("cols", layer))
    o = spec.out_len(x.shape[1])
    out = _ws_get(ws, ("act", layer), (cols.shape[0], spec.out_ch), x.dtype)
    np.matmul(cols, _weights_flat(w, spec), out=out)
    out += b
    return out.reshape(x.shape[0], o, spec.out_ch), cols


def _conv_backward(g_out: np.ndarray, cols: np.ndarray, w: np.ndarray,
                   spec: ConvSpec, in_len: int, ws: dict | None = None,
                   layer: int = -1, need_dx: bool = True):
    """g_out: (B, out_len, C_out).  Returns (dx, dw, db) with dx channels-last."""
    b, o, _ = g_out.shape
    g = g_out.reshape(b * o, spec.out_ch)
    dw_flat = cols.T @ g                                     # (K*C, C_out)
    dw = dw_flat.reshape(spec.kernel, spec.in_ch, spec.out_ch).transpose(2, 1, 0)
    dw = np.ascontiguousarray(dw)
    db = g.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = _ws_get(ws, ("dcols", layer), (b * o, spec.kernel * spec.in_ch), g.dtype)
    np.matmul(g, _weights_flat(w, spec).T, out=dcols)
    dcols = dcols.reshape(b, o, spec.kernel, spec.in_ch)
    dxp = _ws_get(ws, ("dxp", layer), (b, in_len + 2 * spec.pad, spec.in_ch), g.dtype)
    dxp[:] = 0.0
    for k in range(spec.kernel):
        dxp[:, k: k + spec.stride * o: spec.stride, :] += dcols[:, :, k, :]
    return dxp[:, spec.pad: spec.pad + in_len, :], dw, db


def _dropout_mask(rng: np.random.Generator, shape, rate: float, dtype):
    if rate <= 0.0:
        return None
    keep = (rng.random(shape) >= rate)
    return keep.astype(dtype) * (1.0 / (1.0 - rate))


def forward_batch(model: EstimatorModel, x: np.ndarray, train_mode: bool = False,
                  rng: np.random.Generator | None = None, want_cache: bool = False,
                  ws: dict | None = None):
    """x: (B, 5, L) -> raw outputs (B, 4).  Dropout only in train mode."""
    if x.ndim != 3 or x.shape[1:] != model.input_shape:
        raise InvalidInputError(
            f"input shape {x.shape[1:]} does not match model {model.input_shape}")
    if train_mode and model.dropout > 0.0 and rng is None:
        raise InvalidInputError("train-mode forward needs the seeded generator")
    dtype = model.dtype
    h = (x.astype(dtype) - model.norm_mean[:, None]) / model.norm_std[:, None]
    h = np.ascontiguousarray(h.transpose(0, 2, 1))  # conv stack runs channels-last
    cache = {"conv": []} if want_cache else None
    for i, (spec, w, b) in enumerate(zip(model.conv_specs, model.conv_w, model.conv_b)):
        in_len = h.shape[1]
        z, cols = _conv_forward(h, w, b, spec, ws, i)
        if want_cache:
            mask = _ws_get(ws, ("mask", i), z.shape, np.bool_)
            np.greater(z, 0, out=mask)
            cache["conv"].append((cols, mask, in_len))
        h = np.maximum(z, 0, out=z)
    bsz = h.shape[0]
    act = h.reshape(bsz, -1)
    masks = {}
    if train_mode:
        m = _dropout_mask(rng, act.shape, model.dropout, dtype)
        if m is not None:
            act = act * m
        masks[-1] = m
    n_fc = len(model.fc_w)
    fc_in, fc_pre = [], []
    for i in range(n_fc):
        fc_in.append(act)
        z = act @ model.fc_w[i].T + model.fc_b[i]
        fc_pre.append(z)
        if i == n_fc - 1:
            act = z  # linear output: sin/cos targets are signed
        else:
            act = np.maximum(z, 0)
            if i == 0 and train_mode:
                m = _dropout_mask(rng, act.shape, model.dropout, dtype)
                if m is not None:
                    act = act * m
                masks[0] = m
    out = act
    if want_cache:
        cache.update(masks=masks, fc_in=fc_in, fc_pre=fc_pre,
                     conv_out_shape=h.shape)
        return out, cache
    return out


def forward(model: EstimatorModel, x: FeatureTensor, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> AnglePrediction:
    raw = forward_batch(model, x.channels[None, :, :], train_mode, rng)[0]
    return AnglePrediction(*(float(v) for v in raw))


def loss_value(raw: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error over all sin/cos components of the batch."""
    return float(np.mean((raw.astype(np.float64) - targets) ** 2))


def loss(pred: AnglePrediction, target: tuple) -> float:
    enc = encode_angles(target[0], target[1])
    return loss_value(pred.raw()[None, :], enc[None, :])


def backward_batch(model: EstimatorModel, x: np.ndarray, targets: np.ndarray,
                   train_mode: bool = False,
                   rng: np.random.Generator | None = None,
                   ws: dict | None = None):
    """Loss and gradients for every parameter block (same order as params())."""
    raw, cache = forward_batch(model, x, train_mode, rng, want_cache=True, ws=ws)
    dtype = model.dtype
    b = raw.shape[0]
    targets = targets.astype(dtype)
    cost = loss_value(raw, targets.astype(np.float64))
    g = (2.0 / raw.size) * (raw - targets)
    g = g.astype(dtype)

    n_fc = len(model.fc_w)
    fc_dw = [None] * n_fc
    fc_db = [None] * n_fc
    for i in range(n_fc - 1, -1, -1):
        fc_dw[i] = g.T @ cache["fc_in"][i]
        fc_db[i] = g.sum(axis=0)
        g = g @ model.fc_w[i]
        if i > 0:
            if i == 1 and cache["masks"].get(0) is not None:
                g = g * cache["masks"][0]
            g = g * (cache["fc_pre"][i - 1] > 0)
    if cache["masks"].get(-1) is not None:
        g = g * cache["masks"][-1]
    g = g.reshape(cache["conv_out_shape"])

    conv_dw = [None] * len(model.conv_specs)
    conv_db = [None] * len(model.conv_specs)
    for i in range(len(model.conv_specs) - 1, -1, -1):
        cols, relu_mask, in_len = cache["conv"][i]
        g = np.multiply(g, relu_mask, out=g if g.flags.writeable else None)
        g, conv_dw[i], conv_db[i] = _conv_backward(
            g, cols, model.conv_w[i], model.conv_specs[i], in_len,
            ws=ws, layer=i, need_dx=(i > 0))
    grads = conv_dw + conv_db + fc_dw + fc_db
    return cost, grads


@dataclass
class _AdamState:
    m: list
    v: list
    t: int = 0


def _adam_step(params, grads, state: _AdamState, cfg: TrainConfig) -> None:
    state.t += 1
    lr_t = cfg.learning_rate * math.sqrt(1.0 - cfg.beta2 ** state.t) \
        / (1.0 - cfg.beta1 ** state.t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * np.square(g)
        p -= (lr_t * m / (np.sqrt(v) + cfg.eps)).astype(p.dtype)


def fit_normalization(model: EstimatorModel, data: np.ndarray) -> None:
    """Per-channel standardization fitted once on the training set."""
    mean = data.mean(axis=(0, 2))
    std = data.std(axis=(0, 2))
    std = np.where(std < 1e-12, 1.0, std)
    model.norm_mean = mean.astype(model.dtype)
    model.norm_std = std.astype(model.dtype)


def train(batch: FeatureBatch, cfg: TrainConfig,
          model: EstimatorModel | None = None,
          log_every: int = 0) -> tuple[EstimatorModel, list]:
    """Adam training on sin/cos targets; returns (model, per-epoch mean loss).

    Passing an existing model continues training (fine-tuning) and keeps its
    input normalization.
    """
    if len(batch) == 0:
        raise InvalidInputError("empty training batch")
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x7261494e)))
    data = np.asarray(batch.data, dtype=np.float32)
    targets = encode_angles(batch.labels[:, 0], batch.labels[:, 1]).astype(np.float32)
    if model is None:
        model = init_model(cfg.seed, input_len=batch.channel_len,
                           dropout=cfg.dropout)
        fit_normalization(model, data)
    state = _AdamState([np.zeros_like(p, dtype=np.float32) for p in model.params()],
                       [np.zeros_like(p, dtype=np.float32) for p in model.params()])
    history = []
    n = len(batch)
    ws: dict = {}
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            cost, grads = backward_batch(model, data[idx], targets[idx],
                                         train_mode=True, rng=rng, ws=ws)
            _adam_step(model.params(), grads, state, cfg)
            total += cost * idx.shape[0]
            seen += idx.shape[0]
        history.append(total / seen)
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}/{cfg.epochs}: loss {history[-1]:.6f}")
    return model, history


def predict_batch(model: EstimatorModel, data: np.ndarray,
                  chunk: int = 256) -> np.ndarray:
    """Raw (n, 4) outputs in inference mode."""
    ws: dict = {}
    outs = [forward_batch(model, data[i: i + chunk].astype(np.float32), ws=ws).copy()
            for i in range(0, data.shape[0], chunk)]
    return np.concatenate(outs, axis=0)


def predict_angles(model: EstimatorModel, data: np.ndarray) -> np.ndarray:
    raw = predict_batch(model, data)
    dir_deg = np.degrees(np.arctan2(raw[:, 0], raw[:, 1]))
    ori_deg = np.degrees(np.arctan2(raw[:, 2], raw[:, 3]))
    wrap = np.vectorize(wrap_deg)
    return np.stack([wrap(dir_deg), wrap(ori_deg)], axis=1)


@dataclass(frozen=True)
class TemplateBank:
    """Reference feature grid over (theta_dir, theta_ori) for nearest-template
    lookup; an independent sanity oracle for the learned regressor."""

    features: np.ndarray   # (n, 5, L)
    angles: np.ndarray     # (n, 2) degrees

    def __post_init__(self) -> None:
        f = np.asarray(self.features, dtype=np.float64)
        a = np.asarray(self.angles, dtype=np.float64)
        if f.ndim != 3 or a.shape != (f.shape[0], 2) or f.shape[0] == 0:
            raise InvalidInputError("bank needs matching features and angles")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "angles", a)

    def __len__(self) -> int:
        return self.features.shape[0]


def template_match(x: FeatureTensor, bank: TemplateBank) -> AnglePrediction:
    """Angles of the bank entry with minimum Euclidean feature distance."""
    idx = template_match_indices(x.channels[None, :, :], bank)[0]
    d, o = bank.angles[idx]
    enc = encode_angles(d, o)
    return AnglePrediction(*(float(v) for v in enc))


def template_match_indices(queries: np.ndarray, bank: TemplateBank) -> np.ndarray:
    if len(bank) == 0:
        raise InvalidInputError("empty template bank")
    q = np.asarray(queries, dtype=np.float64).reshape(queries.shape[0], -1)
    b = bank.features.reshape(len(bank), -1)
    d2 = (np.sum(q * q, axis=1)[:, None] - 2.0 * (q @ b.T)
          + np.sum(b * b, axis=1)[None, :])
    return np.argmin(d2, axis=1)


def template_predict_angles(data: np.ndarray, bank: TemplateBank) -> np.ndarray:
    idx = template_match_indices(data, bank)
    return bank.angles[idx].copy()


def save_model(path, model: EstimatorModel) -> None:
    """Checkpoint: layer spec header + float32 parameter blocks."""
    model.validate_chain()
    parts = [struct.pack("<4sI", _BOCN_MAGIC, _BOCN_VERSION),
             struct.pack("<I", len(model.conv_specs))]
    for s in model.conv_specs:
        parts.append(struct.pack("<IIII", s.in_ch, s.out_ch, s.kernel, s.stride))
    parts.append(struct.pack("<I", len(model.fc_w)))
    for w in model.fc_w:
        parts.append(struct.pack("<II", w.shape[1], w.shape[0]))
    parts.append(struct.pack("<fII", model.dropout, *model.input_shape))
    parts.append(np.asarray(model.norm_mean, dtype="<f4").tobytes())
    parts.append(np.asarray(model.norm_std, dtype="<f4").tobytes())
    for p in model.params():
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> EstimatorModel:
    raw = Path(path).read_bytes()
    off = 0

    def take(fmt):
        nonlocal off
        vals = struct.unpack_from(fmt, raw, off)
        off += struct.calcsize(fmt)
        return vals

    magic, version = take("<4sI")
    if magic != _BOCN_MAGIC or version != _BOCN_VERSION:
        raise InvalidInputError("not a model checkpoint")
    (n_conv,) = take("<I")
    specs = [ConvSpec(*take("<IIII")) for _ in range(n_conv)]
    (n_fc,) = take("<I")
    fc_shapes = [take("<II") for _ in range(n_fc)]
    dropout, in_ch, in_len = take("<fII")

    def arr(shape):
        nonlocal off
        size = int(np.prod(shape))
        if off + size * 4 > len(raw):
            raise InvalidInputError("checkpoint has trailing or missing bytes")
        a = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += size * 4
        return a.copy()

    norm_mean = arr((in_ch,))
    norm_std = arr((in_ch,))
    conv_w = [arr((s.out_ch, s.in_ch, s.kernel)) for s in specs]
    conv_b = [arr((s.out_ch,)) for s in specs]
    fc_w = [arr((out, inp)) for inp, out in fc_shapes]
    fc_b = [arr((out,)) for inp, out in fc_shapes]
    if off != len(raw):
        raise InvalidInputError("checkpoint has trailing or missing bytes")
    model = EstimatorModel(specs, conv_w, conv_b, fc_w, fc_b, float(dropout),
                           (in_ch, in_len), norm_mean, norm_std)
    model.validate_chain()
    return model
