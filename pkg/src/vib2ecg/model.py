"""1D U-Net that maps vibration channels to a chest-lead ECG trace.

Encoder: three levels of two (conv k=7, batch norm, ReLU) blocks, each
followed by max-pooling by 2. Bottleneck: two blocks at the top of the
channel ladder. Decoder: transposed conv (k=2, s=2), copy-and-concatenate
with the matching encoder output, two blocks. Head: 1x1 conv, no
activation.
"""

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import neuralcore as nc

logger = logging.getLogger(__name__)

INPUT_MODES = ("SCG", "PCGL", "RAW", "BOTH")


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 2
    channel_ladder: tuple = (16, 32, 64, 128)
    kernel: int = 7
    pool_factor: int = 2
    up_kernel: int = 2
    input_length: int = 3000
    out_channels: int = 1

    @property
    def base_channels(self):
        return self.channel_ladder[0]

    @property
    def depth(self):
        return len(self.channel_ladder) - 1

    def validate(self):
        if self.in_channels not in (1, 2):
            raise ValueError(f"in_channels must be 1 or 2, got {self.in_channels}")
        ladder = tuple(self.channel_ladder)
        if len(ladder) < 2 or any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError(f"channel ladder must be strictly increasing, got {ladder}")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd for 'same' padding")
        if self.up_kernel != self.pool_factor:
            raise ValueError("up_kernel must equal pool_factor so decoder lengths match")
        if self.input_length % (self.pool_factor**self.depth):
            raise ValueError(
                f"input_length {self.input_length} not divisible by {self.pool_factor}**{self.depth}"
            )
        return self


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 20
    seed: int = 0
    input_mode: str = "BOTH"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    @property
    def in_channels(self):
        return 2 if self.input_mode == "BOTH" else 1

    def validate(self):
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"unknown input mode {self.input_mode!r}; expected one of {INPUT_MODES}")
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("learning rate, batch size, epochs and patience must be positive")
        return self


def layer_shapes(cfg):
    """Ordered ``name -> shape`` of every trainable tensor for ``cfg``."""
    cfg.validate()
    k = cfg.kernel
    shapes = {}

    def block(prefix, c_in, c_out):
        shapes[f"{prefix}.conv.weight"] = (c_out, c_in, k)
        shapes[f"{prefix}.conv.bias"] = (c_out,)
        shapes[f"{prefix}.bn.gamma"] = (c_out,)
        shapes[f"{prefix}.bn.beta"] = (c_out,)

    ladder = cfg.channel_ladder
    c_prev = cfg.in_channels
    for lvl, c in enumerate(ladder[:-1]):
        block(f"enc{lvl}.0", c_prev, c)
        block(f"enc{lvl}.1", c, c)
        c_prev = c
    block("mid.0", c_prev, ladder[-1])
    block("mid.1", ladder[-1], ladder[-1])
    c_prev = ladder[-1]
    for lvl in reversed(range(cfg.depth)):
        c = ladder[lvl]
        shapes[f"dec{lvl}.up.weight"] = (c_prev, c, cfg.up_kernel)
        shapes[f"dec{lvl}.up.bias"] = (c,)
        block(f"dec{lvl}.0", 2 * c, c)
        block(f"dec{lvl}.1", c, c)
        c_prev = c
    shapes["head.weight"] = (cfg.out_channels, c_prev, 1)
    shapes["head.bias"] = (cfg.out_channels,)
    return shapes


def param_count(cfg):
    return int(sum(np.prod(s) for s in layer_shapes(cfg).values()))


class UNet:
    """Parameters, batch-norm running statistics and the forward graph."""

    def __init__(self, cfg, params, buffers, step_count=0):
        self.cfg = cfg
        self.params = params
        self.buffers = buffers
        self.step_count = step_count  # optimizer updates applied so far

    def parameters(self):
        return list(self.params.values())

    @property
    def n_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def astype(self, dtype):
        params = {k: p.astype(dtype) for k, p in self.params.items()}
        buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        return UNet(self.cfg, params, buffers, self.step_count)

    def copy(self):
        return self.astype(self.params["head.bias"].data.dtype)

    def _block(self, prefix, x, training):
        p = self.params
        x = nc.conv1d(x, p[f"{prefix}.conv.weight"], p[f"{prefix}.conv.bias"], padding="same")
        x = nc.batchnorm1d(
            x,
            p[f"{prefix}.bn.gamma"],
            p[f"{prefix}.bn.beta"],
            self.buffers[f"{prefix}.bn.running_mean"],
            self.buffers[f"{prefix}.bn.running_var"],
            training,
        )
        return nc.relu(x)

    def __call__(self, x, training=False):
        x = nc.Tensor(x) if not isinstance(x, nc.Tensor) else x
        cfg = self.cfg
        if x.data.ndim != 3 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.input_length:
            raise nc.ShapeError(
                f"expected (batch, {cfg.in_channels}, {cfg.input_length}), got {x.shape}"
            )
        skips = []
        for lvl in range(cfg.depth):
            x = self._block(f"enc{lvl}.0", x, training)
            x = self._block(f"enc{lvl}.1", x, training)
            skips.append(x)
            x = nc.maxpool1d(x, cfg.pool_factor)
        x = self._block("mid.0", x, training)
        x = self._block("mid.1", x, training)
        for lvl in reversed(range(cfg.depth)):
            x = nc.transposed_conv1d(
                x, self.params[f"dec{lvl}.up.weight"], self.params[f"dec{lvl}.up.bias"], stride=cfg.pool_factor
            )
            x = nc.concat_channels(x, skips[lvl])
            x = self._block(f"dec{lvl}.0", x, training)
            x = self._block(f"dec{lvl}.1", x, training)
        return nc.conv1d(x, self.params["head.weight"], self.params["head.bias"], padding="valid")

    def state_dict(self):
        state = {k: p.data for k, p in self.params.items()}
        state.update(self.buffers)
        return state

    def optimizer_state(self, step_count=None):
        step_count = self.step_count if step_count is None else step_count
        state = {}
        for k, p in self.params.items():
            state[f"m.{k}"] = p.m
            state[f"v.{k}"] = p.v
        state["step"] = np.array([step_count], dtype=np.float32)
        return state

    def save(self, path, step_count=None):
        nc.save_checkpoint(path, self.state_dict(), self.optimizer_state(step_count))

    @classmethod
    def load(cls, path, input_length=3000):
        tensors, opt = nc.load_checkpoint(path)
        cfg = _infer_config(tensors, path, input_length)
        shapes = layer_shapes(cfg)
        params = {}
        for name, shape in shapes.items():
            if name not in tensors or tensors[name].shape != tuple(shape):
                raise nc.CheckpointFormatError(f"{path}: missing or misshapen tensor {name!r}")
            p = nc.Parameter(tensors.pop(name), name)
            if f"m.{name}" in opt:
                p.m = opt[f"m.{name}"]
                p.v = opt[f"v.{name}"]
            params[name] = p
        buffers = {k: v for k, v in tensors.items() if k.endswith((".running_mean", ".running_var"))}
        step = int(opt["step"][0]) if "step" in opt else 0
        return cls(cfg, params, buffers, step)


def _infer_config(tensors, path, input_length):
    try:
        first = tensors["enc0.0.conv.weight"].shape
        ladder = []
        lvl = 0
        while f"enc{lvl}.0.conv.weight" in tensors:
            ladder.append(tensors[f"enc{lvl}.0.conv.weight"].shape[0])
            lvl += 1
        ladder.append(tensors["mid.0.conv.weight"].shape[0])
        up = tensors["dec0.up.weight"].shape[2]
        return UNetConfig(
            in_channels=first[1],
            channel_ladder=tuple(int(c) for c in ladder),
            kernel=first[2],
            pool_factor=up,
            up_kernel=up,
            input_length=input_length,
            out_channels=tensors["head.weight"].shape[0],
        ).validate()
    except (KeyError, IndexError, ValueError) as exc:
        raise nc.CheckpointFormatError(f"{path}: tensors do not describe a U-Net ({exc})") from exc


def build_model(cfg=None, seed=0):
    """Fresh U-Net: Kaiming-uniform (fan-in) conv weights, zero biases and beta, unit gamma."""
    cfg = (cfg or UNetConfig()).validate()
    rng = np.random.default_rng(seed)
    params = {}
    buffers = {}
    for name, shape in layer_shapes(cfg).items():
        if name.endswith(".weight"):
            if ".up." in name:
                fan_in = shape[0] * shape[2]
            else:
                fan_in = shape[1] * shape[2]
            bound = np.sqrt(6.0 / fan_in)
            values = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            values = np.ones(shape)
        else:
            values = np.zeros(shape)
        params[name] = nc.Parameter(values.astype(np.float32), name)
        if name.endswith(".bn.gamma"):
            stem = name[: -len(".gamma")]
            buffers[f"{stem}.running_mean"] = np.zeros(shape, dtype=np.float32)
            buffers[f"{stem}.running_var"] = np.ones(shape, dtype=np.float32)
    return UNet(cfg, params, buffers)


def forward(model, batch):
    """Inference-mode forward pass on a ``(B, in_channels, length)`` array."""
    batch = np.asarray(batch, dtype=np.float32)
    return model(batch, training=False).data


def select_inputs(segment, input_mode):
    """Stack the model input channels for one segment: ``(channels, 3000)``."""
    if input_mode == "BOTH":
        return np.stack([segment.scg, segment.pcgl])
    if input_mode == "SCG":
        return segment.scg[None]
    if input_mode == "PCGL":
        return segment.pcgl[None]
    if input_mode == "RAW":
        return segment.raw[None]
    raise ValueError(f"unknown input mode {input_mode!r}")


def predict(model, segment, input_mode):
    x = select_inputs(segment, input_mode)
    if x.shape[0] != model.cfg.in_channels:
        raise ValueError(
            f"mode {input_mode} yields {x.shape[0]} channel(s); model expects {model.cfg.in_channels}"
        )
    return forward(model, x[None])[0, 0]


def predict_many(model, segments, input_mode, batch_size=32):
    out = []
    for i in range(0, len(segments), batch_size):
        xb = np.stack([select_inputs(s, input_mode) for s in segments[i : i + batch_size]])
        out.append(forward(model, xb)[:, 0])
    return np.concatenate(out) if out else np.zeros((0, model.cfg.input_length), dtype=np.float32)


@dataclass
class History:
    epochs: list = field(default_factory=list)
    train_l1: list = field(default_factory=list)
    val_l1: list = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_l1", "val_l1"])
            for row in zip(self.epochs, self.train_l1, self.val_l1):
                w.writerow([row[0], f"{row[1]:.8g}", f"{row[2]:.8g}"])


def _arrays(segments, input_mode, ecg_scale):
    x = np.stack([select_inputs(s, input_mode) for s in segments]).astype(np.float32)
    y = (np.stack([s.ecg for s in segments])[:, None, :] / ecg_scale).astype(np.float32)
    return x, y


def mean_l1(model, x, y, batch_size=64):
    total = 0.0
    for i in range(0, len(x), batch_size):
        pred = model(x[i : i + batch_size], training=False).data
        total += np.abs(pred.astype(np.float64) - y[i : i + batch_size]).sum()
    return total / y.size


def config_hash(ucfg, tcfg):
    blob = json.dumps({"unet": asdict(ucfg), "train": asdict(tcfg)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def train(model, train_segments, val_segments, tcfg, ecg_scale=1.0, progress=None):
    """Minimize L1 with Adam; return the epoch with the lowest validation L1.

    Targets are ``segment.ecg / ecg_scale``. Ties in validation L1 keep the
    earliest epoch. Training stops after ``patience`` epochs without
    improvement or at ``max_epochs``.
    """
    tcfg.validate()
    if not train_segments or not val_segments:
        raise ValueError("training and validation sets must both be non-empty")
    if tcfg.in_channels != model.cfg.in_channels:
        raise ValueError(f"mode {tcfg.input_mode} needs {tcfg.in_channels} input channels")
    x_tr, y_tr = _arrays(train_segments, tcfg.input_mode, ecg_scale)
    x_va, y_va = _arrays(val_segments, tcfg.input_mode, ecg_scale)
    rng = np.random.default_rng(tcfg.seed)
    opt = nc.Adam(model.parameters(), lr=tcfg.lr, betas=tcfg.betas, eps=tcfg.eps)
    opt.step_count = model.step_count
    hist = History()
    best = None
    best_val = np.inf
    stale = 0
    n = len(x_tr)
    for epoch in range(tcfg.max_epochs):
        order = rng.permutation(n)
        seen = 0.0
        for i in range(0, n, tcfg.batch_size):
            idx = np.sort(order[i : i + tcfg.batch_size])
            if len(idx) < 2 and n > 1:
                continue  # a lone example breaks batch statistics
            opt.zero_grad()
            loss = nc.l1_loss(model(x_tr[idx], training=True), nc.Tensor(y_tr[idx]))
            loss.backward()
            opt.step()
            model.step_count = opt.step_count
            seen += float(loss.data) * len(idx)
        train_l1 = seen / n
        val_l1 = mean_l1(model, x_va, y_va)
        hist.epochs.append(epoch)
        hist.train_l1.append(train_l1)
        hist.val_l1.append(val_l1)
        if progress:
            progress(epoch, train_l1, val_l1)
        logger.info("epoch %d train_l1 %.5f val_l1 %.5f", epoch, train_l1, val_l1)
        if val_l1 < best_val:
            best_val = val_l1
            best = model.copy()
            hist.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    return best, hist
