"""Twin-autoencoder binary hashing over dense embeddings.

Two towers (context and candidate), no shared parameters.  Each tower:

* encoder: affine(d->d) + tanh, then affine(d->h) + tanh, output o in (-1, 1)^h
* decoder: affine(h->d) + tanh, then affine(d->d) linear, reconstruction E

Codes are sign-quantized at inference.  Training minimizes, per pair and
averaged over the batch,

    reconstruction + (o_ctx . o_can - h*S)^2 + gamma_t * quantization

where S in {0,1} labels the pair, the quantization term pulls components of o
toward +-1 with a detached sign target, and gamma_t ramps linearly over the
minibatches of each epoch.

Model file: magic ``DSHCMDL1`` | u32-LE d | u32-LE h | parameter tensors
as float32-LE row-major in fixed order: context tower enc W1(d,d), b1(d),
enc W2(d,h), b2(h), dec V1(h,d), c1(d), dec V2(d,d), c2(d); then the
candidate tower in the same order.  Affine maps use the row-vector
convention: y = x @ W + b.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import EmbeddingStore, PairExample

MODEL_MAGIC = b"DSHCMDL1"

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8

_EXPORT_CHUNK = 4096

_TOWER_FIELDS = ("enc_w1", "enc_b1", "enc_w2", "enc_b2", "dec_w1", "dec_b1", "dec_w2", "dec_b2")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class Tower:
    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    dec_w1: np.ndarray
    dec_b1: np.ndarray
    dec_w2: np.ndarray
    dec_b2: np.ndarray


@dataclass
class HashModel:
    d: int
    h: int
    ctx: Tower
    can: Tower

    def tower(self, side: str) -> Tower:
        if side == "ctx":
            return self.ctx
        if side == "can":
            return self.can
        raise ValueError(f"side must be 'ctx' or 'can', got {side!r}")

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """All parameters in the declared (file) order."""
        out = []
        for side in ("ctx", "can"):
            tower = self.tower(side)
            for name in _TOWER_FIELDS:
                out.append((f"{side}.{name}", getattr(tower, name)))
        return out


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-3
    gamma_min: float = 1e-4
    gamma_max: float = 1e-1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 < self.gamma_min < self.gamma_max):
            raise ValueError("need 0 < gamma_min < gamma_max")


@dataclass(frozen=True)
class LossBreakdown:
    preserved: float
    hash: float
    quantization: float
    gamma: float

    @property
    def total(self) -> float:
        return self.preserved + self.hash + self.gamma * self.quantization


@dataclass(frozen=True)
class TraceEntry:
    epoch: int
    step: int  # minibatch index within the epoch
    gamma: float
    preserved: float
    hash: float
    quantization: float
    total: float


@dataclass
class TrainResult:
    model: "HashModel"
    trace: list[TraceEntry] = field(default_factory=list)

    def epoch_mean_total(self) -> list[float]:
        epochs: dict[int, list[float]] = {}
        for entry in self.trace:
            epochs.setdefault(entry.epoch, []).append(entry.total)
        return [float(np.mean(epochs[e])) for e in sorted(epochs)]


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _init_tower(rng: np.random.Generator, d: int, h: int) -> Tower:
    return Tower(
        enc_w1=_xavier(rng, d, d),
        enc_b1=np.zeros(d),
        enc_w2=_xavier(rng, d, h),
        enc_b2=np.zeros(h),
        dec_w1=_xavier(rng, h, d),
        dec_b1=np.zeros(d),
        dec_w2=_xavier(rng, d, d),
        dec_b2=np.zeros(d),
    )


def init_hash_model(d: int, h: int, seed: int = 0) -> HashModel:
    """Xavier-uniform initialized model; towers drawn from one seeded stream."""
    if d < 1 or h < 1:
        raise ValueError("d and h must be >= 1")
    rng = np.random.default_rng(seed)
    return HashModel(d=d, h=h, ctx=_init_tower(rng, d, h), can=_init_tower(rng, d, h))


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} must have dimension {dim}, got shape {x.shape}")
    return x, single


def encode(model: HashModel, side: str, e: np.ndarray) -> np.ndarray:
    """Dense embedding(s) -> real code(s) o in (-1, 1)^h."""
    tower = model.tower(side)
    x, single = _as_batch(e, model.d, "embedding")
    z1 = np.tanh(x @ tower.enc_w1 + tower.enc_b1)
    o = np.tanh(z1 @ tower.enc_w2 + tower.enc_b2)
    return o[0] if single else o


def decode(model: HashModel, side: str, o: np.ndarray) -> np.ndarray:
    """Real code(s) -> reconstructed embedding(s) E."""
    tower = model.tower(side)
    x, single = _as_batch(o, model.h, "code")
    y1 = np.tanh(x @ tower.dec_w1 + tower.dec_b1)
    recon = y1 @ tower.dec_w2 + tower.dec_b2
    return recon[0] if single else recon


def sign_quantize(o: np.ndarray) -> np.ndarray:
    """Component-wise sign with sign(0) = +1; values in {-1, +1} as int8."""
    o = np.asarray(o)
    return np.where(o >= 0, 1, -1).astype(np.int8)


def preserved_loss(e_ctx, recon_ctx, e_can, recon_can) -> float:
    """Squared-Euclidean reconstruction error summed over both towers."""
    e_ctx = np.asarray(e_ctx, dtype=np.float64)
    e_can = np.asarray(e_can, dtype=np.float64)
    recon_ctx = np.asarray(recon_ctx, dtype=np.float64)
    recon_can = np.asarray(recon_can, dtype=np.float64)
    if e_ctx.shape != recon_ctx.shape or e_can.shape != recon_can.shape:
        raise ValueError("embedding/reconstruction shape mismatch")
    return float(np.sum((e_ctx - recon_ctx) ** 2) + np.sum((e_can - recon_can) ** 2))


def hash_loss(o_ctx, o_can, label: int, h: int) -> float:
    """(o_ctx . o_can - h*S)^2 with S in {0, 1}."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    o_ctx = np.asarray(o_ctx, dtype=np.float64)
    o_can = np.asarray(o_can, dtype=np.float64)
    if o_ctx.shape != (h,) or o_can.shape != (h,):
        raise ValueError(f"codes must have length {h}")
    return float((o_ctx @ o_can - h * label) ** 2)


def quantization_loss(o_ctx, o_can) -> float:
    """Squared distance of both codes to their sign targets (targets detached)."""
    o_ctx = np.asarray(o_ctx, dtype=np.float64)
    o_can = np.asarray(o_can, dtype=np.float64)
    return float(
        np.sum((sign_quantize(o_ctx) - o_ctx) ** 2) + np.sum((sign_quantize(o_can) - o_can) ** 2)
    )


def gamma_schedule(t: int, total_steps: int, gamma_min: float, gamma_max: float) -> float:
    """Linear ramp gamma_min -> gamma_max over the minibatches of one epoch."""
    if not 0 <= t < total_steps:
        raise ValueError(f"step {t} outside [0, {total_steps})")
    return gamma_min + (gamma_max - gamma_min) * t / total_steps


def resolve_batch(
    pairs: list[PairExample], ctx_store: EmbeddingStore, can_store: EmbeddingStore
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gather (e_ctx, e_can, labels) float64 arrays for a batch of pairs."""
    ctx_ids = np.array([p.ctx_id for p in pairs], dtype=np.int64)
    can_ids = np.array([p.can_id for p in pairs], dtype=np.int64)
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    e_ctx = ctx_store.vectors[ctx_ids].astype(np.float64)
    e_can = can_store.vectors[can_ids].astype(np.float64)
    return e_ctx, e_can, labels


def _forward_tower(tower: Tower, x: np.ndarray) -> dict[str, np.ndarray]:
    a1 = x @ tower.enc_w1 + tower.enc_b1
    z1 = np.tanh(a1)
    a2 = z1 @ tower.enc_w2 + tower.enc_b2
    o = np.tanh(a2)
    g1 = o @ tower.dec_w1 + tower.dec_b1
    y1 = np.tanh(g1)
    recon = y1 @ tower.dec_w2 + tower.dec_b2
    return {"x": x, "z1": z1, "o": o, "y1": y1, "recon": recon}


def _loss_terms(
    ctx_fwd: dict[str, np.ndarray],
    can_fwd: dict[str, np.ndarray],
    labels: np.ndarray,
    h: int,
    gamma: float,
) -> tuple[LossBreakdown, np.ndarray]:
    batch = labels.shape[0]
    lp = (
        np.sum((ctx_fwd["x"] - ctx_fwd["recon"]) ** 2)
        + np.sum((can_fwd["x"] - can_fwd["recon"]) ** 2)
    ) / batch
    dots = np.einsum("ij,ij->i", ctx_fwd["o"], can_fwd["o"])
    residual = dots - h * labels
    lh = np.sum(residual**2) / batch
    lq = (
        np.sum((sign_quantize(ctx_fwd["o"]) - ctx_fwd["o"]) ** 2)
        + np.sum((sign_quantize(can_fwd["o"]) - can_fwd["o"]) ** 2)
    ) / batch
    return LossBreakdown(float(lp), float(lh), float(lq), gamma), residual


def total_loss(
    model: HashModel,
    e_ctx: np.ndarray,
    e_can: np.ndarray,
    labels: np.ndarray,
    gamma: float,
) -> tuple[float, LossBreakdown]:
    """Batch-mean combined loss with its per-term breakdown."""
    e_ctx, _ = _as_batch(e_ctx, model.d, "context embeddings")
    e_can, _ = _as_batch(e_can, model.d, "candidate embeddings")
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    if e_ctx.shape[0] != labels.shape[0] or e_can.shape[0] != labels.shape[0]:
        raise ValueError("batch size mismatch between embeddings and labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    breakdown, _ = _loss_terms(
        _forward_tower(model.ctx, e_ctx), _forward_tower(model.can, e_can), labels, model.h, gamma
    )
    return breakdown.total, breakdown


def _backward_tower(
    tower: Tower, fwd: dict[str, np.ndarray], d_recon: np.ndarray, d_o_extra: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients for one tower given dL/d_recon and the non-decoder dL/d_o."""
    y1 = fwd["y1"]
    o = fwd["o"]
    z1 = fwd["z1"]
    x = fwd["x"]
    grads: dict[str, np.ndarray] = {}
    grads["dec_w2"] = y1.T @ d_recon
    grads["dec_b2"] = d_recon.sum(axis=0)
    d_y1 = d_recon @ tower.dec_w2.T
    d_g1 = d_y1 * (1.0 - y1**2)
    grads["dec_w1"] = o.T @ d_g1
    grads["dec_b1"] = d_g1.sum(axis=0)
    d_o = d_g1 @ tower.dec_w1.T + d_o_extra
    d_a2 = d_o * (1.0 - o**2)
    grads["enc_w2"] = z1.T @ d_a2
    grads["enc_b2"] = d_a2.sum(axis=0)
    d_z1 = d_a2 @ tower.enc_w2.T
    d_a1 = d_z1 * (1.0 - z1**2)
    grads["enc_w1"] = x.T @ d_a1
    grads["enc_b1"] = d_a1.sum(axis=0)
    return grads


def loss_and_gradients(
    model: HashModel,
    e_ctx: np.ndarray,
    e_can: np.ndarray,
    labels: np.ndarray,
    gamma: float,
) -> tuple[float, LossBreakdown, dict[str, np.ndarray]]:
    """Analytic gradients of the batch-mean loss for every parameter.

    The sign targets of the quantization term are treated as constants.
    """
    e_ctx, _ = _as_batch(e_ctx, model.d, "context embeddings")
    e_can, _ = _as_batch(e_can, model.d, "candidate embeddings")
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    batch = labels.shape[0]
    ctx_fwd = _forward_tower(model.ctx, e_ctx)
    can_fwd = _forward_tower(model.can, e_can)
    breakdown, residual = _loss_terms(ctx_fwd, can_fwd, labels, model.h, gamma)

    d_recon_ctx = 2.0 * (ctx_fwd["recon"] - e_ctx) / batch
    d_recon_can = 2.0 * (can_fwd["recon"] - e_can) / batch
    scale = 2.0 * residual[:, None] / batch
    d_o_ctx = scale * can_fwd["o"] + gamma * 2.0 * (ctx_fwd["o"] - sign_quantize(ctx_fwd["o"])) / batch
    d_o_can = scale * ctx_fwd["o"] + gamma * 2.0 * (can_fwd["o"] - sign_quantize(can_fwd["o"])) / batch

    grads: dict[str, np.ndarray] = {}
    for side, fwd, d_recon, d_o in (
        ("ctx", ctx_fwd, d_recon_ctx, d_o_ctx),
        ("can", can_fwd, d_recon_can, d_o_can),
    ):
        tower_grads = _backward_tower(model.tower(side), fwd, d_recon, d_o)
        for name, grad in tower_grads.items():
            grads[f"{side}.{name}"] = grad
    return breakdown.total, breakdown, grads


class _Adam:
    def __init__(self, params: list[tuple[str, np.ndarray]], lr: float):
        self.lr = lr
        self.step = 0
        self.m = {name: np.zeros_like(p) for name, p in params}
        self.v = {name: np.zeros_like(p) for name, p in params}

    def update(self, params: list[tuple[str, np.ndarray]], grads: dict[str, np.ndarray]) -> None:
        self.step += 1
        bias1 = 1.0 - _ADAM_BETA1**self.step
        bias2 = 1.0 - _ADAM_BETA2**self.step
        for name, p in params:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= _ADAM_BETA1
            m += (1.0 - _ADAM_BETA1) * g
            v *= _ADAM_BETA2
            v += (1.0 - _ADAM_BETA2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + _ADAM_EPS)


def train(
    model: HashModel,
    ctx_store: EmbeddingStore,
    can_store: EmbeddingStore,
    pairs: list[PairExample],
    config: TrainConfig,
) -> TrainResult:
    """Minibatch training with seeded shuffling; deterministic for a fixed seed.

    The quantization weight restarts its ramp at every epoch.
    """
    if not pairs:
        raise ValueError("no training pairs")
    if ctx_store.d != model.d or can_store.d != model.d:
        raise ValueError("store dimension does not match model dimension")
    ctx_ids = np.array([p.ctx_id for p in pairs], dtype=np.int64)
    can_ids = np.array([p.can_id for p in pairs], dtype=np.int64)
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    e_ctx_all = ctx_store.vectors.astype(np.float64)
    e_can_all = can_store.vectors.astype(np.float64)

    n = len(pairs)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    optimizer = _Adam(params, config.learning_rate)
    trace: list[TraceEntry] = []

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        for t in range(steps_per_epoch):
            batch_idx = perm[t * config.batch_size : (t + 1) * config.batch_size]
            gamma = gamma_schedule(t, steps_per_epoch, config.gamma_min, config.gamma_max)
            # a diverging model overflows inside backward; the finite check below reports it
            with np.errstate(over="ignore", invalid="ignore"):
                total, breakdown, grads = loss_and_gradients(
                    model,
                    e_ctx_all[ctx_ids[batch_idx]],
                    e_can_all[can_ids[batch_idx]],
                    labels[batch_idx],
                    gamma,
                )
            if not math.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss {total} at epoch {epoch} step {t} "
                    f"(preserved={breakdown.preserved}, hash={breakdown.hash}, "
                    f"quantization={breakdown.quantization})"
                )
            optimizer.update(params, grads)
            trace.append(
                TraceEntry(
                    epoch,
                    t,
                    gamma,
                    breakdown.preserved,
                    breakdown.hash,
                    breakdown.quantization,
                    total,
                )
            )
    return TrainResult(model, trace)


def export_codes(model: HashModel, side: str, store: EmbeddingStore) -> np.ndarray:
    """Sign-quantized codes for every store row, order preserved; (n, h) int8."""
    if store.d != model.d:
        raise ValueError(f"store dimension {store.d} does not match model dimension {model.d}")
    out = np.empty((store.n, model.h), dtype=np.int8)
    for start in range(0, store.n, _EXPORT_CHUNK):
        stop = min(start + _EXPORT_CHUNK, store.n)
        chunk = store.vectors[start:stop].astype(np.float64)
        out[start:stop] = sign_quantize(encode(model, side, chunk))
    return out


class ModelFormatError(ValueError):
    """Malformed model file."""


def save_model(model: HashModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", model.d, model.h))
        for _, p in model.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def _tower_shapes(d: int, h: int) -> list[tuple[int, ...]]:
    return [(d, d), (d,), (d, h), (h,), (h, d), (d,), (d, d), (d,)]


def load_model(path: str | Path) -> HashModel:
    """Read a model file; parameters come back as float64 upcast from f32."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: bad magic, not a model file")
    d, h = struct.unpack_from("<II", data, 8)
    if d < 1 or h < 1:
        raise ModelFormatError(f"{path}: invalid dimensions d={d}, h={h}")
    shapes = _tower_shapes(d, h) * 2
    need = 16 + sum(int(np.prod(s)) for s in shapes) * 4
    if len(data) != need:
        raise ModelFormatError(f"{path}: expected {need} bytes, got {len(data)}")
    offset = 16
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        tensors.append(arr.reshape(shape).astype(np.float64))
        offset += count * 4
    ctx = Tower(*tensors[:8])
    can = Tower(*tensors[8:])
    return HashModel(d=d, h=h, ctx=ctx, can=can)
