"""Training loop, early stopping, and binary checkpoints.

Checkpoints use a tagged container: magic "CVC1", a JSON header listing
every tensor (name, dtype, shape, byte offset) plus scalar state (epoch,
best validation loss, optimizer step, RNG state), then the raw
little-endian tensor payloads. Loading restores training bit-exactly, so
a resumed run reproduces the losses of an uninterrupted one.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import SampleRecord, apply_mask, build_input, sample_mask
from ..errors import DataError
from . import engine
from .optim import Adam
from .unet import UNet, UNetSpec

CKPT_MAGIC = b"CVC1"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 5000
    patience: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    resample_masks: bool = True
    mic_choices: tuple[int, ...] = (5, 10, 15, 35, 55)

    def __post_init__(self):
        object.__setattr__(self, "mic_choices",
                           tuple(int(m) for m in self.mic_choices))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError("patience must lie in [1, max_epochs]")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not self.mic_choices or any(m < 1 for m in self.mic_choices):
            raise ValueError("mic_choices must be positive")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class History:
    epochs: list[EpochStats] = field(default_factory=list)
    stop_reason: str = "max_epochs"

    def append(self, stats: EpochStats) -> None:
        self.epochs.append(stats)

    @property
    def best_val(self) -> float:
        return min(e.val_loss for e in self.epochs)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss\n")
            for e in self.epochs:
                fh.write(f"{e.epoch},{e.train_loss!r},{e.val_loss!r}\n")


def _batch_arrays(records: list[SampleRecord], masks, dtype=np.complex64):
    xs, ys = [], []
    for rec, mask in zip(records, masks):
        masked = apply_mask(rec.field, mask)
        xs.append(build_input(masked, mask, dtype=dtype))
        ys.append(rec.field.data.astype(dtype))
    return np.stack(xs), np.stack(ys)


def _forward_loss(model: UNet, x: np.ndarray, y: np.ndarray,
                  training: bool) -> engine.ComplexTensor:
    pred = model.forward(x, training=training)
    return engine.l1_loss(pred, y)


def evaluate_loss(model: UNet, records: list[SampleRecord],
                  batch_size: int = 32) -> float:
    """Mean per-sample loss over records, stored masks, eval-mode stats."""
    if not records:
        raise ValueError("no records to evaluate")
    total = 0.0
    with engine.no_grad():
        for i in range(0, len(records), batch_size):
            chunk = records[i:i + batch_size]
            x, y = _batch_arrays(chunk, [r.mask for r in chunk],
                                 dtype=model.dtype)
            loss = _forward_loss(model, x, y, training=False)
            total += float(loss.values.real)
    return total / len(records)


def _snapshot(model: UNet) -> dict[str, np.ndarray]:
    state = {name: p.values.copy() for name, p in model.parameters().items()}
    state.update({name: b.copy() for name, b in model.buffers().items()})
    return state


def _restore(model: UNet, state: dict[str, np.ndarray]) -> None:
    for name, p in model.parameters().items():
        p.values = np.array(state[name])
    model.load_buffers(state)


def train(model: UNet, train_records: list[SampleRecord],
          val_records: list[SampleRecord], config: TrainConfig,
          checkpoint_dir=None, resume_from=None, on_epoch=None) -> History:
    """Fit the model; returns the history with the best weights restored.

    Masks for training batches are redrawn from the loop RNG each epoch
    when config.resample_masks is set (mic count uniform over
    config.mic_choices); validation always uses each record's stored
    mask. Checkpoints (when checkpoint_dir is given): `last.ckpt` after
    every epoch for resuming, `best.ckpt` whenever validation improves.
    """
    if not train_records or not val_records:
        raise ValueError("need non-empty train and validation sets")
    opt = Adam(model.parameters(), lr=config.lr, beta1=config.beta1,
               beta2=config.beta2, eps=config.eps)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7A17]))
    history = History()
    best_val = np.inf
    best_state = _snapshot(model)
    since_best = 0
    start_epoch = 1

    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        if payload["spec"] != spec_dict(model.spec):
            raise DataError("checkpoint architecture does not match the model")
        _restore(model, {**payload["params"], **payload["buffers"]})
        opt.load_state_tensors(payload["opt"], payload["meta"]["adam_t"])
        rng.bit_generator.state = payload["meta"]["rng_state"]
        best_val = payload["meta"]["best_val"]
        since_best = payload["meta"]["since_best"]
        best_state = payload["best"] if payload["best"] else _snapshot(model)
        start_epoch = payload["meta"]["epoch"] + 1
        for row in payload["meta"]["history"]:
            history.append(EpochStats(*row))

    n = len(train_records)
    for epoch in range(start_epoch, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            chunk = [train_records[i] for i in idx]
            if config.resample_masks:
                masks = []
                for rec in chunk:
                    m = config.mic_choices[int(rng.integers(len(config.mic_choices)))]
                    masks.append(sample_mask(rng, m, rec.room.grid_w,
                                             rec.room.grid_h))
            else:
                masks = [rec.mask for rec in chunk]
            x, y = _batch_arrays(chunk, masks, dtype=model.dtype)
            loss = _forward_loss(model, x, y, training=True)
            total += float(loss.values.real)
            scaled = engine.mul(loss, 1.0 / len(chunk))
            opt.zero_grad()
            scaled.backward()
            opt.step()
        train_loss = total / n
        val_loss = evaluate_loss(model, val_records, config.batch_size)
        history.append(EpochStats(epoch=epoch, train_loss=train_loss,
                                  val_loss=val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_state = _snapshot(model)
            since_best = 0
            if checkpoint_dir is not None:
                save_checkpoint(Path(checkpoint_dir) / "best.ckpt", model, opt,
                                rng, epoch, best_val, since_best, history,
                                best_state=None)
        else:
            since_best += 1
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / "last.ckpt", model, opt,
                            rng, epoch, best_val, since_best, history,
                            best_state=best_state)
        if on_epoch is not None:
            on_epoch(history.epochs[-1])
        if since_best >= config.patience:
            history.stop_reason = "patience"
            break
    else:
        history.stop_reason = "max_epochs"
    _restore(model, best_state)
    return history


def spec_dict(spec: UNetSpec) -> dict:
    return {"k_freqs": spec.k_freqs,
            "encoder_filters": list(spec.encoder_filters)}


def _tensor_entries(model: UNet, opt: Adam | None,
                    best_state: dict[str, np.ndarray] | None):
    entries: list[tuple[str, str, np.ndarray]] = []
    for name, p in model.parameters().items():
        entries.append((name, "param", p.values))
    for name, b in model.buffers().items():
        entries.append((name, "buffer", b))
    if opt is not None:
        for name, arr in opt.state_tensors().items():
            entries.append((name, "opt", arr))
    if best_state is not None:
        for name, arr in best_state.items():
            entries.append((f"best.{name}", "best", arr))
    return entries


def save_checkpoint(path, model: UNet, opt: Adam | None,
                    rng: np.random.Generator | None, epoch: int,
                    best_val: float, since_best: int, history: History,
                    best_state: dict[str, np.ndarray] | None) -> None:
    entries = _tensor_entries(model, opt, best_state)
    tensor_meta = []
    offset = 0
    blobs = []
    for name, role, arr in entries:
        arr = np.ascontiguousarray(arr)
        blob = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        tensor_meta.append({
            "name": name, "role": role, "dtype": arr.dtype.str.replace(">", "<"),
            "shape": list(arr.shape), "offset": offset, "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    meta = {
        "version": CKPT_VERSION,
        "spec": spec_dict(model.spec),
        "epoch": int(epoch),
        "best_val": float(best_val),
        "since_best": int(since_best),
        "adam_t": int(opt.t) if opt is not None else 0,
        "adam": None if opt is None else {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
        },
        "rng_state": None if rng is None else rng.bit_generator.state,
        "history": [[e.epoch, e.train_loss, e.val_loss] for e in history.epochs],
        "tensors": tensor_meta,
    }
    header = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> dict:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:4] != CKPT_MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(blob[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint header: {exc}") from exc
    base = 12 + hlen
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    opt: dict[str, np.ndarray] = {}
    best: dict[str, np.ndarray] = {}
    for tm in meta["tensors"]:
        start = base + tm["offset"]
        end = start + tm["nbytes"]
        if end > len(blob):
            raise DataError(f"{path}: truncated tensor payload for {tm['name']}")
        arr = np.frombuffer(blob[start:end], dtype=np.dtype(tm["dtype"]))
        arr = arr.reshape(tm["shape"]).copy()
        role = tm["role"]
        if role == "param":
            params[tm["name"]] = arr
        elif role == "buffer":
            buffers[tm["name"]] = arr
        elif role == "opt":
            opt[tm["name"]] = arr
        elif role == "best":
            best[tm["name"].removeprefix("best.")] = arr
        else:
            raise DataError(f"{path}: unknown tensor role {role!r}")
    rng_state = meta["rng_state"]
    meta_out = {
        "epoch": meta["epoch"], "best_val": meta["best_val"],
        "since_best": meta["since_best"], "adam_t": meta["adam_t"],
        "rng_state": rng_state, "history": meta["history"],
        "adam": meta["adam"], "version": meta["version"],
    }
    return {"spec": meta["spec"], "params": params, "buffers": buffers,
            "opt": opt, "best": best, "meta": meta_out}


def model_from_checkpoint(path, dtype=np.complex64) -> UNet:
    """Rebuild a model (inference-ready, best or current weights) from disk."""
    payload = load_checkpoint(path)
    spec = UNetSpec(k_freqs=payload["spec"]["k_freqs"],
                    encoder_filters=tuple(payload["spec"]["encoder_filters"]))
    model = UNet(spec, dtype=dtype)
    _restore(model, {**payload["params"], **payload["buffers"]})
    return model


def predict_field(model: UNet, record: SampleRecord,
                  mask=None) -> np.ndarray:
    """Eval-mode reconstruction of one record -> (grid_w, grid_h, K) array."""
    mask = record.mask if mask is None else mask
    masked = apply_mask(record.field, mask)
    x = build_input(masked, mask, dtype=model.dtype)[None]
    with engine.no_grad():
        out = model.forward(x, training=False)
    return out.values[0]
