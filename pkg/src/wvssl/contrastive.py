"""Contrastive training core: the temperature-scaled pairwise loss over
cosine similarities, the step/epoch loop with periodic sub-sample redraws,
and deterministic embedding extraction.

Embeddings enter the loss in interleaved pair order: rows (2k, 2k+1) are the
two views of source image k. The per-row loss is

    l_i = -log( exp(sim(z_i, z_j)/tau) / sum_{k != i} exp(sim(z_i, z_k)/tau) )

with j the row paired with i, and the total loss is the mean of l_i over all
2N rows. Rows are log-sum-exp stabilized, which is mathematically exact.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from .augment import make_views
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .encoder import (Encoder, EncoderConfig, arrays_to_state, build_encoder,
                      state_to_arrays)
from .errors import ConfigError, DataError, TrainingError
from .store import EmbeddingMatrix, Manifest, load_unit_images


def cosine_similarity(u, v) -> float:
    """Inner product of the two vectors over the product of their norms."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DataError("cosine similarity is undefined for a zero vector")
    return float(np.dot(u, v) / (nu * nv))


def nt_xent_loss(z: torch.Tensor, tau: float) -> torch.Tensor:
    """Mean contrastive loss over all 2N rows of pair-interleaved embeddings.

    Differentiable in z; raises on invalid temperature or degenerate rows.
    """
    if tau <= 0.0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[0] % 2 != 0:
        raise DataError(f"expected (2N, D) embeddings with N >= 1, got {tuple(z.shape)}")
    norms = torch.linalg.vector_norm(z, dim=1, keepdim=True)
    if bool((norms == 0).any()):
        raise DataError("zero embedding row: cosine similarity undefined")
    zn = z / norms
    logits = (zn @ zn.T) / tau
    n2 = z.shape[0]
    eye = torch.eye(n2, dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(eye, float("-inf"))
    partner = torch.arange(n2, device=z.device) ^ 1
    positives = logits[torch.arange(n2, device=z.device), partner]
    return (torch.logsumexp(logits, dim=1) - positives).mean()


def nt_xent_loss_and_grad(z, tau: float):
    """Loss value and its analytic gradient with respect to the embeddings."""
    zt = torch.as_tensor(np.asarray(z, dtype=np.float64)).clone().requires_grad_(True)
    loss = nt_xent_loss(zt, tau)
    loss.backward()
    return float(loss.item()), zt.grad.detach().numpy().copy()


def interleave_pairs(za: torch.Tensor, zb: torch.Tensor) -> torch.Tensor:
    """Stack two view batches into pair-interleaved rows (2k, 2k+1)."""
    if za.shape != zb.shape:
        raise DataError("view batches must have identical shapes")
    return torch.stack([za, zb], dim=1).reshape(2 * za.shape[0], *za.shape[1:])


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    base_lr: float | None = None  # None: 0.3 * batch_size / 256
    momentum: float = 0.9
    weight_decay: float = 1e-6
    warmup_epochs: int = 10
    temperature: float = 0.5
    subsample_fraction: float = 0.3
    redraw_period: int = 20
    checkpoint_period: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.temperature <= 0.0:
            raise ConfigError("temperature must be positive")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ConfigError("subsample_fraction must be in (0, 1]")
        if self.redraw_period < 1:
            raise ConfigError("redraw_period must be >= 1")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")

    @property
    def lr(self) -> float:
        if self.base_lr is not None:
            return self.base_lr
        return 0.3 * self.batch_size / 256.0


def learning_rate_at(config: TrainConfig, epoch_float: float) -> float:
    """Linear warmup then cosine decay, in fractional-epoch time."""
    base = config.lr
    warm = min(config.warmup_epochs, config.epochs)
    if warm > 0 and epoch_float < warm:
        return base * epoch_float / warm
    span = max(config.epochs - warm, 1e-12)
    progress = min((epoch_float - warm) / span, 1.0)
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainState:
    model: Encoder
    optimizer: torch.optim.SGD
    config: TrainConfig
    encoder_config: EncoderConfig
    epoch: int = 0
    step: int = 0
    steps_per_epoch: int = 1


def init_train_state(encoder_config: EncoderConfig, config: TrainConfig,
                     steps_per_epoch: int = 1) -> TrainState:
    model = build_encoder(encoder_config, seed=config.seed)
    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr,
                                momentum=config.momentum,
                                weight_decay=config.weight_decay)
    return TrainState(model=model, optimizer=optimizer, config=config,
                      encoder_config=encoder_config,
                      steps_per_epoch=max(1, steps_per_epoch))


def train_step(state: TrainState, views_a: np.ndarray, views_b: np.ndarray) -> float:
    """One forward/backward/update over a pair of view batches; returns the
    scalar loss for logging."""
    model = state.model
    model.train()
    xa = torch.from_numpy(np.ascontiguousarray(views_a, dtype=np.float32))
    xb = torch.from_numpy(np.ascontiguousarray(views_b, dtype=np.float32))
    x = interleave_pairs(xa, xb)
    epoch_float = state.epoch + (state.step % state.steps_per_epoch) / state.steps_per_epoch
    lr = learning_rate_at(state.config, epoch_float)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.zero_grad()
    _, z = model(x)
    if bool((torch.linalg.vector_norm(z, dim=1) < 1e-12).any()):
        raise TrainingError("degenerate all-zero projection; check the projector")
    loss = nt_xent_loss(z, state.config.temperature)
    if not torch.isfinite(loss):
        with torch.no_grad():
            pnorm = sum(float(p.norm()) for p in model.parameters())
            diag = (f"non-finite loss at epoch {state.epoch} step {state.step}: "
                    f"lr={lr:.4g} param_norm={pnorm:.4g} "
                    f"z_norm_max={float(torch.linalg.vector_norm(z, dim=1).max()):.4g}")
        raise TrainingError(diag)
    loss.backward()
    state.optimizer.step()
    state.step += 1
    return float(loss.item())


def _derived_rng(seed: int, tag: int, *rest: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, tag, *rest])


def epoch_subsample(n: int, config: TrainConfig, epoch: int) -> np.ndarray:
    """Indices trained on during `epoch`: a without-replacement draw of the
    configured fraction, redrawn every redraw_period epochs."""
    size = max(1, int(round(config.subsample_fraction * n)))
    if size >= n:
        return np.arange(n)
    draw = epoch // config.redraw_period
    rng = _derived_rng(config.seed, 0x51, draw)
    return np.sort(rng.choice(n, size=size, replace=False))


def epoch_batches(n: int, config: TrainConfig, epoch: int):
    """Shuffled batch index lists for one epoch; batches of fewer than two
    images are dropped (a positive pair needs a counterpart)."""
    subsample = epoch_subsample(n, config, epoch)
    order = _derived_rng(config.seed, 0x0D, epoch).permutation(subsample)
    batches = []
    for start in range(0, len(order), config.batch_size):
        chunk = order[start:start + config.batch_size]
        if len(chunk) >= 2:
            batches.append(chunk)
    return batches


def _run_config_blob(state: TrainState, extra: dict | None = None) -> dict:
    blob = {
        "encoder": state.encoder_config.to_dict(),
        "train": asdict(state.config),
        "progress": {"epoch": state.epoch, "step": state.step,
                     "steps_per_epoch": state.steps_per_epoch},
        "seed": state.config.seed,
    }
    if extra:
        blob.update(extra)
    return blob


def state_to_checkpoint(state: TrainState, extra: dict | None = None) -> Checkpoint:
    momentum = {}
    param_names = {id(p): name for name, p in state.model.named_parameters()}
    for group in state.optimizer.param_groups:
        for p in group["params"]:
            buf = state.optimizer.state.get(p, {}).get("momentum_buffer")
            if buf is not None:
                momentum[f"momentum.{param_names[id(p)]}"] = (
                    buf.detach().cpu().numpy().copy())
    return Checkpoint(
        config=_run_config_blob(state, extra),
        tensors=state_to_arrays(state.model),
        optimizer=momentum,
        rng_state=bytes(torch.get_rng_state().numpy().tobytes()),
    )


def state_from_checkpoint(ckpt: Checkpoint) -> TrainState:
    encoder_config = EncoderConfig.from_dict(ckpt.config["encoder"])
    config = TrainConfig(**ckpt.config["train"])
    state = init_train_state(encoder_config, config)
    arrays_to_state(state.model, ckpt.tensors)
    progress = ckpt.config.get("progress", {})
    state.epoch = int(progress.get("epoch", 0))
    state.step = int(progress.get("step", 0))
    state.steps_per_epoch = int(progress.get("steps_per_epoch", 1))
    if ckpt.optimizer:
        by_name = dict(state.model.named_parameters())
        for key, arr in ckpt.optimizer.items():
            name = key.removeprefix("momentum.")
            if name not in by_name:
                raise DataError(f"checkpoint momentum for unknown parameter {name}")
            param = by_name[name]
            state.optimizer.state[param] = {
                "momentum_buffer": torch.from_numpy(arr.copy()).to(param.dtype)}
    if ckpt.rng_state:
        torch.set_rng_state(torch.from_numpy(
            np.frombuffer(ckpt.rng_state, dtype=np.uint8).copy()))
    return state


def model_from_checkpoint(path_or_ckpt) -> tuple[Encoder, dict]:
    ckpt = (path_or_ckpt if isinstance(path_or_ckpt, Checkpoint)
            else load_checkpoint(path_or_ckpt))
    encoder_config = EncoderConfig.from_dict(ckpt.config["encoder"])
    model = Encoder(encoder_config)
    arrays_to_state(model, ckpt.tensors)
    model.eval()
    return model, ckpt.config


def pretrain(manifest: Manifest, pool, train_config: TrainConfig,
             encoder_config: EncoderConfig, out_path,
             resume_from=None, log_path=None, quiet: bool = True,
             stop_after: int | None = None,
             extra_config: dict | None = None) -> Path:
    """Run the full pretraining loop and write the final checkpoint.

    Each epoch trains on a sub-sample of the corpus drawn by
    epoch_subsample; per-(epoch, batch) augmentation seeds are derived from
    the run seed, so a run stopped early (`stop_after`) and resumed from its
    checkpoint continues exactly as the uninterrupted run would have.
    """
    images, _, _ = load_unit_images(manifest, side=encoder_config.input_side)
    return pretrain_on_arrays(images, pool, train_config, encoder_config,
                              out_path, resume_from=resume_from,
                              log_path=log_path, quiet=quiet,
                              stop_after=stop_after, extra_config=extra_config)


def pretrain_on_arrays(images: np.ndarray, pool, train_config: TrainConfig,
                       encoder_config: EncoderConfig, out_path,
                       resume_from=None, log_path=None, quiet: bool = True,
                       stop_after: int | None = None,
                       extra_config: dict | None = None) -> Path:
    if images.shape[0] < 2:
        raise DataError("pretraining needs at least 2 images")
    if images.shape[1] != encoder_config.input_side:
        raise DataError(
            f"images are {images.shape[1]}px but the encoder expects "
            f"{encoder_config.input_side}px")
    n = images.shape[0]
    if resume_from is not None:
        state = state_from_checkpoint(load_checkpoint(resume_from))
        if state.encoder_config != encoder_config:
            raise ConfigError("resume checkpoint encoder config differs")
        if state.config != train_config:
            raise ConfigError("resume checkpoint train config differs")
    else:
        state = init_train_state(encoder_config, train_config)
    state.steps_per_epoch = max(1, len(epoch_batches(n, train_config, 0)))

    last_epoch = train_config.epochs
    if stop_after is not None:
        last_epoch = min(last_epoch, stop_after)

    log_fh = open(log_path, "a") if log_path else None
    out_path = Path(out_path)
    try:
        for epoch in range(state.epoch, last_epoch):
            state.epoch = epoch
            batches = epoch_batches(n, train_config, epoch)
            state.steps_per_epoch = max(1, len(batches))
            for b, batch_idx in enumerate(batches):
                views = make_views(images[batch_idx], pool,
                                   seed=_batch_seed(train_config.seed, epoch, b))
                loss = train_step(state, views.views_a, views.views_b)
                record = {"epoch": epoch, "step": state.step, "loss": loss,
                          "lr": learning_rate_at(
                              state.config, epoch + b / max(1, len(batches))),
                          "wall_time": time.time()}
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
                    log_fh.flush()
                if not quiet:
                    print(f"epoch {epoch} step {state.step} "
                          f"loss {loss:.4f}", flush=True)
            state.epoch = epoch + 1
            if (epoch + 1) % train_config.checkpoint_period == 0:
                save_checkpoint(out_path, state_to_checkpoint(state, extra_config))
        save_checkpoint(out_path, state_to_checkpoint(state, extra_config))
    finally:
        if log_fh:
            log_fh.close()
    return out_path


def _batch_seed(seed: int, epoch: int, batch: int) -> int:
    mix = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 0xA6, epoch, batch])
    return int(mix.generate_state(1, np.uint64)[0])


def embed_images(model: Encoder, images: np.ndarray, ids, space: str = "backbone",
                 batch_size: int = 64) -> EmbeddingMatrix:
    """Deterministic forward pass over already-loaded unit-range images."""
    if space not in ("backbone", "projected"):
        raise ConfigError(f"unknown embedding space {space!r}")
    model.eval()
    n = images.shape[0]
    # single-sample conv batches take a different kernel path and drift in the
    # last float bit; keep every chunk >= 2 so per-image results are identical
    # no matter how a dataset is sharded
    batch_size = max(2, batch_size)
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] == 1:
        starts[-1] = n - 2
    chunks = []
    with torch.no_grad():
        for i, start in enumerate(starts):
            end = starts[i + 1] if i + 1 < len(starts) else n
            batch = images[start:end]
            duplicated = batch.shape[0] == 1
            if duplicated:
                batch = np.concatenate([batch, batch])
            x = torch.from_numpy(
                np.repeat(batch[:, None, :, :], 3, axis=1).astype(np.float32))
            h, z = model(x)
            out = (h if space == "backbone" else z).numpy()
            chunks.append(out[:1] if duplicated else out)
    rows = np.concatenate(chunks, axis=0)
    return EmbeddingMatrix(rows=rows, ids=list(ids), space=space)


def embed_dataset(checkpoint_path, manifest: Manifest, space: str = "backbone",
                  batch_size: int = 64, skip_missing: bool = False) -> EmbeddingMatrix:
    """Embed every manifest record in order with no augmentation; images are
    center-cropped or padded to the encoder's input side."""
    model, _ = model_from_checkpoint(checkpoint_path)
    side = model.config.input_side
    images, ids, _ = load_unit_images(manifest, side=side, skip_missing=skip_missing)
    return embed_images(model, images, ids, space=space, batch_size=batch_size)
