"""Training loop, evaluation, checkpoint conversion and the ablation runner."""

from __future__ import annotations

import contextlib
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import PairedDataset, sample_batch
from .errors import ContractError, IngestError, NumericalError
from .losses import loss_parts, psnr, ssim
from .network import MSFSNet, NetworkParams, encode_output, forward
from .optim import AdamState, adamw_step, lr_at
from .tensor import Tensor

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["epoch", "lr", "loss_total", "loss_low", "loss_high", "loss_recon", "psnr"]


@dataclass
class TrainState:
    model: MSFSNet
    cfg: TrainConfig
    opt: AdamState = field(default_factory=AdamState)
    epoch: int = 0  # next epoch to run
    data_rng: np.random.Generator | None = None
    history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.data_rng is None:
            self.data_rng = np.random.default_rng([self.cfg.seed, 1])


# ------------------------------------------------------------ checkpoints


def state_to_checkpoint(st: TrainState) -> Checkpoint:
    entries = {}
    for name, p in st.model.named_parameters():
        entries[f"param/{name}"] = p.data
        if name in st.opt.m:
            entries[f"adam_m/{name}"] = st.opt.m[name]
            entries[f"adam_v/{name}"] = st.opt.v[name]
    meta = {
        "config": st.cfg.to_flat(),
        "step": st.opt.step,
        "epoch": st.epoch,
        "rng": st.data_rng.bit_generator.state,
    }
    return Checkpoint(entries, meta)


def state_from_checkpoint(ckpt: Checkpoint) -> TrainState:
    try:
        cfg = TrainConfig.from_flat(ckpt.meta["config"])
    except KeyError:
        raise ContractError("checkpoint has no config snapshot") from None
    dtype = np.float64 if cfg.float64 else np.float32
    with T.default_dtype(dtype):
        model = MSFSNet(cfg.network, seed=cfg.seed)
    opt = AdamState(step=int(ckpt.meta.get("step", 0)))
    for name, p in model.named_parameters():
        key = f"param/{name}"
        if key not in ckpt.entries:
            raise ContractError(f"checkpoint is missing parameter {name}")
        arr = ckpt.entries[key]
        if arr.shape != p.shape:
            raise ContractError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
        p.data = arr.copy()
        if f"adam_m/{name}" in ckpt.entries:
            opt.m[name] = ckpt.entries[f"adam_m/{name}"].copy()
            opt.v[name] = ckpt.entries[f"adam_v/{name}"].copy()
    rng = np.random.default_rng()
    if "rng" in ckpt.meta:
        rng.bit_generator.state = ckpt.meta["rng"]
    return TrainState(model, cfg, opt, int(ckpt.meta.get("epoch", 0)), rng)


def load_model(path: str | Path) -> MSFSNet:
    return state_from_checkpoint(load_checkpoint(path)).model


# ----------------------------------------------------------------- train


def _threads(single: bool):
    return threadpool_limits(1) if single else contextlib.nullcontext()


def _batches(n: int, batch: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for i in range(0, n, batch):
        yield perm[i : i + batch]


def train_step(st: TrainState, blurry: np.ndarray, sharp: np.ndarray, lr: float) -> dict[str, float]:
    """Forward, output re-encoding, loss, backward and one AdamW update."""
    model, cfg = st.model, st.cfg
    dt = T.get_default_dtype()
    x = Tensor(blurry.astype(dt, copy=False))
    gt = Tensor(sharp.astype(dt, copy=False))
    params = list(model.named_parameters())
    for _, p in params:
        p.zero_grad()
    T.clear_tape()
    out, taps = forward(x, model.params, model.cfg)
    w = cfg.loss_weights()
    if w.lambda1 > 0 or w.lambda2 > 0:
        encode_output(out, model.params, taps)
    parts = loss_parts(out, gt, taps, w)
    vals = parts.values()
    if not all(math.isfinite(v) for v in vals.values()):
        T.clear_tape()
        raise NumericalError(f"non-finite loss at step {st.opt.step + 1}: {vals}")
    T.backward(parts.total)
    adamw_step(params, st.opt, lr, cfg.beta1, cfg.beta2, cfg.eps_opt, cfg.weight_decay)
    out_np = np.clip(out.data, 0, 1)
    vals["psnr"] = float(np.mean([psnr(o, g) for o, g in zip(out_np, sharp)]))
    return vals


def train(
    dataset: PairedDataset,
    cfg: TrainConfig | None = None,
    out: str | Path | None = None,
    metrics_csv: str | Path | None = None,
    state: TrainState | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainState:
    """Run epochs until ``cfg.epochs`` (or ``cfg.max_steps`` optimizer steps).

    ``state`` resumes a previous run. With ``out`` set, a checkpoint is written
    every ``checkpoint_every`` epochs and at the end; on a non-finite loss the
    last good state is written to ``<out>.lastgood`` before re-raising.
    """
    if len(dataset) == 0:
        raise IngestError("dataset is empty")
    if state is None:
        cfg = cfg or TrainConfig()
        cfg.validate()
        dtype = np.float64 if cfg.float64 else np.float32
        with T.default_dtype(dtype):
            state = TrainState(MSFSNet(cfg.network, seed=cfg.seed), cfg)
    cfg = state.cfg
    dtype = np.float64 if cfg.float64 else np.float32
    crop = cfg.crop or None
    csv_fh = None
    if metrics_csv is not None:
        metrics_csv = Path(metrics_csv)
        metrics_csv.parent.mkdir(parents=True, exist_ok=True)
        fresh = not metrics_csv.exists() or state.epoch == 0
        csv_fh = metrics_csv.open("w" if fresh else "a", newline="")
        writer = csv.DictWriter(csv_fh, METRIC_COLUMNS)
        if fresh:
            writer.writeheader()

    try:
        with _threads(cfg.single_thread), T.default_dtype(dtype):
            while state.epoch < cfg.epochs:
                if cfg.max_steps and state.opt.step >= cfg.max_steps:
                    break
                lr = lr_at(state.epoch, cfg.lr0, cfg.lr_halve_every)
                sums: dict[str, float] = {}
                count = 0
                for idx in _batches(len(dataset), cfg.batch, state.data_rng):
                    if cfg.max_steps and state.opt.step >= cfg.max_steps:
                        break
                    b, s = sample_batch(dataset, idx, state.data_rng, crop, cfg.flip)
                    good = state_to_checkpoint(state) if out is not None else None
                    try:
                        vals = train_step(state, b, s, lr)
                    except NumericalError:
                        if good is not None:
                            save_checkpoint(Path(str(out) + ".lastgood"), good)
                        raise
                    for k, v in vals.items():
                        sums[k] = sums.get(k, 0.0) + v * len(idx)
                    count += len(idx)
                row = {"epoch": state.epoch, "lr": lr}
                row.update({k: sums.get(k, 0.0) / max(count, 1) for k in METRIC_COLUMNS[2:]})
                state.history.append(row)
                state.epoch += 1
                if csv_fh is not None:
                    writer.writerow(row)
                    csv_fh.flush()
                if on_epoch is not None:
                    on_epoch(row)
                log.info("epoch %d lr %.2e loss %.5f psnr %.2f", row["epoch"], lr, row["loss_total"], row["psnr"])
                if out is not None and cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0:
                    save_checkpoint(out, state_to_checkpoint(state))
        if out is not None:
            save_checkpoint(out, state_to_checkpoint(state))
    finally:
        if csv_fh is not None:
            csv_fh.close()
    return state


def resume(path: str | Path, dataset: PairedDataset, epochs: int | None = None, **kwargs) -> TrainState:
    """Continue a run from a checkpoint written at an epoch boundary.

    ``epochs`` raises (or lowers) the epoch budget stored in the checkpoint.
    A run cut short by ``max_steps`` in the middle of an epoch does not
    resume bit-exactly, since that partial epoch is counted as finished.
    """
    st = state_from_checkpoint(load_checkpoint(path))
    if epochs is not None:
        st.cfg = replace(st.cfg, epochs=epochs)
    return train(dataset, state=st, **kwargs)


# --------------------------------------------------------------- evaluate


@dataclass
class EvalResult:
    psnr: float
    ssim: float
    input_psnr: float
    input_ssim: float


def evaluate(model: MSFSNet, dataset: PairedDataset) -> EvalResult:
    """Mean PSNR/SSIM of restored and of unprocessed blurry images against ground truth."""
    ps, ss, ip, is_ = [], [], [], []
    for b, s in zip(dataset.blurry, dataset.sharp):
        o = np.clip(model.restore(b[None])[0], 0, 1)
        ps.append(psnr(o, s))
        ss.append(ssim(o, s))
        ip.append(psnr(b, s))
        is_.append(ssim(b, s))
    return EvalResult(float(np.mean(ps)), float(np.mean(ss)), float(np.mean(ip)), float(np.mean(is_)))


# ---------------------------------------------------------------- ablation


@dataclass(frozen=True)
class Ablation:
    name: str
    fsm: bool
    csffm: bool
    clm: bool
    consistency: bool


ABLATIONS = (
    Ablation("no_fsm_clm", False, True, True, False),
    Ablation("no_fsm_consistency", False, True, False, True),
    Ablation("no_csffm", True, False, True, True),
    Ablation("no_clm", True, True, False, True),
    Ablation("no_consistency", True, True, True, False),
    Ablation("full", True, True, True, True),
)


def ablation_config(base: TrainConfig, ab: Ablation) -> TrainConfig:
    net = replace(base.network, use_fsm=ab.fsm, use_csffm=ab.csffm)
    return replace(
        base,
        network=net,
        lambda1=base.lambda1 if ab.clm else 0.0,
        lambda2=base.lambda2 if ab.consistency else 0.0,
    )


ABLATION_COLUMNS = ["config", "fsm", "csffm", "clm", "consistency", "psnr", "ssim", "input_psnr", "input_ssim"]


def ablate(dataset: PairedDataset, cfg: TrainConfig, out_csv: str | Path | None = None) -> list[dict]:
    """Train every row of the ablation table with the same settings and seed."""
    rows = []
    for ab in ABLATIONS:
        acfg = ablation_config(cfg, ab)
        st = train(dataset, acfg)
        ev = evaluate(st.model, dataset)
        rows.append({
            "config": ab.name, "fsm": int(ab.fsm), "csffm": int(ab.csffm), "clm": int(ab.clm),
            "consistency": int(ab.consistency), "psnr": ev.psnr, "ssim": ev.ssim,
            "input_psnr": ev.input_psnr, "input_ssim": ev.input_ssim,
        })
        log.info("ablation %s: psnr %.3f ssim %.4f", ab.name, ev.psnr, ev.ssim)
    if out_csv is not None:
        out_csv = Path(out_csv)
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        with out_csv.open("w", newline="") as fh:
            wr = csv.DictWriter(fh, ABLATION_COLUMNS)
            wr.writeheader()
            for r in rows:
                wr.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return rows
