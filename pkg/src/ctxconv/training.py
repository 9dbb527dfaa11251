"""Epoch loop, checkpoints and the per-epoch run log."""
import json
import logging
import time
from pathlib import Path

import numpy as np

from .network import ModelParams, evaluate, init_params, train_step
from .optim import AdamState
from .tensor import Rng, Tensor, load_tensors, save_tensors
from .transforms import EXACT, ROTATION, SCALING, TransformSet
from .data import BatchIter

log = logging.getLogger(__name__)

CHECKPOINT = "checkpoint.ctx"
RUNLOG = "runlog.jsonl"
CONFIG_COPY = "config.txt"

_KIND_CODES = {ROTATION: 0.0, SCALING: 1.0}


def save_checkpoint(path, params, adam, rng, epoch, phi, dropout_rate):
    records = {f"param/{k}": Tensor(v.value) for k, v in params.named()}
    for (k, _), m, v in zip(params.named(), adam.m, adam.v):
        records[f"adam/m/{k}"] = Tensor(m)
        records[f"adam/v/{k}"] = Tensor(v)
    records["adam/step"] = Tensor([adam.step_count])
    records["adam/hyper"] = Tensor([adam.lr, adam.beta1, adam.beta2, adam.eps])
    records["rng/dropout"] = rng.state_tensor()
    records["epoch"] = Tensor([epoch])
    records["phi/kind"] = Tensor([_KIND_CODES[phi.kind]])
    records["phi/exact"] = Tensor([1.0 if phi.interpolation == EXACT else 0.0])
    records["phi/values"] = Tensor(phi.values)
    records["model/dropout"] = Tensor([dropout_rate])
    save_tensors(path, records)


def load_checkpoint(path):
    """Returns a dict with params, adam, rng, epoch, phi and dropout."""
    t = load_tensors(path)
    params = ModelParams.from_arrays({k[6:]: v.numpy() for k, v in t.items() if k.startswith("param/")})
    lr, b1, b2, eps = t["adam/hyper"].data
    adam = AdamState(lr, b1, b2, eps, step_count=int(t["adam/step"].data[0]))
    names = [k for k, _ in params.named()]
    if f"adam/m/{names[0]}" in t:
        adam.m = [t[f"adam/m/{k}"].numpy() for k in names]
        adam.v = [t[f"adam/v/{k}"].numpy() for k in names]
    kind = ROTATION if t["phi/kind"].data[0] == 0.0 else SCALING
    interp = EXACT if t["phi/exact"].data[0] == 1.0 and kind == ROTATION else "bilinear"
    return {
        "params": params,
        "adam": adam,
        "rng": Rng.from_state_tensor(t["rng/dropout"]),
        "epoch": int(t["epoch"].data[0]),
        "phi": TransformSet(kind, tuple(t["phi/values"].data), interp),
        "dropout": float(t["model/dropout"].data[0]),
    }


def read_runlog(path):
    path = Path(path)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def train(cfg, train_ds, test_ds, resume=False, progress=None):
    """Train per ``cfg``, writing config copy, run log and checkpoints into ``cfg.run_out``.

    Returns ``(params, records)``. With ``resume`` the run continues from the
    checkpoint in the output directory and finishes bit-identically to an
    uninterrupted run.
    """
    out = Path(cfg.run_out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / CHECKPOINT
    log_path = out / RUNLOG
    phi = cfg.transform_set()

    if resume and ckpt_path.exists():
        state = load_checkpoint(ckpt_path)
        if state["phi"] != phi:
            raise ValueError(f"checkpoint was trained with {state['phi']}, config asks for {phi}")
        params, adam, rng, start = state["params"], state["adam"], state["rng"], state["epoch"] + 1
        records = [r for r in read_runlog(log_path) if r["epoch"] <= state["epoch"]]
        log_path.write_text("".join(json.dumps(r) + "\n" for r in records))
        log.info("resuming after epoch %d", state["epoch"])
    else:
        params = init_params(Rng.derive(cfg.run_seed, "init"), cfg.model_gen_channels, cfg.model_dense_width)
        adam = AdamState(cfg.optim_lr, cfg.optim_beta1, cfg.optim_beta2, cfg.optim_eps)
        rng = Rng.derive(cfg.run_seed, "dropout")
        start = 1
        records = []
        log_path.write_text("")
    (out / CONFIG_COPY).write_text(cfg.to_text())

    batches = BatchIter(len(train_ds), cfg.optim_batch_size, cfg.run_seed)
    for epoch in range(start, cfg.schedule_epochs + 1):
        t0 = time.perf_counter()
        loss_sum, wrong = 0.0, 0
        for idx in batches.epoch(epoch):
            labels = train_ds.labels[idx]
            loss, logits = train_step(train_ds.images[idx], labels, phi, params, adam, rng, cfg.model_dropout)
            loss_sum += loss * len(idx)
            wrong += int((logits.argmax(axis=1) != labels).sum())
            if progress:
                progress(epoch, loss)
        record = {
            "epoch": epoch,
            "train_loss": loss_sum / len(train_ds),
            "train_error": 100.0 * wrong / len(train_ds),
            "test_error": None,
        }
        if test_ds is not None and (epoch % cfg.schedule_eval_every == 0 or epoch == cfg.schedule_epochs):
            record["test_error"] = evaluate(test_ds, phi, params)[1]
        record["wall_time"] = time.perf_counter() - t0
        records.append(record)
        with open(log_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")
        log.info("epoch %d: %s", epoch, record)
        if epoch % cfg.schedule_checkpoint_every == 0 or epoch == cfg.schedule_epochs:
            save_checkpoint(ckpt_path, params, adam, rng, epoch, phi, cfg.model_dropout)
    return params, records


def params_equal(a, b):
    return all(np.array_equal(x.value, y.value) for x, y in zip(a.vars(), b.vars()))
