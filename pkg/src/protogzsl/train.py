"""Mini-batch training of the embedding net, early stopping, and the
lambda1 grid search.

Determinism: (seed, config, bundle) fully determines the result. The seed
spawns fixed child streams (init, shuffling, dropout, generated-batch
order), so the generated-data path with gamma1=gamma2=0 consumes exactly
the same random numbers as the plain path and reproduces it bit for bit.

Validation metric: the bundle's val split holds only source-class points,
so the unseen side of the validation harmonic mean is measured on
test_unseen (predictions over S∪T for both sides). test_seen stays
untouched until the final report.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .data import MANIFEST_VERSION, read_manifest, read_tensor, write_tensor
from .evaluation import harmonic_mean, mi_estimate, per_class_accuracy
from .losses import (LossConfig, selection_mask, semantic_pv,
                     total_loss_det, total_loss_gen)
from .ndcore import (EmbedNet, adam_step, init_net, net_backward,
                     net_forward, spawn_rngs)
from .proto import (DistanceSpec, all_set, embed_prototypes, predict_batch,
                    source_set, target_set)

CHECKPOINT_TENSORS = ("value", "adam_m", "adam_v")


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    distance: DistanceSpec = field(default_factory=DistanceSpec)
    lr: float = 0.001
    batch_size: int = 512
    max_epochs: int = 600
    patience: int = 10     # evaluations since the best one before stopping
    min_epochs: int = 150  # early stopping arms only after this many epochs
    seed: int = 0
    eval_every: int = 25
    hidden: int = 2048
    dropout_rate: float = 0.5
    leaky_slope: float = 0.01
    early_metric: str = "harmonic"  # "harmonic" (GZSL) or "top1" (ZSL)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.max_epochs < 0 or self.patience < 0 or self.eval_every < 1:
            raise ValueError("invalid epoch/patience/eval_every settings")
        if self.min_epochs < 0:
            raise ValueError("min_epochs must be >= 0")
        if self.early_metric not in ("harmonic", "top1"):
            raise ValueError(f"bad early_metric {self.early_metric!r}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "loss" in d:
            d["loss"] = LossConfig(**d["loss"])
        if "distance" in d:
            d["distance"] = DistanceSpec(**d["distance"])
        return cls(**d)


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, rec):
        if self.records and rec["epoch"] <= self.records[-1]["epoch"]:
            raise ValueError("history epochs must be strictly increasing")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def final(self):
        return self.records[-1] if self.records else None

    def columns(self):
        cols = []
        for rec in self.records:
            for key in rec:
                if key not in cols:
                    cols.append(key)
        return cols

    def to_csv(self, path):
        cols = self.columns()
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for rec in self.records:
                fh.write(",".join(_csv_cell(rec.get(c)) for c in cols) + "\n")


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class _TrainState:
    """Bookkeeping shared by the two training entry points."""

    def __init__(self, bundle, cfg):
        self.bundle = bundle
        self.cfg = cfg
        self.src = source_set(bundle.n_source, bundle.n_target)
        self.tgt = target_set(bundle.n_source, bundle.n_target)
        self.everything = all_set(bundle.n_source, bundle.n_target)
        self.sem_pv = semantic_pv(bundle.V, self.src, self.tgt, cfg.distance)
        self.best_metric = -np.inf
        self.best_snapshot = None
        self.evals_since_best = 0

    def validation_record(self, net):
        cfg, b = self.cfg, self.bundle
        z = embed_prototypes(net, b.V)
        x_val, y_val = b.X[b.val_idx], b.y[b.val_idx]
        preds_val = predict_batch(x_val, z, self.everything, cfg.distance)
        _, val_tr = per_class_accuracy(preds_val, y_val, b.source_ids)
        x_unseen, y_unseen = b.X[b.test_unseen_idx], b.y[b.test_unseen_idx]
        preds_unseen = predict_batch(x_unseen, z, self.everything,
                                     cfg.distance)
        _, unseen_ts = per_class_accuracy(preds_unseen, y_unseen,
                                          b.target_ids)
        val_h = harmonic_mean(unseen_ts, val_tr)
        mi_reg = mi_estimate(net, x_val, b, cfg.distance, z=z)
        mi_nats = mi_estimate(net, x_val, b, cfg.distance, z=z,
                              regularized=False)
        return {"val_tr": val_tr, "unseen_ts": unseen_ts, "val_h": val_h,
                "mi_reg": mi_reg, "mi_nats": mi_nats}

    def early_stop_update(self, net, epoch, record):
        """Track the best validation metric; stop after `patience`
        non-improving evaluations once past the min_epochs warmup."""
        metric = (record["val_h"] if self.cfg.early_metric == "harmonic"
                  else record["val_tr"])
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_snapshot = net.snapshot()
            self.evals_since_best = 0
        else:
            self.evals_since_best += 1
        return (epoch >= self.cfg.min_epochs
                and self.evals_since_best > self.cfg.patience)

    def finish(self, net):
        if self.best_snapshot is not None:
            net.restore(self.best_snapshot)
        return net


def _train_impl(bundle, cfg, gen=None):
    use_gen = gen is not None and (cfg.loss.gamma1 > 0 or cfg.loss.gamma2 > 0)
    rng_init, rng_shuffle, rng_dropout, rng_gen = _streams(cfg.seed)
    net = init_net(bundle.q_dim, bundle.p_dim, hidden=cfg.hidden,
                   rng=rng_init, dropout_rate=cfg.dropout_rate,
                   leaky_slope=cfg.leaky_slope)
    history = TrainHistory()
    if cfg.max_epochs == 0:
        return net, history

    state = _TrainState(bundle, cfg)
    x_all, y_all = bundle.X, bundle.y
    step = 0
    gen_order = None
    gen_cursor = 0

    for epoch in range(1, cfg.max_epochs + 1):
        sel_mask = None
        if use_gen:
            z_eval = embed_prototypes(net, bundle.V)
            sel_mask = selection_mask(gen, z_eval, state.tgt,
                                      cfg.distance, cfg.loss)
        perm = rng_shuffle.permutation(bundle.train_idx)
        epoch_terms = {}
        n_batches = 0
        for lo in range(0, len(perm), cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            if len(idx) < 2:
                continue
            xb, yb = x_all[idx], y_all[idx]
            z, cache = net_forward(net, bundle.V, train_mode=True,
                                   rng=rng_dropout)
            if use_gen:
                gen_order, gen_cursor, gidx = _next_gen_batch(
                    gen, cfg.batch_size, rng_gen, gen_order, gen_cursor)
                batch = _Batch(gen.X[gidx], gen.y[gidx])
                kept = gidx[sel_mask[gidx]]
                report, dz = total_loss_gen(
                    xb, yb, batch, bundle.V, z, state.src,
                    state.tgt, cfg.distance, cfg.loss, want_grad=True,
                    sem_pv=state.sem_pv,
                    selected=_Batch(gen.X[kept], gen.y[kept]))
            else:
                report, dz = total_loss_det(
                    xb, yb, bundle.V, z, state.src, state.tgt,
                    cfg.distance, cfg.loss, want_grad=True,
                    sem_pv=state.sem_pv)
            if not np.isfinite(report.total):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch "
                    f"{n_batches + 1}: {report.per_term}")
            net_backward(net, cache, dz)
            step += 1
            adam_step(net.params(), lr=cfg.lr, t=step)
            n_batches += 1
            for k, v in report.per_term.items():
                epoch_terms[k] = epoch_terms.get(k, 0.0) + v
            epoch_terms["total"] = epoch_terms.get("total", 0.0) + report.total

        if epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs:
            rec = {"epoch": epoch}
            for k in sorted(epoch_terms):
                rec[f"loss_{k}"] = epoch_terms[k] / max(n_batches, 1)
            rec.update(state.validation_record(net))
            if use_gen:
                rec["gen_selected"] = int(sel_mask.sum())
            history.append(rec)
            if state.early_stop_update(net, epoch, rec):
                break
    return state.finish(net), history


class _Batch:
    """Duck-typed generated batch: just .X/.y/.m."""

    def __init__(self, x, y):
        self.X = x
        self.y = y

    @property
    def m(self):
        return self.X.shape[0]


def _streams(seed):
    return spawn_rngs(seed, 4)


def _next_gen_batch(gen, batch_size, rng_gen, order, cursor):
    """Cycle deterministically through the generated set in shuffled order."""
    if order is None or cursor >= len(order):
        order = rng_gen.permutation(gen.m)
        cursor = 0
    idx = order[cursor:cursor + batch_size]
    return order, cursor + batch_size, idx


def train_deterministic(bundle, cfg):
    """Train on seen data only (the deterministic objective)."""
    return _train_impl(bundle, cfg, gen=None)


def train_with_generated(bundle, gen, cfg):
    """Train with seen data plus externally generated target features.

    Each epoch re-runs the uncertainty selection against the current
    prototypes; each optimizer step consumes one seen batch and one
    generated batch (single combined update). With gamma1=gamma2=0 this
    reduces exactly to train_deterministic.
    """
    if gen.X.shape[1] != bundle.p_dim:
        raise ValueError("generated feature dim does not match bundle")
    if gen.m and not np.all(np.isin(gen.y, bundle.target_ids)):
        raise ValueError("generated labels outside the bundle's target "
                         "classes")
    return _train_impl(bundle, cfg, gen=gen)


def grid_search_lambda1(bundle, cfg, grid):
    """Train once per lambda1 value; return (best lambda1, rows).

    Each grid point gets a fresh deterministic seed stream derived from
    cfg.seed. Ties resolve to the smaller lambda1.
    """
    if not grid:
        raise ValueError("empty lambda1 grid")
    child_seeds = [int(s.generate_state(1)[0])
                   for s in np.random.SeedSequence(cfg.seed).spawn(len(grid))]
    rows = []
    best_lam, best_h = None, -np.inf
    for lam, child in zip(grid, child_seeds):
        run_cfg = replace(cfg, loss=replace(cfg.loss, lambda1=float(lam)),
                          seed=child)
        net, history = train_deterministic(bundle, run_cfg)
        final = history.final()
        val_h = final["val_h"] if final else 0.0
        rows.append({"lambda1": float(lam), "val_h": float(val_h),
                     "seed": child})
        if val_h > best_h or (val_h == best_h and best_lam is not None
                              and lam < best_lam):
            best_h, best_lam = val_h, float(lam)
    return best_lam, rows


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(net, cfg, dirpath, step=0):
    """Write every parameter block (value + Adam moments) plus the config."""
    os.makedirs(dirpath, exist_ok=True)
    files = {}
    for p in net.params():
        for part in CHECKPOINT_TENSORS:
            fname = f"{p.name}_{part}.gzs"
            write_tensor(os.path.join(dirpath, fname), getattr(p, part))
            files[f"{p.name}.{part}"] = fname
    manifest = {
        "version": MANIFEST_VERSION,
        "kind": "checkpoint",
        "arch": {"q_dim": net.q_dim, "hidden": net.hidden,
                 "p_dim": net.p_dim, "dropout_rate": net.dropout_rate,
                 "leaky_slope": net.leaky_slope},
        "files": files,
        "step": int(step),
        "train_config": cfg.to_dict(),
    }
    with open(os.path.join(dirpath, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(dirpath):
    """Rebuild (net, cfg, step) from a checkpoint directory."""
    manifest = read_manifest(dirpath)
    if manifest.get("kind") != "checkpoint":
        raise ValueError(f"{dirpath}: not a checkpoint directory")
    arch = manifest["arch"]
    tensors = {}
    for key, fname in manifest["files"].items():
        tensors[key] = read_tensor(os.path.join(dirpath, fname))
    net = EmbedNet(tensors["w1.value"], tensors["b1.value"],
                   tensors["w2.value"], tensors["b2.value"],
                   dropout_rate=arch["dropout_rate"],
                   leaky_slope=arch["leaky_slope"])
    for p in net.params():
        p.adam_m[:] = tensors[f"{p.name}.adam_m"]
        p.adam_v[:] = tensors[f"{p.name}.adam_v"]
    cfg = TrainConfig.from_dict(manifest["train_config"])
    return net, cfg, manifest["step"]
