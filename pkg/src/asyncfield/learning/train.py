"""Asynchronous mini-batch training and the synchronous whole-video baseline."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..inference import (DEFAULT_PASSES, DEFAULT_TOL, INNER_MAX, INNER_TOL, compute_outgoing,
                         exact_incoming_all, infer_field, local_alternation)
from ..model import KernelConfig, LabelSpace, semantic_scores
from ..server.store import DEFAULT_DISCOUNT, MessageStore
from .fieldmodel import FieldModel
from .gradients import grad_frame_intent, grad_mu


class TrainingError(RuntimeError):
    pass


# staggered: each video is cleared once per epoch at its own fixed batch slot
# epoch: all videos are cleared at the start of every epoch
REFRESH_MODES = ("staggered", "epoch", "never")


@dataclass
class TrainConfig:
    batch_size: int = 240
    learning_rate: float = 1e-3
    lr_decay: float = 0.1
    lr_step: int = 30000           # iterations between decays
    epochs: int = 10
    discount: float = DEFAULT_DISCOUNT
    h_mode: str | float = "count"
    kernel_weighting: bool = True
    sigma: float | None = None     # overrides the model's kernel when set
    kernel_weight: float | None = None
    weight_decay: float = 4e-4
    mu_lr_scale: float = 0.01      # learning-rate multiplier for the affinity table
    store_refresh: str = "staggered"  # when a training video's stored messages are cleared
    seed: int = 0
    eval_every: int = 0            # iterations; 0 = once per epoch only
    eval_videos: int = 0           # training videos scored for accuracy; 0 = all
    infer_passes: int = DEFAULT_PASSES
    infer_tol: float = DEFAULT_TOL
    inner_tol: float = INNER_TOL
    inner_max: int = INNER_MAX
    sync_videos_per_batch: int = 0  # 0 = batch_size // frames per video
    workers: int = 1

    def __post_init__(self):
        for name in ("batch_size", "epochs", "lr_step", "infer_passes", "inner_max", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.weight_decay < 0 or self.mu_lr_scale < 0:
            raise ValueError("weight_decay and mu_lr_scale must be >= 0")
        if self.store_refresh not in REFRESH_MODES:
            raise ValueError(f"store_refresh must be one of {REFRESH_MODES}")

    def lr_at(self, iteration: int) -> float:
        return self.learning_rate * self.lr_decay ** (iteration // self.lr_step)

    @classmethod
    def from_entries(cls, entries: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(entries) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**entries)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def add(self, **rec) -> None:
        self.records.append(rec)

    def of_kind(self, kind: str) -> list:
        return [r for r in self.records if r["kind"] == kind]

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def _incidence(space: LabelSpace) -> dict:
    """0/1 maps from the support to each flattened semantic table."""
    sup = space.support
    K = space.support_size
    O, A, S = space.n_object, space.n_action, space.n_scene
    rows = np.arange(K)
    out = {}
    for name, col, D in (("op", sup[:, 1] * 3 + sup[:, 3], O * 3),
                         ("ap", sup[:, 2] * 3 + sup[:, 3], A * 3),
                         ("os", sup[:, 1] * S + sup[:, 4], O * S),
                         ("coap", sup[:, 5], space.n_configs)):
        m = np.zeros((K, D))
        m[rows, col] = 1.0
        out[name] = m
    return out


def _videos(data, split: str):
    if hasattr(data, "split"):
        return data.split(split)
    return list(data)


def frame_accuracy(model: FieldModel, videos, passes: int = DEFAULT_PASSES,
                   tol: float = DEFAULT_TOL) -> float:
    """Fraction of labeled frames whose MAP category matches the truth."""
    space = model.space
    cat = space.support[:, 0]
    hit = total = 0
    for v in videos:
        rows = v.labeled_rows()
        if rows.size == 0:
            continue
        state = infer_field(model.field(v), passes=passes, tol=tol)
        pred = cat[np.argmax(state.q[rows], axis=1)]
        hit += int((pred == cat[v.labels[rows]]).sum())
        total += rows.size
    return hit / total if total else float("nan")


class _Trainer:
    def __init__(self, model: FieldModel, cfg: TrainConfig, videos, heldout, log: TrainLog):
        self.model = model
        self.cfg = cfg
        self.space = model.space
        self.videos = videos
        self.heldout = heldout
        self.log = log
        self.inc = _incidence(model.space)
        model.provider.weight_decay = cfg.weight_decay
        if cfg.sigma is not None or cfg.kernel_weight is not None:
            kc = model.kernel_cfg
            model.kernel_cfg = KernelConfig(kc.sigma if cfg.sigma is None else cfg.sigma,
                                            kc.kernel_weight if cfg.kernel_weight is None
                                            else cfg.kernel_weight)
        self.iteration = 0
        n_eval = cfg.eval_videos or len(videos)
        self.eval_train = videos[:n_eval]

    def frame_tables(self, feats):
        t = self.model.provider.tables(feats)
        theta = semantic_scores(self.space, t["op"], t["ap"], t["os"], t["coap"],
                                self.model.term_weights)
        return theta, t["xi"]

    def apply(self, feats, g_theta, d_xi, d_mu, lr) -> None:
        if not (np.all(np.isfinite(g_theta)) and np.all(np.isfinite(d_xi))
                and np.all(np.isfinite(d_mu))):
            raise TrainingError(f"non-finite gradient at iteration {self.iteration}")
        w = self.model.term_weights
        grads = {name: getattr(w, name) * (g_theta @ m) for name, m in self.inc.items()}
        grads["xi"] = d_xi.reshape(d_xi.shape[0], -1)
        pg = self.model.provider.backprop(grads, feats)
        self.model.provider.apply(pg, lr)
        self.model.apply_mu(d_mu, lr * self.cfg.mu_lr_scale)
        if not np.all(np.isfinite(self.model.mu)):
            raise TrainingError(f"mu became non-finite at iteration {self.iteration}")
        for name, head in self.model.provider.heads.items():
            if not (np.all(np.isfinite(head.W)) and np.all(np.isfinite(head.b))):
                raise TrainingError(f"head {name!r} became non-finite at iteration {self.iteration}")

    def evaluate(self, epoch: int) -> None:
        c = self.cfg
        rec = {"kind": "eval", "iteration": self.iteration, "epoch": epoch,
               "train_accuracy": frame_accuracy(self.model, self.eval_train, c.infer_passes,
                                                c.infer_tol)}
        if self.heldout:
            rec["heldout_accuracy"] = frame_accuracy(self.model, self.heldout, c.infer_passes,
                                                     c.infer_tol)
        self.log.add(**rec)

    def after_step(self, epoch: int, objective: float, n: int, lr: float) -> None:
        self.iteration += 1
        self.log.add(kind="iter", iteration=self.iteration, epoch=epoch, objective=objective,
                     frames=n, lr=lr)
        if self.cfg.eval_every and self.iteration % self.cfg.eval_every == 0:
            self.evaluate(epoch)


def _frame_grads(space, q, q_int, inc, fi_row, k, O):
    g = -q
    g[k] += 1.0
    o_star = space.sup_obj[k]
    d_xi = grad_frame_intent(space, inc.h_star_in, fi_row[o_star], q, q_int, k)
    d_mu = grad_mu(space, inc, q, k)
    return g, d_xi, d_mu


def train(dataset, model: FieldModel, store=None, cfg: TrainConfig | None = None,
          heldout=None, log: TrainLog | None = None):
    """Asynchronous training: mini-batches of frames drawn across videos.

    Each frame fetches approximate incoming messages from ``store``, runs the
    local Q_i / Q_I alternation, contributes its gradients and sends fresh
    outgoing messages.  Gradients are summed over the batch and applied once.
    Returns ``(model, log)``; ``model`` is updated in place.
    """
    cfg = cfg or TrainConfig()
    log = log or TrainLog()
    videos = _videos(dataset, "train")
    if heldout is None and hasattr(dataset, "split"):
        heldout = dataset.split("test")
    space = model.space
    pool = [(vi, int(r)) for vi, v in enumerate(videos) for r in v.labeled_rows()]
    if not pool:
        raise TrainingError("dataset has no labeled training frames")
    if store is None:
        store = MessageStore(space.n_object, space.n_intent, cfg.discount, cfg.h_mode,
                             cfg.kernel_weighting)
    tr = _Trainer(model, cfg, videos, heldout, log)
    rng = np.random.default_rng(cfg.seed)
    O = space.n_object
    pool_arr = np.array(pool, dtype=np.int64)
    executor = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    n_batches = -(-len(pool) // cfg.batch_size)
    slot = rng.integers(n_batches, size=len(videos))
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(pool))
            for b_idx, start in enumerate(range(0, len(pool), cfg.batch_size)):
                if cfg.store_refresh == "staggered" or (cfg.store_refresh == "epoch" and b_idx == 0):
                    clear = np.flatnonzero(slot == b_idx) if cfg.store_refresh == "staggered" \
                        else range(len(videos))
                    for vi in clear:
                        store.reset_video(videos[vi].video_id)
                batch = pool_arr[order[start:start + cfg.batch_size]]
                lr = cfg.lr_at(tr.iteration)
                feats = np.stack([videos[vi].features[r] for vi, r in batch])
                theta, fi = tr.frame_tables(feats)
                mu = model.mu.copy()

                def work(b, batch=batch, theta=theta, fi=fi, mu=mu):
                    vi, r = batch[b]
                    v = videos[vi]
                    frame = int(v.frame_indices[r])
                    inc = store.get_approximate_incoming(v.video_id, frame, model.kernel_cfg)
                    q, q_int, _ = local_alternation(space, theta[b], fi[b], inc,
                                                    tol=cfg.inner_tol, max_iter=cfg.inner_max)
                    k = int(v.labels[r])
                    out = _frame_grads(space, q, q_int, inc, fi[b], k, O)
                    store.send(v.video_id, compute_outgoing(space, q, fi[b], mu,
                                                            space.assignment(k), frame))
                    return out + (math.log(max(q[k], 1e-300)),)

                idx = range(len(batch))
                results = list(executor.map(work, idx)) if executor else [work(b) for b in idx]
                g_theta = np.stack([r[0] for r in results])
                d_xi = np.stack([r[1] for r in results])
                d_mu = np.sum([r[2] for r in results], axis=0)
                objective = float(np.mean([r[3] for r in results]))
                tr.apply(feats, g_theta, d_xi, d_mu, lr)
                tr.after_step(epoch, objective, len(batch), lr)
            tr.evaluate(epoch)
    finally:
        if executor:
            executor.shutdown()
    return model, log


def train_synchronous_baseline(dataset, model: FieldModel, cfg: TrainConfig | None = None,
                               heldout=None, log: TrainLog | None = None):
    """Whole-video mini-batches with message passing run to convergence first."""
    cfg = cfg or TrainConfig()
    log = log or TrainLog()
    videos = _videos(dataset, "train")
    if heldout is None and hasattr(dataset, "split"):
        heldout = dataset.split("test")
    space = model.space
    if not any(v.labeled_rows().size for v in videos):
        raise TrainingError("dataset has no labeled training frames")
    per_batch = cfg.sync_videos_per_batch or max(
        1, cfg.batch_size // int(np.median([v.n_frames for v in videos])))
    tr = _Trainer(model, cfg, videos, heldout, log)
    rng = np.random.default_rng(cfg.seed)
    O = space.n_object
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(videos))
        for start in range(0, len(videos), per_batch):
            lr = cfg.lr_at(tr.iteration)
            feats, gt, gx, gm, obj = [], [], [], np.zeros((O, O)), []
            for vi in order[start:start + per_batch]:
                v = videos[vi]
                rows = v.labeled_rows()
                if rows.size == 0:
                    continue
                fld = model.field(v)
                state = infer_field(fld, passes=cfg.infer_passes, tol=cfg.infer_tol,
                                    inner_tol=cfg.inner_tol, inner_max=cfg.inner_max)
                incs = exact_incoming_all(fld, state.q, v.labels)
                for r in rows:
                    k = int(v.labels[r])
                    q = state.q[r].copy()
                    g, d_xi, d_mu = _frame_grads(space, q, state.q_intent, incs[r], fld.fi[r], k, O)
                    feats.append(v.features[r])
                    gt.append(g)
                    gx.append(d_xi)
                    gm += d_mu
                    obj.append(math.log(max(state.q[r, k], 1e-300)))
            if not feats:
                continue
            tr.apply(np.stack(feats), np.stack(gt), np.stack(gx), gm, lr)
            tr.after_step(epoch, float(np.mean(obj)), len(feats), lr)
        tr.evaluate(epoch)
    return model, log


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
