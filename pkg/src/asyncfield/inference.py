"""Mean-field inference: messages, coordinate updates and whole-video sweeps."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .kernels import PAIR_MULTIPLICITY
from .model import FieldInstance, FrameAssignment, KernelConfig, LabelSpace, kernel

INNER_TOL = 1e-8
INNER_MAX = 50
DEFAULT_PASSES = 10
DEFAULT_TOL = 1e-6


def _softmax(v):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite logits")
    e = np.exp(v - v.max())
    return e / e.sum()


def object_marginal(space: LabelSpace, q) -> np.ndarray:
    return np.bincount(space.sup_obj, weights=q, minlength=space.n_object)


@dataclass
class MarginalState:
    q: np.ndarray            # [T, K] frame marginals over the support
    q_intent: np.ndarray     # [M]
    positions: np.ndarray
    converged: bool = False
    passes: int = 0
    deltas: list = field(default_factory=list)
    history: list = field(default_factory=list)  # per-pass (q, q_intent) snapshots, if recorded

    def object_marginals(self, space: LabelSpace) -> np.ndarray:
        onehot = np.zeros((space.support_size, space.n_object))
        onehot[np.arange(space.support_size), space.sup_obj] = 1.0
        return self.q @ onehot

    def category_marginals(self, space: LabelSpace) -> np.ndarray:
        return self.q @ space.category_matrix()


@dataclass(frozen=True)
class OutgoingMessages:
    """Per-frame summaries other frames and the intent consume."""

    fa: np.ndarray
    fb: np.ndarray
    h: np.ndarray
    h_star: np.ndarray
    k: np.ndarray
    k_star: np.ndarray
    frame_index: int = 0
    iteration: int = 0
    has_truth: bool = False

    def __post_init__(self):
        for name in ("fa", "fb", "h", "h_star", "k", "k_star"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ValueError(f"message field {name!r} must be a finite vector")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        O, M = self.fa.shape[0], self.h.shape[0]
        if not (self.fb.shape[0] == self.k.shape[0] == self.k_star.shape[0] == O
                and self.h_star.shape[0] == M):
            raise ValueError("inconsistent message vector lengths")

    def restamped(self, iteration: int) -> "OutgoingMessages":
        return OutgoingMessages(self.fa, self.fb, self.h, self.h_star, self.k, self.k_star,
                                self.frame_index, iteration, self.has_truth)


@dataclass
class IncomingMessages:
    fa_in: np.ndarray
    fb_in: np.ndarray
    h_in: np.ndarray
    h_star_in: np.ndarray
    ka_in: np.ndarray
    ka_star_in: np.ndarray
    kb_in: np.ndarray
    kb_star_in: np.ndarray

    @classmethod
    def zeros(cls, n_object: int, n_intent: int) -> "IncomingMessages":
        o, m = np.zeros(n_object), np.zeros(n_intent)
        return cls(o.copy(), o.copy(), m.copy(), m.copy(), o.copy(), o.copy(), o.copy(), o.copy())

    def as_tuple(self):
        return (self.fa_in, self.fb_in, self.h_in, self.h_star_in,
                self.ka_in, self.ka_star_in, self.kb_in, self.kb_star_in)


def compute_outgoing(space: LabelSpace, q, fi, mu, ground_truth=None,
                     frame_index: int = 0, iteration: int = 0) -> OutgoingMessages:
    q = np.asarray(q, dtype=float)
    fi = np.asarray(fi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    qo = object_marginal(space, q)
    fa = mu @ qo
    fb = mu.T @ qo
    h = qo @ fi
    if ground_truth is None:
        h_star = np.zeros(space.n_intent)
        k_star = np.zeros(space.n_object)
        has_truth = False
    else:
        o_star = FrameAssignment(*ground_truth).object
        h_star = fi[o_star].copy()
        k_star = np.zeros(space.n_object)
        k_star[o_star] = 1.0
        has_truth = True
    return OutgoingMessages(fa, fb, h, h_star, qo, k_star, frame_index, iteration, has_truth)


def aggregate_incoming(msgs: Sequence[OutgoingMessages], target_frame, cfg: KernelConfig,
                       sizes: tuple | None = None) -> IncomingMessages:
    """Exact kernel-weighted sums of other frames' outgoing messages.

    ``sizes=(n_object, n_intent)`` fixes the output shape when ``msgs`` may
    be empty.
    """
    seen = set()
    out = None if sizes is None else IncomingMessages.zeros(*sizes)
    for m in msgs:
        if m.frame_index in seen:
            raise ValueError(f"duplicate sender frame {m.frame_index}")
        seen.add(m.frame_index)
        if out is None:
            out = IncomingMessages.zeros(m.fa.shape[0], m.h.shape[0])
        j = m.frame_index
        if j == target_frame:
            continue
        w = cfg.kernel_weight * kernel(target_frame, j, cfg)
        out.h_in += m.h
        if m.has_truth:
            out.h_star_in += m.h_star
        if j > target_frame:
            out.fa_in += w * m.fa
            out.ka_in += w * m.k
            if m.has_truth:
                out.ka_star_in += w * m.k_star
        else:
            out.fb_in += w * m.fb
            out.kb_in += w * m.k
            if m.has_truth:
                out.kb_star_in += w * m.k_star
    if out is None:
        raise ValueError("empty message list: pass sizes=(n_object, n_intent)")
    return out


def exact_incoming_all(fld: FieldInstance, q, truth=None) -> list[IncomingMessages]:
    """Fresh incoming messages for every frame, computed directly from the marginals.

    ``truth`` holds support indices (negative = unlabeled); starred families
    only count labeled senders.
    """
    space = fld.space
    T = fld.n_frames
    qo = np.asarray(q, dtype=float) @ _onehot(space)
    upper = np.triu(fld.kmat(), 1)
    mu = fld.shared_mu()
    fi = np.asarray(fld.fi, dtype=float)
    ka, kb = upper @ qo, upper.T @ qo
    H = np.einsum("to,tom->tm", qo, fi)
    kstar = np.zeros((T, space.n_object))
    hstar = np.zeros((T, space.n_intent))
    if truth is not None:
        truth = np.asarray(truth, dtype=np.int64)
        lab = np.flatnonzero(truth >= 0)
        objs = space.sup_obj[truth[lab]]
        kstar[lab, objs] = 1.0
        hstar[lab] = fi[lab, objs]
    kas, kbs = upper @ kstar, upper.T @ kstar
    h_tot, hs_tot = H.sum(axis=0), hstar.sum(axis=0)
    return [IncomingMessages(mu @ ka[i], mu.T @ kb[i], h_tot - H[i], hs_tot - hstar[i],
                             ka[i], kas[i], kb[i], kbs[i]) for i in range(T)]


def _frame_logits(space, theta, fi, inc: IncomingMessages, q_intent):
    per_obj = np.asarray(fi) @ np.asarray(q_intent) + PAIR_MULTIPLICITY * (inc.fa_in + inc.fb_in)
    return np.asarray(theta, dtype=float) + per_obj[space.sup_obj]


def update_frame_marginal(space: LabelSpace, theta, fi, inc: IncomingMessages, q_intent
                          ) -> np.ndarray:
    """One coordinate update of Q_i given incoming messages and the current Q_I.

    ``theta`` is the frame's semantic score over the support (or a
    ``SemanticPotentials``).
    """
    if hasattr(theta, "scores"):
        theta = theta.scores()
    return _softmax(_frame_logits(space, theta, fi, inc, q_intent))


def update_intent_marginal(h_total) -> np.ndarray:
    """Q_I from the frame-intent expectations summed over all frames."""
    return _softmax(h_total)


def local_alternation(space: LabelSpace, theta, fi, inc: IncomingMessages, q=None, q_intent=None,
                      tol=INNER_TOL, max_iter=INNER_MAX, damping=0.0):
    """Alternate Q_i and Q_I updates for one frame until they stop moving."""
    K, M = space.support_size, space.n_intent
    q = np.full(K, 1.0 / K) if q is None else np.array(q, dtype=float)
    q_int = np.full(M, 1.0 / M) if q_intent is None else np.array(q_intent, dtype=float)
    theta = np.ascontiguousarray(theta, dtype=float)
    pair_in = PAIR_MULTIPLICITY * (inc.fa_in + inc.fb_in)
    vals = np.concatenate([theta, pair_in, inc.h_in, np.ravel(fi)])
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite input to local update")
    n = kernels.local_update(theta, np.ascontiguousarray(fi, dtype=float), space.sup_obj,
                             np.ascontiguousarray(pair_in), np.ascontiguousarray(inc.h_in, dtype=float),
                             q, q_int, tol, max_iter, damping)
    return q, q_int, n


def _uniform_state(space, T):
    K, M = space.support_size, space.n_intent
    return np.full((T, K), 1.0 / K), np.full(M, 1.0 / M)


def infer_field(fld: FieldInstance, passes: int = DEFAULT_PASSES, tol: float = DEFAULT_TOL,
                inner_tol: float = INNER_TOL, inner_max: int = INNER_MAX, damping: float = 0.0,
                callback: Callable | None = None, record_passes: bool = False) -> MarginalState:
    """Synchronous mean-field inference over every frame of one video.

    Each pass visits frames in temporal order; a visit gathers fresh
    incoming messages from the current marginals of all other frames and
    alternates Q_i / Q_I updates to local convergence.  Stops once the
    largest L1 change of any marginal within a pass drops below ``tol``.

    The first pass holds Q_I at its initial value while every frame is
    updated once, then updates Q_I from all frames; starting from a
    uniform Q_I this keeps the earliest frames from fixing the intent on
    their own.  Every step is still an exact coordinate update.

    ``callback(q, q_intent, frame, kind)`` is invoked after every single
    coordinate update (``kind`` is ``"frame"`` or ``"intent"``); it forces
    the slower pure-Python visit loop.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    space = fld.space
    T = fld.n_frames
    theta = fld.theta()
    fi = np.ascontiguousarray(fld.fi, dtype=float)
    mu = np.ascontiguousarray(fld.shared_mu(), dtype=float)
    kmat = np.ascontiguousarray(fld.kmat())
    q, q_int = _uniform_state(space, T)
    state = MarginalState(q, q_int, fld.positions.copy())
    for p in range(passes):
        hold = p == 0
        if callback is None:
            delta = kernels.mf_sweep(theta, fi, mu, space.sup_obj, kmat, q, q_int,
                                     inner_tol, inner_max, damping, hold)
        else:
            delta = _python_sweep(space, theta, fi, mu, kmat, q, q_int, inner_tol, inner_max,
                                  damping, callback, hold)
        state.passes += 1
        state.deltas.append(float(delta))
        if record_passes:
            state.history.append((q.copy(), q_int.copy()))
        if delta < tol:
            state.converged = True
            break
    return state


def _python_sweep(space, theta, fi, mu, kmat, q, q_int, tol, max_iter, damping, callback,
                  hold_intent=False):
    T = theta.shape[0]
    start_int = q_int.copy()
    delta = 0.0
    for i in range(T):
        qo = q @ _onehot(space)
        upper = np.triu(kmat, 1)
        inc = IncomingMessages.zeros(space.n_object, space.n_intent)
        inc.fa_in = mu @ (upper[i] @ qo)
        inc.fb_in = mu.T @ (upper[:, i] @ qo)
        H = np.einsum("to,tom->tm", qo, fi)
        h_in = H.sum(axis=0) - H[i]
        old = q[i].copy()
        if hold_intent:
            new = update_frame_marginal(space, theta[i], fi[i], inc, q_int)
            if damping > 0:
                new = (1 - damping) * new + damping * q[i]
            q[i] = new
            callback(q, q_int, i, "frame")
            delta = max(delta, np.abs(q[i] - old).sum())
            continue
        for _ in range(max_iter):
            new = update_frame_marginal(space, theta[i], fi[i], inc, q_int)
            if damping > 0:
                new = (1 - damping) * new + damping * q[i]
            change = np.abs(new - q[i]).sum()
            q[i] = new
            callback(q, q_int, i, "frame")
            new_i = update_intent_marginal(h_in + object_marginal(space, q[i]) @ fi[i])
            if damping > 0:
                new_i = (1 - damping) * new_i + damping * q_int
            change += np.abs(new_i - q_int).sum()
            q_int[:] = new_i
            callback(q, q_int, i, "intent")
            if change < tol:
                break
        delta = max(delta, np.abs(q[i] - old).sum())
    if hold_intent:
        new_i = update_intent_marginal(np.einsum("to,tom->m", q @ _onehot(space), fi))
        if damping > 0:
            new_i = (1 - damping) * new_i + damping * q_int
        q_int[:] = new_i
        callback(q, q_int, T - 1, "intent")
    return max(delta, np.abs(q_int - start_int).sum())


def _onehot(space):
    m = np.zeros((space.support_size, space.n_object))
    m[np.arange(space.support_size), space.sup_obj] = 1.0
    return m


def infer_video(model, video, passes: int = DEFAULT_PASSES, tol: float = DEFAULT_TOL,
                **kwargs) -> MarginalState:
    """Run ``infer_field`` on the potentials ``model`` predicts for ``video``."""
    return infer_field(model.field(video), passes=passes, tol=tol, **kwargs)


def map_labeling(state: MarginalState, space: LabelSpace) -> list[FrameAssignment]:
    """Per-frame argmax of Q_i; ties go to the lowest support index."""
    return [space.assignment(int(k)) for k in np.argmax(state.q, axis=1)]


def dump_marginals(state: MarginalState, space: LabelSpace, top_k: int = 3,
                   frame_indices=None) -> str:
    """Line format: ``frame<TAB>rank<TAB>c,o,a,p,s<TAB>prob`` then an ``intent`` line."""
    lines = []
    idx = state.positions if frame_indices is None else frame_indices
    for t, row in enumerate(state.q):
        order = np.argsort(-row, kind="stable")[:top_k]
        for r, k in enumerate(order):
            a = space.assignment(int(k))
            lines.append(f"{int(idx[t])}\t{r}\t{','.join(map(str, a))}\t{row[k]:.6f}")
    lines.append("intent\t" + " ".join(f"{v:.6f}" for v in state.q_intent))
    return "\n".join(lines) + "\n"
