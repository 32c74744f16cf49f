"""Classification / localization mAP, ablations and intent-distance analysis."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data.records import UNLABELED
from .data.sampling import rows_of, sample_equidistant
from .inference import DEFAULT_PASSES, DEFAULT_TOL, infer_field

N_CLASSIFY_FRAMES = 25
N_LOCALIZE_FRAMES = 75
N_LOCALIZE_ROWS = 25
SMOOTH_WINDOW = 30
N_PERMUTATIONS = 10_000


# scoring -----------------------------------------------------------------

def _infer_rows(model, video, n: int, passes: int, tol: float):
    frames = sample_equidistant(video, n)
    rows = rows_of(video, frames)
    state = infer_field(model.field(video, rows), passes=passes, tol=tol)
    return rows, state


def video_category_scores(model, video, n_frames: int = N_CLASSIFY_FRAMES,
                          passes: int = DEFAULT_PASSES, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Per-class max over equidistant frames of the category marginal."""
    _, state = _infer_rows(model, video, n_frames, passes, tol)
    return state.category_marginals(model.space).max(axis=0)


def video_truth(space, video) -> np.ndarray:
    """0/1 vector of the categories present in any labeled frame."""
    y = np.zeros(space.n_category)
    lab = video.labels[video.labels != UNLABELED]
    y[space.support[lab, 0]] = 1.0
    return y


def smooth_scores(scores, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Centered moving average (offsets -window//2 .. window - window//2 - 1), clipped at the ends."""
    s = np.asarray(scores, dtype=float)
    n = s.shape[0]
    lo = np.maximum(np.arange(n) - window // 2, 0)
    hi = np.minimum(np.arange(n) + (window - window // 2), n)
    csum = np.concatenate([np.zeros((1,) + s.shape[1:]), np.cumsum(s, axis=0)], axis=0)
    return (csum[hi] - csum[lo]) / (hi - lo).reshape((-1,) + (1,) * (s.ndim - 1))


def localization_scores(model, video, post_process: bool = False,
                        n_frames: int = N_LOCALIZE_FRAMES, n_rows: int = N_LOCALIZE_ROWS,
                        window: int = SMOOTH_WINDOW, passes: int = DEFAULT_PASSES,
                        tol: float = DEFAULT_TOL):
    """``(scores [R, C], truth [R, C])`` at every third of the inferred frames.

    Rows whose frame is unlabeled get an all-zero truth row.
    """
    rows, state = _infer_rows(model, video, n_frames, passes, tol)
    cat = state.category_marginals(model.space)
    if post_process:
        cat = smooth_scores(cat, window)
    step = max(1, len(rows) // n_rows)
    pick = np.arange(0, len(rows), step)[:n_rows]
    truth = np.zeros((pick.size, model.space.n_category))
    labs = video.labels[rows[pick]]
    ok = labs != UNLABELED
    truth[np.flatnonzero(ok), model.space.support[labs[ok], 0]] = 1.0
    return cat[pick], truth


# metrics -----------------------------------------------------------------

def average_precision(scores, labels) -> float:
    """Mean precision at the rank of each positive; ties keep the original order."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels) > 0
    if not labels.any():
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    prec = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(prec[hits].mean())


@dataclass
class APResult:
    per_class: np.ndarray   # NaN for excluded classes
    mAP: float
    n_excluded: int

    def table(self) -> str:
        lines = ["class\tap"]
        lines += [f"{c}\t{'excluded' if np.isnan(a) else f'{a:.6f}'}"
                  for c, a in enumerate(self.per_class)]
        lines.append(f"mAP\t{self.mAP:.6f}")
        lines.append(f"excluded\t{self.n_excluded}")
        return "\n".join(lines) + "\n"


def mean_average_precision(scores, truth) -> APResult:
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if scores.size == 0:
        raise ValueError("empty score matrix")
    if scores.shape != truth.shape or scores.ndim != 2:
        raise ValueError(f"score shape {scores.shape} and truth shape {truth.shape} differ")
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite scores")
    if not np.all((truth == 0) | (truth == 1)):
        raise ValueError("ground truth must be 0/1")
    ap = np.array([average_precision(scores[:, c], truth[:, c]) for c in range(scores.shape[1])])
    keep = ~np.isnan(ap)
    if not keep.any():
        raise ValueError("no class has a positive example")
    return APResult(ap, float(ap[keep].mean()), int((~keep).sum()))


def evaluate_classification(model, videos, **kw) -> APResult:
    s = np.stack([video_category_scores(model, v, **kw) for v in videos])
    y = np.stack([video_truth(model.space, v) for v in videos])
    return mean_average_precision(s, y)


def evaluate_localization(model, videos, post_process: bool = False, **kw) -> APResult:
    parts = [localization_scores(model, v, post_process, **kw) for v in videos]
    return mean_average_precision(np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts]))


# ablations ---------------------------------------------------------------

@dataclass
class AblationResult:
    rows: list = field(default_factory=list)  # (variant, seed, metric, value)

    def values(self, variant: str, metric: str = "classification_map") -> np.ndarray:
        return np.array([r[3] for r in self.rows if r[0] == variant and r[2] == metric])

    def summary(self, metric: str = "classification_map") -> dict:
        out = {}
        for v in dict.fromkeys(r[0] for r in self.rows):
            x = self.values(v, metric)
            out[v] = (float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0)
        return out

    def lines(self) -> str:
        return "".join(f"{v}\t{s}\t{m}\t{x:.6f}\n" for v, s, m, x in self.rows)

    def table(self, metric: str = "classification_map") -> str:
        out = ["variant\tmean\tsd"]
        out += [f"{v}\t{m:.6f}\t{s:.6f}" for v, (m, s) in self.summary(metric).items()]
        return "\n".join(out) + "\n"


def ablation_run(dataset, variants, seeds, cfg=None, model_kw: dict | None = None,
                 models_out: dict | None = None) -> AblationResult:
    """Train and score every (variant, seed) pair with the asynchronous trainer.

    ``models_out``, if given, receives ``{(variant, seed): trained model}``.
    """
    from .learning.fieldmodel import FieldModel
    from .learning.train import TrainConfig, train

    variants = list(variants)
    if not variants:
        raise ValueError("no variants requested")
    cfg = cfg or TrainConfig()
    res = AblationResult()
    test = dataset.split("test")
    for variant in variants:
        for seed in seeds:
            model = FieldModel.init(dataset.space, dataset.feature_dim, variant, seed=seed,
                                    **(model_kw or {}))
            train(dataset, model, cfg=replace(cfg, seed=seed))
            res.rows.append((variant, seed, "classification_map",
                             evaluate_classification(model, test).mAP))
            if models_out is not None:
                models_out[(variant, seed)] = model
    return res


# intent analysis ---------------------------------------------------------

@dataclass
class IntentDistanceReport:
    distances: np.ndarray
    overall_mean: float
    group_labels: list = field(default_factory=list)
    within_mean: dict = field(default_factory=dict)
    p_value: dict = field(default_factory=dict)

    def significant_fraction(self, alpha: float = 0.1) -> float:
        ps = list(self.p_value.values())
        return float(np.mean([p <= alpha for p in ps])) if ps else float("nan")


def _pair_mean(D):
    n = D.shape[0]
    return float(D.sum() / (n * (n - 1))) if n > 1 else float("nan")


def intent_distances(states, groups=None, n_permutations: int = N_PERMUTATIONS, seed: int = 0
                     ) -> IntentDistanceReport:
    """Pairwise squared Euclidean distances between intent distributions.

    With ``groups``, each group's mean within-group distance is compared to
    a label-permutation null; ``p = (1 + #{null <= observed}) / (1 + n)``.
    """
    Q = [np.asarray(getattr(s, "q_intent", s), dtype=float) for s in states]
    if len({q.shape for q in Q}) > 1:
        raise ValueError("intent distributions differ in dimension")
    Q = np.stack(Q)
    sq = (Q * Q).sum(axis=1)
    D = np.maximum(sq[:, None] + sq[None, :] - 2.0 * Q @ Q.T, 0.0)
    np.fill_diagonal(D, 0.0)
    rep = IntentDistanceReport(D, _pair_mean(D))
    if groups is None:
        return rep
    groups = np.asarray(groups)
    if groups.shape[0] != Q.shape[0]:
        raise ValueError("one group label per state required")
    labels = list(dict.fromkeys(groups.tolist()))
    rep.group_labels = labels
    G = (groups[:, None] == np.array(labels)[None, :]).astype(float)
    sizes = G.sum(axis=0)
    denom = sizes * (sizes - 1)

    def within(Gm):
        return np.einsum("ig,ij,jg->g", Gm, D, Gm) / np.where(denom > 0, denom, np.nan)

    obs = within(G)
    rng = np.random.default_rng(seed)
    count = np.zeros(len(labels))
    for _ in range(n_permutations):
        count += within(G[rng.permutation(G.shape[0])]) <= obs
    for g, lab in enumerate(labels):
        if sizes[g] < 2:
            continue
        rep.within_mean[lab] = float(obs[g])
        rep.p_value[lab] = float((1.0 + count[g]) / (1.0 + n_permutations))
    return rep
