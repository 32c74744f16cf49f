"""Closed-form gradients versus finite differences of the exact log-likelihood.

Every table entry of small random fields is perturbed by +-epsilon, the
exact log-likelihood is enumerated on both sides, and the central difference
is compared with the closed-form gradient evaluated at exact marginals.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import oracle
from ..model import FieldInstance, KernelConfig, LabelSpace, TermWeights
from .gradients import grad_frame_intent_joint, grad_mu_from_expectations, grad_semantic

FAMILIES = {"op": "semantic", "ap": "semantic", "os": "semantic", "coap": "semantic",
            "fi": "frame_intent", "mu": "affinity"}
FAULTS = ("mu_sign", "xi_sign", "semantic_sign")
DEFAULT_TOLERANCE = 1e-5
DEFAULT_EPSILON = 1e-5
REL_FLOOR = 1e-3  # denominators below this count as absolute error


def relative_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def random_space(rng: np.random.Generator, max_support: int = 12, max_intent: int = 3
                 ) -> LabelSpace:
    """A random label space with ``support_size <= max_support`` and at least two objects in use."""
    while True:
        C, A = (int(v) for v in rng.integers(1, 4, size=2))
        O = int(rng.integers(2, 4))
        S = int(rng.integers(1, 3))
        M = int(rng.integers(min(2, max_intent), max_intent + 1))
        all_cfg = [(c, o, a, p) for c in range(C) for o in range(O) for a in range(A)
                   for p in range(3)]
        n_cfg = int(rng.integers(2, max(2, max_support // S) + 1))
        if n_cfg > len(all_cfg):
            continue
        pick = rng.choice(len(all_cfg), size=n_cfg, replace=False)
        if len({all_cfg[i][1] for i in pick}) < 2:
            continue
        return LabelSpace(C, O, A, 3, S, M, tuple(all_cfg[i] for i in sorted(pick)))


def random_toy(seed: int, max_frames: int = 4, max_support: int = 12, max_intent: int = 3):
    """``(field, truth)``: a random field with per-frame mu and random term weights."""
    rng = np.random.default_rng(seed)
    space = random_space(rng, max_support, max_intent)
    T = int(rng.integers(min(2, max_frames), max_frames + 1))
    cfg = KernelConfig(sigma=float(rng.uniform(0.5, 3.0)), kernel_weight=float(rng.uniform(0.5, 2.0)))
    fld = FieldInstance.random(space, T, rng, scale=0.7, cfg=cfg, per_frame_mu=True)
    fld.term_weights = TermWeights(*(float(w) for w in rng.uniform(0.5, 1.5, size=4)))
    truth = rng.integers(space.support_size, size=T)
    return fld, truth


def analytic_gradients(fld: FieldInstance, truth, fault: str | None = None) -> dict:
    """``{table: array shaped like the table}`` from exact expectations."""
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    space = fld.space
    truth = np.asarray(truth, dtype=np.int64)
    ex = oracle.enumerate_exact(fld)
    o_star = space.sup_obj[truth]
    upper = np.triu(fld.kmat(), 1)
    star = np.eye(space.n_object)[o_star]
    ka_star, kb_star = upper @ star, upper.T @ star
    h_star_total = fld.fi[np.arange(fld.n_frames), o_star].sum(axis=0)
    out = {name: np.zeros_like(getattr(fld, name)) for name in FAMILIES}
    for i in range(fld.n_frames):
        sem = grad_semantic(space, ex.p_x[i], int(truth[i]), fld.term_weights)
        for name in ("op", "ap", "os", "coap"):
            out[name][i] = sem[name]
        out["fi"][i] = grad_frame_intent_joint(space, h_star_total, ex.p_obj_intent[i], int(truth[i]))
        out["mu"][i] = grad_mu_from_expectations(space.n_object, int(o_star[i]),
                                                 ka_star[i], kb_star[i],
                                                 ex.e_after[i], ex.e_before[i])
    if fault == "mu_sign":
        out["mu"] = -out["mu"]
    elif fault == "xi_sign":
        out["fi"] = -out["fi"]
    elif fault == "semantic_sign":
        for name in ("op", "ap", "os", "coap"):
            out[name] = -out[name]
    return out


@dataclass
class GradcheckReport:
    n_models: int = 0
    n_entries: int = 0
    tolerance: float = DEFAULT_TOLERANCE
    worst: dict = field(default_factory=dict)       # family -> worst relative error
    worst_at: dict = field(default_factory=dict)    # family -> (seed, table, index)

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance for v in self.worst.values())

    def record(self, seed, table, index, err) -> None:
        fam = FAMILIES[table]
        if err > self.worst.get(fam, -1.0):
            self.worst[fam] = err
            self.worst_at[fam] = (seed, table, tuple(int(i) for i in index))

    def lines(self) -> str:
        out = [f"{'PASS' if self.passed else 'FAIL'} models={self.n_models} "
               f"entries={self.n_entries} tolerance={self.tolerance:g}"]
        for fam in sorted(self.worst):
            seed, table, idx = self.worst_at[fam]
            out.append(f"{fam}\tworst={self.worst[fam]:.3e}\tseed={seed}\t{table}{list(idx)}")
        return "\n".join(out) + "\n"


def check_model(fld: FieldInstance, truth, report: GradcheckReport, seed=None,
                epsilon: float = DEFAULT_EPSILON, fault: str | None = None,
                budget: oracle.EnumerationBudget | None = None) -> None:
    oracle.check_budget(fld, budget)
    grads = analytic_gradients(fld, truth, fault)
    for table in FAMILIES:
        arr = getattr(fld, table)
        for index in np.ndindex(arr.shape):
            num = oracle.finite_diff_grad(fld, truth, table, index, epsilon, budget)
            report.record(seed, table, index, relative_error(float(grads[table][index]), num))
            report.n_entries += 1
    report.n_models += 1


def run_gradcheck(n_models: int = 20, seed: int = 0, epsilon: float = DEFAULT_EPSILON,
                  tolerance: float = DEFAULT_TOLERANCE, fault: str | None = None,
                  max_frames: int = 4, max_support: int = 12, max_intent: int = 3,
                  max_states: int = oracle.DEFAULT_MAX_STATES) -> GradcheckReport:
    """Raises ``oracle.BudgetExceeded`` before any work on a model that is too large."""
    report = GradcheckReport(tolerance=tolerance)
    budget = oracle.EnumerationBudget(max_states)
    for m in range(n_models):
        s = seed * 1_000_003 + m
        fld, truth = random_toy(s, max_frames, max_support, max_intent)
        check_model(fld, truth, report, s, epsilon, fault, budget)
    return report
