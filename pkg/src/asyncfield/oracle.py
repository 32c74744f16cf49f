"""Brute-force ground truth for toy fields.

Everything here enumerates every (assignment sequence, intent) pair, so it
is only usable when ``support_size ** T * n_intent`` fits the budget.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .kernels import numpy_impl
from .model import FieldInstance

DEFAULT_MAX_STATES = 2_000_000


class BudgetExceeded(RuntimeError):
    def __init__(self, state_count: int, max_states: int):
        super().__init__(f"enumeration needs {state_count} states, budget is {max_states}")
        self.state_count = state_count
        self.max_states = max_states


@dataclass(frozen=True)
class EnumerationBudget:
    max_states: int = DEFAULT_MAX_STATES

    def __post_init__(self):
        if self.max_states <= 0:
            raise ValueError("max_states must be positive")


def state_count(fld: FieldInstance) -> int:
    return fld.space.support_size ** fld.n_frames * fld.space.n_intent


def check_budget(fld: FieldInstance, budget: EnumerationBudget | None = None) -> int:
    budget = budget or EnumerationBudget()
    n = state_count(fld)
    if n > budget.max_states:
        raise BudgetExceeded(n, budget.max_states)
    return n


@dataclass
class ExactResult:
    log_z: float
    p_x: np.ndarray        # [T, K] frame marginals
    p_obj_intent: np.ndarray  # [T, O, M] joint of frame object and intent
    e_after: np.ndarray    # [T, O, O] E[1{o_i=a} sum_{j>i} 1{o_j=b} k_ij]
    e_before: np.ndarray   # [T, O, O] E[sum_{j<i} 1{o_j=a} k_ji 1{o_i=b}]
    p_intent: np.ndarray   # [M]


def enumerate_exact(fld: FieldInstance, budget: EnumerationBudget | None = None) -> ExactResult:
    check_budget(fld, budget)
    out = kernels.enumerate_field(fld.theta(), np.ascontiguousarray(fld.fi, dtype=float),
                                  fld.mu_per_frame(), fld.space.sup_obj,
                                  np.ascontiguousarray(fld.kmat()))
    return ExactResult(float(out[0]), *out[1:])


def partition_function(fld: FieldInstance, budget: EnumerationBudget | None = None) -> float:
    """log Z."""
    check_budget(fld, budget)
    return float(kernels.log_partition(fld.theta(), np.ascontiguousarray(fld.fi, dtype=float),
                                       fld.mu_per_frame(), fld.space.sup_obj,
                                       np.ascontiguousarray(fld.kmat())))


def exact_marginals(fld: FieldInstance, budget: EnumerationBudget | None = None):
    """``(p_x [T, K], p_intent [M])``."""
    r = enumerate_exact(fld, budget)
    return r.p_x, r.p_intent


def truth_log_numerator(fld: FieldInstance, truth) -> float:
    """log sum_I exp(score(truth, I)), computed directly (no enumeration)."""
    return float(logsumexp([fld.score(truth, I) for I in range(fld.space.n_intent)]))


def exact_loglik(fld: FieldInstance, truth, budget: EnumerationBudget | None = None) -> float:
    """log P(truth) with the intent summed out; ``truth`` is support indices."""
    return truth_log_numerator(fld, truth) - partition_function(fld, budget)


TABLES = ("op", "ap", "os", "coap", "fi", "mu")


def perturbed(fld: FieldInstance, table: str, index: tuple, delta: float) -> FieldInstance:
    if table not in TABLES:
        raise ValueError(f"unknown table {table!r}")
    out = fld.copy()
    getattr(out, table)[index] += delta
    return out


def finite_diff_grad(fld: FieldInstance, truth, table: str, index: tuple, epsilon: float = 1e-5,
                     budget: EnumerationBudget | None = None) -> float:
    """Central difference of the exact log-likelihood w.r.t. one table entry."""
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    check_budget(fld, budget)
    up = exact_loglik(perturbed(fld, table, index, epsilon), truth, budget)
    down = exact_loglik(perturbed(fld, table, index, -epsilon), truth, budget)
    return (up - down) / (2.0 * epsilon)


def _entropy(p) -> float:
    p = np.asarray(p)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def expected_score(fld: FieldInstance, q, q_intent) -> float:
    space = fld.space
    onehot = np.zeros((space.support_size, space.n_object))
    onehot[np.arange(space.support_size), space.sup_obj] = 1.0
    qo = q @ onehot
    s = float((q * fld.theta()).sum())
    s += float(np.einsum("to,tom,m->", qo, fld.fi, q_intent))
    km = fld.kmat()
    mu = fld.mu_per_frame()
    T = fld.n_frames
    for i in range(T):
        for j in range(i + 1, T):
            s += km[i, j] * float(qo[i] @ (mu[i] + mu[j]) @ qo[j])
    return s


def elbo(fld: FieldInstance, state) -> float:
    """E_Q[score] + H(Q) for the factorised Q = Q_I prod_i Q_i (closed form)."""
    q, q_int = state.q, state.q_intent
    ent = sum(_entropy(row) for row in q) + _entropy(q_int)
    return expected_score(fld, q, q_int) + ent


def kl_to_exact(fld: FieldInstance, state, budget: EnumerationBudget | None = None) -> float:
    """KL(Q || P) by explicit enumeration of both distributions."""
    check_budget(fld, budget)
    s = numpy_impl._score_tensor(fld.theta(), fld.fi, fld.mu_per_frame(), fld.space.sup_obj,
                                 fld.kmat())
    log_p = s - logsumexp(s)
    T = fld.n_frames
    log_q = np.zeros_like(s)
    with np.errstate(divide="ignore"):
        for i in range(T):
            shape = [1] * (T + 1)
            shape[i] = -1
            log_q = log_q + np.log(state.q[i]).reshape(shape)
        shape = [1] * T + [-1]
        log_q = log_q + np.log(state.q_intent).reshape(shape)
    qq = np.exp(log_q)
    mask = qq > 0
    return float((qq[mask] * (log_q[mask] - log_p[mask])).sum())
