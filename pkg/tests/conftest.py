"""Shared fixtures and brute-force helpers for the test suite."""
from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.special import logsumexp

from asyncfield import FieldInstance, KernelConfig, LabelSpace
from asyncfield.model import joint_score

settings.register_profile("asyncfield", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("asyncfield")

TOY_CONFIGS = ((0, 0, 0, 0), (0, 1, 1, 1), (1, 2, 0, 2), (1, 0, 1, 0), (0, 2, 1, 2), (1, 1, 0, 1))

# lines printed by tests/test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def toy_space(n_intent: int = 3, n_scene: int = 2) -> LabelSpace:
    """2 categories, 3 objects, 2 actions; support size 6 * n_scene."""
    return LabelSpace(2, 3, 2, 3, n_scene, n_intent, TOY_CONFIGS)


def toy_field(seed: int, T: int = 3, scale: float = 1.0, per_frame_mu: bool = False,
              space: LabelSpace | None = None, sigma: float = 2.0) -> FieldInstance:
    rng = np.random.default_rng(seed)
    return FieldInstance.random(space or toy_space(), T, rng, scale=scale,
                                cfg=KernelConfig(sigma=sigma), per_frame_mu=per_frame_mu)


def brute_scores(fld: FieldInstance) -> np.ndarray:
    """Score of every (x_1..x_T, I) via ``joint_score``; shape ``[K]*T + [M]``.

    Independent of the enumeration kernels (plain Python loops over the
    model-level definitions); requires a shared mu.
    """
    space = fld.space
    K, M, T = space.support_size, space.n_intent, fld.n_frames
    pots = [fld.frame_potentials(t) for t in range(T)]
    out = np.empty([K] * T + [M])
    for xs in itertools.product(range(K), repeat=T):
        assign = [space.assignment(k) for k in xs]
        for intent in range(M):
            out[xs + (intent,)] = joint_score(pots, fld.fi, fld.mu, fld.kernel_cfg, assign,
                                              intent, fld.positions)
    return out


def brute_log_z(fld: FieldInstance) -> float:
    return float(logsumexp(brute_scores(fld)))


def brute_marginals(fld: FieldInstance):
    s = brute_scores(fld)
    p = np.exp(s - logsumexp(s))
    T = fld.n_frames
    px = np.stack([p.sum(axis=tuple(a for a in range(T + 1) if a != t)) for t in range(T)])
    return px, p.sum(axis=tuple(range(T)))


@pytest.fixture
def space():
    return toy_space()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
