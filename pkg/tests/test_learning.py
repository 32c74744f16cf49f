import dataclasses

import numpy as np
import pytest

from asyncfield import oracle
from asyncfield.data import GeneratorConfig, generate_synthetic
from asyncfield.inference import IncomingMessages
from asyncfield.learning import (FieldModel, TrainConfig, TrainingError, frame_accuracy,
                                 grad_frame_intent, grad_joint, grad_mu, grad_semantic,
                                 run_gradcheck, train, train_synchronous_baseline)
from asyncfield.learning import checkpoint
from asyncfield.learning.gradcheck import FAULTS, analytic_gradients
from asyncfield.learning.gradients import frame_gradients
from asyncfield.learning.provider import variant_flags
from asyncfield.model import KernelConfig, TermWeights
from asyncfield.runconfig import reference_config
from asyncfield.server import MessageStore, RemoteStore, serve_in_thread

from conftest import toy_space


def _state(model):
    return checkpoint.dumps(model)


@pytest.fixture(scope="module")
def small():
    cfg = GeneratorConfig(n_train=6, n_test=2, n_frames=5, distractor_dims=1, snr=2.0)
    ds, _ = generate_synthetic(toy_space(), cfg, seed=1)
    return ds


def _tcfg(**kw):
    base = dict(batch_size=8, epochs=2, learning_rate=0.05, mu_lr_scale=1.0, seed=3,
                h_mode=4.0, eval_videos=3)
    base.update(kw)
    return TrainConfig(**base)


# closed-form examples ----------------------------------------------------------------

def test_grad_joint_uniform(space):
    q = np.full(12, 1 / 12)
    g = grad_joint(space, q, 5)
    assert g[5] == pytest.approx(1 - 1 / 12) and np.allclose(np.delete(g, 5), -1 / 12)
    sem = grad_semantic(space, q, 5)
    b = 5 // 2
    assert sem["coap"][b] == pytest.approx(1 - 2 / 12)
    assert np.allclose(np.delete(sem["coap"], b), -2 / 12)
    # weights scale each sub-table
    w = grad_semantic(space, q, 5, TermWeights(2.0, 1.0, 1.0, 0.5))
    np.testing.assert_allclose(w["op"], 2 * sem["op"])
    np.testing.assert_allclose(w["coap"], 0.5 * sem["coap"])


def test_grad_frame_intent_uniform(space):
    # every object holds 4 of 12 support entries, so Q_obj is uniform 1/3
    g = grad_frame_intent(space, np.zeros(3), np.zeros(3), np.full(12, 1 / 12), np.full(3, 1 / 3), 0)
    o_star = space.sup_obj[0]
    expect = np.full((3, 3), -1 / 9)
    expect[o_star] += 1 / 3
    np.testing.assert_allclose(g, expect, atol=1e-15)


def test_grad_mu_hand_expansion(space):
    inc = IncomingMessages.zeros(3, 3)
    k = 0.6
    inc.ka_in = k * np.array([0.2, 0.8, 0.0])
    inc.ka_star_in = k * np.array([0.0, 1.0, 0.0])
    q = np.zeros(12)
    q[[0, 1]] = 0.25          # object 0
    q[[2, 3]] = 0.75          # object 1
    g = grad_mu(space, inc, q, 0)     # truth object 0; one later frame, no earlier ones
    expect = -np.outer([0.5 * 1, 0.0, 0.0], [0, 0, 0]) - np.outer([0.25 * 2, 0.75 * 2, 0], inc.ka_in)
    expect[0] += inc.ka_star_in
    np.testing.assert_allclose(g, expect, atol=1e-15)


def test_gradients_vanish_at_fixed_point(space):
    inc = IncomingMessages.zeros(3, 3)
    inc.h_star_in = np.array([0.3, -0.2, 0.1])
    inc.ka_in = inc.ka_star_in = np.array([0.0, 0.7, 0.0])
    inc.kb_in = inc.kb_star_in = np.array([0.4, 0.0, 0.0])
    fi = np.arange(9.0).reshape(3, 3) / 10
    k = 7
    q = np.eye(12)[k]
    h = inc.h_star_in + fi[space.sup_obj[k]]
    qi = np.exp(h - h.max()) / np.exp(h - h.max()).sum()
    b = frame_gradients(space, q, qi, inc, fi, k)
    for arr in (b.d_op, b.d_ap, b.d_os, b.d_coap, b.d_xi, b.d_mu):
        assert np.max(np.abs(arr)) < 1e-15


def test_single_frame_mu_gradient_zero(space):
    g = grad_mu(space, IncomingMessages.zeros(3, 3), np.full(12, 1 / 12), 4)
    assert np.all(g == 0)


def test_truth_checks(space):
    with pytest.raises(ValueError):
        grad_joint(space, np.full(12, 1 / 12), 12)
    with pytest.raises(FloatingPointError):
        frame_gradients(space, np.full(12, np.nan), np.full(3, 1 / 3),
                        IncomingMessages.zeros(3, 3), np.zeros((3, 3)), 0)


# gradient check ----------------------------------------------------------------------

def test_gradcheck_small_passes():
    rep = run_gradcheck(n_models=3, seed=7)
    assert rep.passed, rep.lines()
    assert set(rep.worst) == {"semantic", "frame_intent", "affinity"}
    assert rep.lines().startswith("PASS models=3")


@pytest.mark.parametrize("fault", FAULTS)
def test_gradcheck_detects_faults(fault):
    rep = run_gradcheck(n_models=2, seed=7, fault=fault)
    assert not rep.passed
    assert rep.lines().startswith("FAIL")


def test_gradcheck_budget():
    with pytest.raises(oracle.BudgetExceeded):
        run_gradcheck(n_models=1, max_states=10)


# provider ----------------------------------------------------------------------------

def _exact_ll(model, video):
    return oracle.exact_loglik(model.field(video), video.labels)


def test_backprop_matches_fd_of_exact_loglik(small):
    v = small.videos[0].subset([0, 2, 3])
    model = FieldModel.init(small.space, small.feature_dim, "full", KernelConfig(sigma=2.0),
                            TermWeights(1.3, 0.7, 1.0, 1.1), seed=4, init_scale=0.3,
                            weight_decay=0.0)
    model.mu[:] = np.random.default_rng(0).normal(scale=0.4, size=model.mu.shape)
    fld = model.field(v)
    T, O = fld.n_frames, small.space.n_object
    fld.mu = np.broadcast_to(model.mu, (T, O, O)).copy()
    tg = analytic_gradients(fld, v.labels)
    grads = model.provider.backprop({"op": tg["op"], "ap": tg["ap"], "os": tg["os"],
                                     "coap": tg["coap"], "xi": tg["fi"]}, v.features)
    rng = np.random.default_rng(1)
    eps = 1e-5
    for name in ("op", "ap", "os", "coap", "xi"):
        head = model.provider.heads[name]
        for _ in range(4):
            r, c = rng.integers(head.W.shape[0]), rng.integers(head.W.shape[1])
            old = head.W[r, c]
            head.W[r, c] = old + eps
            up = _exact_ll(model, v)
            head.W[r, c] = old - eps
            dn = _exact_ll(model, v)
            head.W[r, c] = old
            assert grads[name][0][r, c] == pytest.approx((up - dn) / (2 * eps), abs=1e-4, rel=1e-6)
        r = rng.integers(head.b.shape[0])
        old = head.b[r]
        head.b[r] = old + eps
        up = _exact_ll(model, v)
        head.b[r] = old - eps
        dn = _exact_ll(model, v)
        head.b[r] = old
        assert grads[name][1][r] == pytest.approx((up - dn) / (2 * eps), abs=1e-4, rel=1e-6)
    # shared mu: sum of per-frame gradients
    d_mu = tg["mu"].sum(axis=0)
    for idx in ((0, 1), (2, 2), (1, 0)):
        old = model.mu[idx]
        model.mu[idx] = old + eps
        up = _exact_ll(model, v)
        model.mu[idx] = old - eps
        dn = _exact_ll(model, v)
        model.mu[idx] = old
        assert d_mu[idx] == pytest.approx((up - dn) / (2 * eps), abs=1e-4, rel=1e-6)


def test_weight_decay_only_on_frame_intent(small):
    model = FieldModel.init(small.space, small.feature_dim, seed=0, weight_decay=0.01)
    prov = model.provider
    feats = small.videos[0].features[:3]
    zeros = {n: np.zeros((3,) + prov.shapes[n]) for n in prov.heads}
    g = prov.backprop(zeros, feats)
    for name, (dW, db) in g.items():
        if name == "xi":
            np.testing.assert_allclose(dW, -3 * 0.01 * prov.heads["xi"].W)
            np.testing.assert_allclose(db, -3 * 0.01 * prov.heads["xi"].b)
        else:
            assert not dW.any() and not db.any()


def test_backprop_order_independent(small, rng):
    model = FieldModel.init(small.space, small.feature_dim, seed=0)
    prov = model.provider
    feats = small.videos[1].features
    tg = {n: rng.normal(size=(feats.shape[0],) + prov.shapes[n]) for n in prov.heads}
    perm = rng.permutation(feats.shape[0])
    a = prov.backprop(tg, feats)
    b = prov.backprop({n: g[perm] for n, g in tg.items()}, feats[perm])
    for n in a:
        np.testing.assert_allclose(a[n][0], b[n][0], atol=1e-12)
        np.testing.assert_allclose(a[n][1], b[n][1], atol=1e-12)


def test_provider_rejects_bad_shapes(small):
    model = FieldModel.init(small.space, small.feature_dim)
    with pytest.raises(ValueError):
        model.provider.tables(np.zeros((2, small.feature_dim + 1)))
    with pytest.raises(ValueError):
        variant_flags("bogus")


# training ----------------------------------------------------------------------------

def test_zero_learning_rate_leaves_model_unchanged(small):
    model = FieldModel.init(small.space, small.feature_dim, seed=2)
    before = _state(model)
    train(small, model, cfg=_tcfg(learning_rate=0.0))
    assert _state(model) == before
    train_synchronous_baseline(small, model, cfg=_tcfg(learning_rate=0.0))
    assert _state(model) == before


def test_training_deterministic(small):
    a = FieldModel.init(small.space, small.feature_dim, seed=2)
    b = FieldModel.init(small.space, small.feature_dim, seed=2)
    _, la = train(small, a, cfg=_tcfg())
    _, lb = train(small, b, cfg=_tcfg())
    assert _state(a) == _state(b) and la.dumps() == lb.dumps()
    assert _state(a) != _state(FieldModel.init(small.space, small.feature_dim, seed=2))


def test_distributed_store_equals_local(small):
    cfg = _tcfg(discount=0.8)
    a = FieldModel.init(small.space, small.feature_dim, seed=5)
    b = a.copy()
    train(small, a, cfg=cfg)
    backing = MessageStore(3, 3, cfg.discount, cfg.h_mode, cfg.kernel_weighting)
    srv, addr = serve_in_thread(backing)
    try:
        with RemoteStore(addr, 3, 3) as remote:
            train(small, b, store=remote, cfg=cfg)
    finally:
        srv.shutdown()
        srv.server_close()
    assert _state(a) == _state(b)


def test_log_records(small):
    model = FieldModel.init(small.space, small.feature_dim, seed=2)
    _, log = train(small, model, cfg=_tcfg(eval_every=2))
    iters = log.of_kind("iter")
    assert len(iters) == 2 * 4                  # 30 frames in batches of 8, two epochs
    evals = log.of_kind("eval")
    assert [r["iteration"] for r in evals] == [2, 4, 4, 6, 8, 8]
    assert all(0 <= r["train_accuracy"] <= 1 and "heldout_accuracy" in r for r in evals)


@pytest.mark.parametrize("variant", ["no_pairwise", "no_intent", "semantic_only", "no_structure"])
def test_forced_tables_stay_zero(small, variant):
    model = FieldModel.init(small.space, small.feature_dim, variant, seed=1)
    train(small, model, cfg=_tcfg())
    flags = variant_flags(variant)
    t = model.provider.tables(small.videos[0].features)
    if not flags["pairwise"]:
        assert not model.mu.any()
    else:
        assert model.mu.any()
    if not flags["intent"]:
        assert not t["xi"].any()
    if not flags["structure"]:
        assert not t["op"].any() and not t["ap"].any()


def test_sync_baseline_ignores_discount(small):
    a = FieldModel.init(small.space, small.feature_dim, seed=6)
    b = a.copy()
    train_synchronous_baseline(small, a, cfg=_tcfg(discount=0.9, sync_videos_per_batch=2))
    train_synchronous_baseline(small, b, cfg=_tcfg(discount=0.3, h_mode="count",
                                                   sync_videos_per_batch=2))
    assert _state(a) == _state(b)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_errors(small):
    model = FieldModel.init(small.space, small.feature_dim)
    unl = dataclasses.replace(small.videos[0], labels=np.full(5, -1))
    with pytest.raises(TrainingError):
        train([unl], model, cfg=_tcfg(), heldout=[])
    with pytest.raises(TrainingError):
        train(small, model, cfg=_tcfg(learning_rate=1e308))
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig.from_entries({"bogus": 1})


# checkpoints -------------------------------------------------------------------------

def test_checkpoint_round_trip(small, tmp_path):
    model = FieldModel.init(small.space, small.feature_dim, "no_structure", KernelConfig(3.0, 0.5),
                            TermWeights(0.5, 1, 1, 2), seed=9)
    model.mu[:] = np.random.default_rng(0).normal(size=model.mu.shape)
    text = checkpoint.dumps(model)
    back = checkpoint.loads(text)
    assert checkpoint.dumps(back) == text
    np.testing.assert_array_equal(back.mu, model.mu)
    assert back.variant == "no_structure" and back.kernel_cfg == model.kernel_cfg
    v = small.videos[0]
    np.testing.assert_array_equal(back.field(v).theta(), model.field(v).theta())
    checkpoint.save(model, tmp_path / "m.json")
    assert (tmp_path / "m.json").read_text() == text
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads("{")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(text.replace('"version": 1', '"version": 99'))


# reference run -----------------------------------------------------------------------

@pytest.mark.slow
def test_reference_training_improves_by_epoch_two():
    rc = reference_config()
    ds, _ = generate_synthetic(rc.space, rc.gen, seed=rc.seed)
    cfg = dataclasses.replace(rc.train, epochs=2)
    improved = 0
    for seed in range(5):
        model = FieldModel.init(rc.space, ds.feature_dim, seed=seed, **rc.model_kw())
        start = frame_accuracy(model, ds.train)
        _, log = train(ds, model, cfg=dataclasses.replace(cfg, seed=seed), heldout=[])
        improved += log.of_kind("eval")[-1]["train_accuracy"] > start
    assert improved >= 4
