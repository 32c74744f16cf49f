import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from asyncfield import FieldInstance, KernelConfig
from asyncfield.data import (UNLABELED, ActivityInterval, AnnotationError, Dataset,
                             GeneratorConfig, VideoRecord, frame_activity, generate_synthetic,
                             parse_annotations, progress_labels, rows_of, sample_equidistant)
from asyncfield.data import dataset_io
from asyncfield.data.synthetic import encoding_matrix, sample_labels, true_tables

from conftest import brute_marginals, toy_space


def _video(vid="v", T=3, F=2, labels=None, split="train"):
    return VideoRecord(vid, np.arange(T) * 2, np.arange(T) / 12.0, np.ones((T, F)),
                       labels if labels is not None else [UNLABELED] * T, split)


# records -----------------------------------------------------------------------------

def test_record_validation(space):
    with pytest.raises(ValueError):
        VideoRecord("v", [], [], np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        VideoRecord("v", [0, 0], [0, 0], np.zeros((2, 2)), [0, 0])
    with pytest.raises(ValueError):
        VideoRecord("v", [0, 1], [0, 1, 2], np.zeros((2, 2)), [0, 0])
    with pytest.raises(ValueError):
        VideoRecord("v", [0, 1], [0, 1], np.array([[0.0, np.nan], [0, 0]]), [0, 0])
    with pytest.raises(ValueError):
        Dataset(space, [_video("a"), _video("a")], 2)
    with pytest.raises(ValueError):
        Dataset(space, [_video("a", F=3)], 2)
    with pytest.raises(ValueError):
        Dataset(space, [_video("a", labels=[0, 12, 1])], 2)
    ds = Dataset(space, [_video("a", labels=[0, UNLABELED, 11]), _video("b", split="test")], 2)
    assert [v.video_id for v in ds.train] == ["a"] and [v.video_id for v in ds.test] == ["b"]
    assert list(ds.videos[0].labeled_rows()) == [0, 2]
    assert ds.videos[0].assignments(space)[1] is None


# dataset file --------------------------------------------------------------------------

def _small_ds(seed=0):
    cfg = GeneratorConfig(n_train=3, n_test=2, n_frames=4, distractor_dims=1)
    return generate_synthetic(toy_space(), cfg, seed=seed)[0]


def test_dataset_round_trip_byte_identical(tmp_path):
    ds = _small_ds()
    ds.videos[1].labels[2] = UNLABELED
    text = dataset_io.dumps(ds)
    back = dataset_io.loads(text)
    assert dataset_io.dumps(back) == text
    for a, b in zip(ds.videos, back.videos):
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.meta == b.meta and a.split == b.split
    dataset_io.save(ds, tmp_path / "d.jsonl")
    assert (tmp_path / "d.jsonl").read_text() == text
    assert dataset_io.dumps(dataset_io.load(tmp_path / "d.jsonl")) == text


def test_dataset_errors_carry_line_numbers():
    lines = dataset_io.dumps(_small_ds()).splitlines(keepends=True)
    with pytest.raises(dataset_io.DatasetFormatError, match="line 3"):
        dataset_io.loads("".join(lines[:2] + ["{not json\n"] + lines[3:]))
    bad = lines[2].replace('"frames"', '"framez"')
    with pytest.raises(dataset_io.DatasetFormatError, match="line 3"):
        dataset_io.loads("".join(lines[:2] + [bad] + lines[3:]))
    with pytest.raises(dataset_io.DatasetFormatError, match="line 1"):
        dataset_io.loads('{"format": "other"}\n')
    with pytest.raises(dataset_io.DatasetFormatError):
        dataset_io.loads("".join(lines[:-1]))
    with pytest.raises(dataset_io.DatasetFormatError):
        dataset_io.loads("")


# annotations ---------------------------------------------------------------------------

ANN = """id,subject,scene,actions
V1,s1,Kitchen,c008 11.90 21.20;c110 58.70 66.20
V2,s2,Hall,
V3,s3,Bed,c001 1.0 0.5
V4,s4,Bed,x12 0 1
"""


def test_parse_annotations_strict_and_lenient():
    with pytest.raises(AnnotationError, match="line 4"):
        parse_annotations(ANN)
    recs, errs = parse_annotations(ANN, strict=False)
    assert recs[0] == ("V1", [ActivityInterval(8, 11.9, 21.2), ActivityInterval(110, 58.7, 66.2)])
    assert recs[1] == ("V2", [])
    assert [e.line for e in errs] == [4, 5]
    recs, errs = parse_annotations(ANN, n_category=100, strict=False)
    assert len(recs) == 1 and [e.line for e in errs] == [2, 4, 5]


def test_progress_examples():
    iv = ActivityInterval(0, 0.0, 3.0)
    assert [progress_labels(iv, t) for t in (0.0, 0.99, 1.0, 1.5, 2.0, 2.5, 3.0)] == \
        [0, 0, 1, 1, 2, 2, 2]
    with pytest.raises(ValueError):
        progress_labels(iv, 3.01)
    with pytest.raises(ValueError):
        ActivityInterval(0, 2.0, 2.0)


@given(st.floats(-100, 100), st.floats(0.01, 100), st.floats(0, 1))
def test_progress_partitions_interval(start, length, frac):
    iv = ActivityInterval(0, start, start + length)
    t = start + frac * length
    if t > iv.end:
        t = iv.end
    p = progress_labels(iv, t)
    assert p in (0, 1, 2)
    # monotone in time
    assert progress_labels(iv, iv.start) == 0 and progress_labels(iv, iv.end) == 2
    assert p <= progress_labels(iv, min(iv.end, t + length / 3))


def test_frame_activity_midpoint_rule():
    a, b = ActivityInterval(1, 0.0, 10.0), ActivityInterval(2, 5.0, 7.0)
    assert frame_activity([a, b], 5.8) is b
    assert frame_activity([a, b], 5.0) is a
    assert frame_activity([a, b], 1.0) is a
    assert frame_activity([a, b], 11.0) is None
    c = ActivityInterval(3, 5.0, 7.0)
    assert frame_activity([b, c], 6.0) is b
    assert frame_activity([c, b], 6.0) is c


# sampling ----------------------------------------------------------------------------

def test_sample_equidistant_examples():
    assert list(sample_equidistant(np.arange(25), 25)) == list(range(25))
    assert list(sample_equidistant(np.arange(10, 20), 2)) == [10, 19]
    assert list(sample_equidistant(np.arange(241), 25)) == list(range(0, 241, 10))
    assert list(sample_equidistant(np.arange(3), 10)) == [0, 1, 2]
    assert list(sample_equidistant([5, 9], 1)) == [5]
    with pytest.raises(ValueError):
        sample_equidistant([], 3)
    v = _video(T=6)
    picks = sample_equidistant(v, 3)
    assert list(rows_of(v, picks)) == [0, 2, 5] or list(rows_of(v, picks)) == [0, 3, 5]
    with pytest.raises(ValueError):
        rows_of(v, [1])


@given(st.integers(1, 300), st.integers(1, 40))
def test_sample_equidistant_properties(T, n):
    frames = np.arange(T) * 3
    out = sample_equidistant(frames, n)
    assert 1 <= len(out) <= min(n, T)
    assert np.all(np.diff(out) > 0) and set(out) <= set(frames)
    assert out[0] == frames[0]
    if n > 1:
        assert out[-1] == frames[-1]


# generator -----------------------------------------------------------------------------

def test_generator_deterministic():
    a, b = _small_ds(3), _small_ds(3)
    assert dataset_io.dumps(a) == dataset_io.dumps(b)
    assert dataset_io.dumps(a) != dataset_io.dumps(_small_ds(4))


def _theta_by_hand(space, tb):
    out = np.empty(space.support_size)
    for k in range(space.support_size):
        c, o, a, p, s, b = space.support[k]
        out[k] = tb["op"][o, p] + tb["ap"][a, p] + tb["os"][o, s] + tb["coap"][b]
    return out


def test_zero_coupling_frames_follow_unary_prior():
    space = toy_space()
    cfg = GeneratorConfig(n_train=400, n_test=0, n_frames=25, intent_strength=0.0, mu_diag=0.0,
                          mu_order=0.0, mu_cross=0.0, semantic_scale=0.7, burn_in=50)
    seed = 11
    tb = true_tables(space, cfg, np.random.default_rng(seed))
    ds, _ = generate_synthetic(space, cfg, seed=seed)
    labels = np.concatenate([v.labels for v in ds.videos])
    assert labels.size == 10_000
    p = np.exp(_theta_by_hand(space, tb))
    p /= p.sum()
    counts = np.bincount(labels, minlength=space.support_size)
    assert stats.chisquare(counts, p * labels.size).pvalue > 0.01
    # adjacent frames independent
    pairs = np.concatenate([np.stack([v.labels[:-1], v.labels[1:]], 1) for v in ds.videos])
    table = np.zeros((12, 12))
    np.add.at(table, (pairs[:, 0], pairs[:, 1]), 1)
    keep = table.sum(1) > 0
    assert stats.chi2_contingency(table[keep][:, keep]).pvalue > 0.01


def test_strong_diagonal_mu_raises_adjacent_agreement():
    space = toy_space()

    def agree(mu_diag):
        cfg = GeneratorConfig(n_train=60, n_test=0, n_frames=10, mu_diag=mu_diag, mu_order=0.0,
                              mu_cross=0.0, intent_strength=0.0, burn_in=100)
        ds, _ = generate_synthetic(space, cfg, seed=5)
        o = [space.sup_obj[v.labels] for v in ds.videos]
        return np.mean(np.concatenate([a[1:] == a[:-1] for a in o]))

    assert agree(1.5) > agree(0.0) + 0.2


def test_enumeration_sampling_matches_oracle():
    space = toy_space()
    cfg = GeneratorConfig(n_frames=2, frame_stride=2, sigma=3.0, semantic_scale=0.8)
    rng = np.random.default_rng(2)
    tb = true_tables(space, cfg, rng)
    n = 10_000
    xs, intents = sample_labels(space, tb, cfg, n, rng, method="enumerate")
    T, O, M = 2, space.n_object, space.n_intent
    fld = FieldInstance.zeros(space, T, KernelConfig(sigma=cfg.sigma), positions=[0.0, 2.0])
    fld.op[:] = tb["op"]
    fld.ap[:] = tb["ap"]
    fld.os[:] = tb["os"]
    fld.coap[:] = tb["coap"]
    fld.fi[:] = tb["xi"]
    fld.mu = tb["mu"].copy()
    px, pi = brute_marginals(fld)
    for t in range(T):
        emp = np.bincount(xs[:, t], minlength=12) / n
        assert np.all(np.abs(emp - px[t]) <= 3 * np.sqrt(px[t] * (1 - px[t]) / n) + 1e-12)
    emp = np.bincount(intents, minlength=M) / n
    assert np.all(np.abs(emp - pi) <= 3 * np.sqrt(pi * (1 - pi) / n))


def test_enumeration_budget_refused():
    space = toy_space()
    cfg = GeneratorConfig(n_frames=6, max_states=1000)
    tb = true_tables(space, cfg, np.random.default_rng(0))
    with pytest.raises(ValueError, match="budget"):
        sample_labels(space, tb, cfg, 5, np.random.default_rng(0), method="enumerate")


def test_encoding_matrix_one_hot(space):
    enc = encoding_matrix(space, 3)
    assert enc.shape == (12, 2 + 3 + 2 + 3 + 2 + 3)
    assert np.all(enc.sum(1) == 5) and np.all(enc[:, -3:] == 0)
    assert len({tuple(r) for r in enc}) == 12
