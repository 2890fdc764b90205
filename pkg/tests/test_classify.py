from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from squashloc.classify import (
    BundleEntry,
    BundleFormatError,
    ClassifierBundle,
    ClassLabel,
    FeatureBoundaryError,
    FeatureKind,
    IMPACT_CLASSES,
    MlpModel,
    StratificationError,
    TrainingConfig,
    crossvalidate,
    extract_t1,
    extract_t2,
    fuse,
    fusion_scores,
    metrics_from_confusion,
    predict,
    smote,
    train_binary,
)
from squashloc.classify.crossval import FittedBinary, select_cutoff, train_bundle
from squashloc.classify.fusion import manifest_path
from squashloc.classify.mlp import DegenerateLabelsError, DivergenceError, _backward, _bce_from_logits
from squashloc.classify.smote import balance
from squashloc.detect import Detection


def blobs(n=200, seed=0, dim=2, gap=3.0):
    rng = np.random.default_rng(seed)
    y = (np.arange(n) % 2).astype(int)
    X = rng.normal(size=(n, dim)) + gap * (2 * y[:, None] - 1)
    return X, y


def make_bundle(entries: dict[ClassLabel, tuple[float, float]]) -> ClassifierBundle:
    model = MlpModel.zeros([3, 1])
    return ClassifierBundle({c: BundleEntry(model, 0, "T1", cut, prec) for c, (cut, prec) in entries.items()})


class TestFeatures:
    def test_t1_length_and_alignment(self):
        x = np.arange(2000) / 2000
        f = extract_t1(x, Detection(300, 2, 9.0))
        assert len(f) == 601 and f.values[0] == x[0] and f.values[300] == x[300]
        assert f.channel == 2 and f.detection_index == 300

    def test_t1_offset(self):
        x = np.arange(1000.0) / 1000
        f = extract_t1(x, 5400, w=10, offset=5000)
        assert f.values[10] == x[400]

    def test_silence(self):
        assert not np.any(extract_t1(np.zeros(1000), 500).values)
        assert not np.any(extract_t2(np.zeros(1000), 500).values)

    @pytest.mark.parametrize("d", [299, 1700])
    def test_t1_boundary(self, d):
        with pytest.raises(FeatureBoundaryError):
            extract_t1(np.zeros(2000), d)

    def test_t2_boundary(self):
        with pytest.raises(FeatureBoundaryError):
            extract_t2(np.zeros(1000), 701)
        assert len(extract_t2(np.zeros(1000), 700)) == 300

    def test_t2_tone(self):
        w, k = 300, 7
        x = np.zeros(1000)
        x[100:400] = np.cos(2 * np.pi * k * np.arange(w) / w)
        v = extract_t2(x, 100, w).values
        assert set(np.argsort(v)[-2:]) == {k, w - k}

    def test_t2_parseval_direct_dft(self, rng):
        w = 64
        x = rng.normal(size=200)
        v = extract_t2(x, 50, w).values
        seg = x[50:50 + w]
        n = np.arange(w)
        direct = np.abs(np.exp(-2j * np.pi * np.outer(n, n) / w) @ seg)
        assert np.allclose(v, direct, atol=1e-10)
        assert np.sum(v**2) == pytest.approx(w * np.sum(seg**2), rel=1e-10)
        assert np.all(v >= 0)


class TestSmote:
    def test_midpoint_and_endpoints(self):
        X = np.array([[0.0, 0.0], [2.0, 2.0]])
        synth, pairs, u = smote(X, k=1, amount=50, rng_seed=3, return_pairs=True)
        for s, (i, j), t in zip(synth, pairs, u):
            assert np.allclose(s, X[i] + t * (X[j] - X[i]))
        # the segment map itself: u = 0, 0.5, 1
        for t, expected in ((0.0, [0, 0]), (0.5, [1, 1]), (1.0, [2, 2])):
            assert np.allclose(X[0] + t * (X[1] - X[0]), expected)

    def test_count(self, rng):
        X = rng.normal(size=(17, 4))
        for amount in (0.5, 1.0, 2.3):
            assert len(smote(X, 5, amount)) == int(np.floor(amount * 17))

    def test_segment_membership(self, rng):
        X = rng.normal(size=(40, 5))
        synth, pairs, u = smote(X, k=5, amount=25, rng_seed=1, return_pairs=True)
        assert len(synth) == 1000
        sq = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
        np.fill_diagonal(sq, np.inf)
        knn = np.argsort(sq, axis=1)[:, :5]
        for s, (i, j) in zip(synth, pairs):
            assert j in knn[i]
            d = X[j] - X[i]
            t = np.dot(s - X[i], d) / np.dot(d, d)
            assert -1e-12 <= t <= 1 + 1e-12
            assert np.allclose(X[i] + t * d, s, atol=1e-12)

    def test_new_points_differ(self, rng):
        X = rng.normal(size=(20, 3))
        synth, _, u = smote(X, 3, 2.0, return_pairs=True)
        for s, t in zip(synth, u):
            if t > 0:
                assert not np.any(np.all(np.isclose(X, s, rtol=0, atol=1e-14), axis=1))

    def test_deterministic(self, rng):
        X = rng.normal(size=(20, 3))
        assert np.array_equal(smote(X, rng_seed=9), smote(X, rng_seed=9))
        assert not np.array_equal(smote(X, rng_seed=9), smote(X, rng_seed=10))

    def test_too_few(self):
        with pytest.raises(ValueError):
            smote(np.zeros((5, 2)), k=5)

    def test_balance(self):
        X, y = blobs(40)
        keep = (y == 0) | (np.arange(40) < 12)
        Xb, yb = balance(X[keep], y[keep])
        assert np.sum(yb == 0) == np.sum(yb == 1) == 20


class TestMlp:
    def test_zero_model_half(self):
        assert predict(MlpModel.zeros([5, 10, 1]), np.ones(5)) == 0.5

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4))
    def test_output_in_unit_interval(self, x):
        model = MlpModel.init([4, 10, 10, 1], np.random.default_rng(0))
        assert 0.0 <= predict(model, x) <= 1.0

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            predict(MlpModel.zeros([5, 1]), np.ones(4))

    def test_backprop_matches_finite_differences(self, rng):
        model = MlpModel.init([3, 6, 5, 1], rng)
        X = rng.normal(size=(12, 3))
        y = (rng.uniform(size=12) > 0.5).astype(float)
        gW, gb = _backward(model, X, y)
        analytic = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(gW, gb)])
        theta = model.parameters()
        h = 1e-6
        numeric = np.empty_like(theta)

        def loss(t):
            model.set_parameters(t)
            return _bce_from_logits(model.logits(X), y)

        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            numeric[i] = (loss(theta + e) - loss(theta - e)) / (2 * h)
        model.set_parameters(theta)
        assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-8)

    def test_blobs_separable(self):
        X, y = blobs(400)
        model = train_binary(X, y, (10, 10), TrainingConfig(lr=0.05, epochs=50, seed=1))
        acc = np.mean((model.predict_proba(X) > 0.5) == y)
        assert acc >= 0.99
        Xh, yh = blobs(50, seed=9)
        held = Xh[yh == 1][0]
        assert predict(model, held) > 0.9

    def test_loss_decreases(self):
        X, y = blobs(200)
        model = train_binary(X, y, (10, 10), TrainingConfig(lr=0.01, epochs=5, seed=0))
        hist = model.history
        assert all(b < a for a, b in zip(hist, hist[1:])) and hist[-1] <= hist[0]

    def test_deterministic(self):
        X, y = blobs(100)
        a = train_binary(X, y, hyper=TrainingConfig(epochs=3, seed=4))
        b = train_binary(X, y, hyper=TrainingConfig(epochs=3, seed=4))
        assert np.array_equal(a.parameters(), b.parameters())

    def test_degenerate_labels(self):
        X, _ = blobs(20)
        with pytest.raises(DegenerateLabelsError):
            train_binary(X, np.ones(20))

    def test_divergence(self):
        X, y = blobs(50)
        with pytest.raises(DivergenceError) as info:
            train_binary(X * 1e150, y, hyper=TrainingConfig(lr=1e10, epochs=5))
        assert 1 <= info.value.epoch <= 5

    def test_default_shapes_train(self):
        from squashloc.classify.mlp import T1_HIDDEN, T2_HIDDEN

        X, y = blobs(64, dim=8)
        for hidden in (T1_HIDDEN, T2_HIDDEN):
            model = train_binary(X, y, hidden, TrainingConfig(epochs=2))
            assert len(model.weights) == len(hidden) + 1


class TestFusion:
    example = {
        ClassLabel.FRONT_WALL: (0.5, 0.93),
        ClassLabel.RACQUET: (0.5, 0.81),
        ClassLabel.FLOOR: (0.5, 0.0),
        ClassLabel.GLASS: (0.5, 0.0),
    }

    def test_hand_example(self):
        bundle = make_bundle(self.example)
        conf = {"front_wall": 0.9, "racquet": 0.6, "floor": 0.2, "glass": 0.1}
        scores = fusion_scores(conf, bundle)
        assert scores[ClassLabel.FRONT_WALL] == pytest.approx(0.4 / 0.5 * 0.93 / 1.74)
        assert round(scores[ClassLabel.FRONT_WALL], 4) == 0.4276
        assert round(scores[ClassLabel.RACQUET], 4) == 0.0931
        assert fuse(conf, bundle) is ClassLabel.FRONT_WALL

    def test_all_below_cut(self):
        bundle = make_bundle(self.example)
        assert fuse({c: 0.5 for c in IMPACT_CLASSES}, bundle) is ClassLabel.FALSE_EVENT

    def test_tie_order(self):
        bundle = make_bundle({c: (0.5, 0.5) for c in IMPACT_CLASSES})
        conf = {ClassLabel.FRONT_WALL: 0.2, ClassLabel.RACQUET: 0.8, ClassLabel.FLOOR: 0.8, ClassLabel.GLASS: 0.8}
        assert fuse(conf, bundle) is ClassLabel.RACQUET

    def test_missing_confidence(self):
        with pytest.raises(KeyError):
            fuse({"front_wall": 0.9}, make_bundle(self.example))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=4, max_size=4),
           st.lists(st.floats(0.01, 0.99), min_size=4, max_size=4),
           st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4),
           st.floats(0.01, 1.0))
    def test_properties(self, conf, cuts, precs, scale):
        bundle = make_bundle({c: (cut, p) for c, cut, p in zip(IMPACT_CLASSES, cuts, precs)})
        scaled = make_bundle({c: (cut, p * scale) for c, cut, p in zip(IMPACT_CLASSES, cuts, precs)})
        confidences = dict(zip(IMPACT_CLASSES, conf))
        label = fuse(confidences, bundle)
        eligible = any(f > cut for f, cut in zip(conf, cuts))
        assert (label is ClassLabel.FALSE_EVENT) == (not eligible)
        assert fuse(confidences, scaled) is label

    def test_bundle_round_trip(self, tmp_path, rng):
        entries = {}
        for i, c in enumerate(IMPACT_CLASSES):
            model = MlpModel.init([7, 4, 3, 1], rng, "T2" if i % 2 else "T1")
            entries[c] = BundleEntry(model, i, "T2" if i % 2 else "T1", 0.3 + 0.1 * i, 0.9 - 0.1 * i)
        bundle = ClassifierBundle(entries)
        path = bundle.save(tmp_path / "b.sqlb")
        loaded = ClassifierBundle.load(path)
        x = rng.uniform(size=7)
        for c in IMPACT_CLASSES:
            a, b = bundle.entries[c], loaded.entries[c]
            assert np.array_equal(a.model.parameters(), b.model.parameters())
            assert (a.channel, a.input_kind, a.cutoff, a.precision) == (b.channel, b.input_kind, b.cutoff, b.precision)
            assert predict(a.model, x) == predict(b.model, x)
        manifest = json.loads(manifest_path(path).read_text())
        assert [e["class"] for e in manifest["entries"]] == [c.value for c in IMPACT_CLASSES]

    def test_bundle_corrupt(self, tmp_path):
        p = tmp_path / "x.sqlb"
        p.write_bytes(b"NOPE")
        with pytest.raises(BundleFormatError):
            ClassifierBundle.load(p)
        make_bundle(self.example).save(p)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(BundleFormatError):
            ClassifierBundle.load(p)

    def test_bundle_invariants(self):
        with pytest.raises(ValueError):
            make_bundle({ClassLabel.FRONT_WALL: (0.5, 0.5)})
        with pytest.raises(ValueError):
            make_bundle({c: (1.0, 0.5) for c in IMPACT_CLASSES})


def stub(predictor):
    def fit(X, y):
        return FittedBinary(predictor, 0.5)
    return fit


class TestCrossValidation:
    def test_confusion_example(self):
        m = metrics_from_confusion(tp=88, fn=12, fp=7, tn=893)
        assert round(m.accuracy, 3) == 0.981 and round(m.precision, 3) == 0.926 and m.recall == 0.88

    def test_perfect_stub(self):
        X, y = blobs(80)
        report = crossvalidate(X, y, stub(lambda Z: (Z[:, 0] > 0).astype(float)))
        assert len(report.folds) == 8
        assert all(m.accuracy == m.precision == m.recall == 1.0 for m in report.folds)

    def test_constant_negative_stub(self):
        X = np.arange(200.0)[:, None]
        y = (np.arange(200) % 10 == 0).astype(int)
        report = crossvalidate(X, y, stub(lambda Z: np.zeros(len(Z))))
        mean = report.mean
        assert mean.accuracy == pytest.approx(0.9) and mean.recall == 0.0
        assert mean.precision == 0.0 and mean.precision_degenerate

    def test_smote_only_in_training(self):
        X = np.arange(200.0)[:, None]
        y = (np.arange(200) % 10 == 0).astype(int)
        seen = []

        def fit(Xt, yt):
            seen.append(Xt[:, 0].copy())
            return FittedBinary(lambda Z: np.zeros(len(Z)), 0.5)

        with_smote = crossvalidate(X, y, fit, use_smote=True)
        without = crossvalidate(X, y, stub(lambda Z: np.zeros(len(Z))), use_smote=False)
        for a, b in zip(with_smote.validation_indices, without.validation_indices):
            assert np.array_equal(a, b)
        originals = set(X[:, 0])
        for valid, train_x in zip(with_smote.validation_indices, seen):
            # validation rows never feed training, and synthetic rows only appear in training
            assert not set(X[valid, 0]) & set(train_x)
            assert len(train_x) > 200 - len(valid)
            assert all(v in originals for v in X[valid, 0])

    def test_stratification_error(self):
        X = np.zeros((40, 2))
        y = np.zeros(40, dtype=int)
        y[:5] = 1
        with pytest.raises(StratificationError):
            crossvalidate(X, y, stub(lambda Z: np.zeros(len(Z))))

    def test_one_vs_rest_labels(self):
        X, y = blobs(64)
        labels = [ClassLabel.FLOOR if v else ClassLabel.GLASS for v in y]
        report = crossvalidate(X, labels, stub(lambda Z: (Z[:, 0] > 0).astype(float)),
                               positive=ClassLabel.FLOOR)
        assert report.mean.accuracy == 1.0

    def test_select_cutoff(self):
        conf = np.array([0.1, 0.2, 0.35, 0.7, 0.8])
        y = np.array([0, 0, 1, 1, 1])
        cut = select_cutoff(conf, y)
        assert 0.2 <= cut < 0.35

    def test_train_bundle_picks_informative_channel(self):
        rng = np.random.default_rng(0)
        n = 160
        classes = [IMPACT_CLASSES[i % 4] for i in range(n)]
        onehot = np.eye(4)[[i % 4 for i in range(n)]]
        informative = onehot * 3 + rng.normal(0, 0.3, (n, 4))
        noise = rng.normal(size=(n, 4))
        datasets = {(0, FeatureKind.T2): (noise, classes), (1, FeatureKind.T2): (informative, classes)}
        bundle = train_bundle(datasets, TrainingConfig(lr=0.05, epochs=30), folds=4,
                              hidden_for={FeatureKind.T2: (10, 10)})
        assert all(e.channel == 1 for e in bundle.entries.values())
        assert all(e.precision > 0.9 for e in bundle.entries.values())
