"""Classifier tests: analytic margin geometry, an exhaustive dual-QP oracle,
probability calibration behaviour, and grid-search bookkeeping."""
import itertools
import math

import numpy as np
import pytest

from ramanfuse import bovw, dataio, svm
from ramanfuse.errors import (
    CalibrationFailed,
    DegenerateKernel,
    DimMismatch,
    SingleClass,
)


def dual_value(alpha, Q):
    return float(alpha.sum() - 0.5 * alpha @ Q @ alpha)


def qp_oracle(K, y, C):
    """Global maximum of the dual by enumerating active-set assignments.

    Every variable is pinned at 0, pinned at C, or left free; the free block
    plus the equality multiplier solve a small linear system.  Any assignment
    whose solution is feasible gives a lower bound on the optimum, and the
    true optimum's own assignment is among them, so the best feasible value
    is exact.
    """
    n = len(y)
    Q = (y[:, None] * y[None, :]) * K
    best = -np.inf
    for assignment in itertools.product((0, 1, 2), repeat=n):
        state = np.array(assignment)
        free = np.flatnonzero(state == 2)
        at_c = np.flatnonzero(state == 1)
        alpha = np.zeros(n)
        alpha[at_c] = C
        if free.size:
            nf = free.size
            system = np.zeros((nf + 1, nf + 1))
            system[:nf, :nf] = Q[np.ix_(free, free)]
            system[:nf, nf] = y[free]
            system[nf, :nf] = y[free]
            rhs = np.zeros(nf + 1)
            rhs[:nf] = 1.0 - Q[np.ix_(free, at_c)] @ alpha[at_c]
            rhs[nf] = -y[at_c] @ alpha[at_c]
            solution, *_ = np.linalg.lstsq(system, rhs, rcond=None)
            if np.linalg.norm(system @ solution - rhs) > 1e-7 * (1 + np.linalg.norm(rhs)):
                continue
            alpha[free] = solution[:nf]
        if alpha.min() < -1e-9 or alpha.max() > C + 1e-9:
            continue
        if abs(y @ alpha) > 1e-9:
            continue
        best = max(best, dual_value(alpha, Q))
    return best


def random_instance(rng, n):
    X = rng.normal(size=(n, 3))
    while True:
        y = rng.choice([-1.0, 1.0], size=n)
        if len(np.unique(y)) == 2:
            return X, y


class TestTrainGeometry:
    def test_two_point_boundary_and_margin(self):
        X = np.array([[0.0], [2.0]])
        y = np.array([-1.0, 1.0])
        model = svm.train(X, y, svm.SvmConfig(C=2.0**15, kernel="linear"))
        assert abs(svm.decision(model, np.array([1.0]))) <= 1e-6
        assert svm.decision(model, np.array([0.0])) == pytest.approx(-1.0, rel=1e-3)
        assert svm.decision(model, np.array([2.0])) == pytest.approx(1.0, rel=1e-3)
        w = model.dual_coef @ model.support_vectors
        assert w[0] == pytest.approx(1.0, rel=1e-3)

    def test_four_point_max_margin_weight(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [2.0, 0.0], [2.0, 1.0]])
        y = np.array([-1.0, -1.0, 1.0, 1.0])
        model = svm.train(X, y, svm.SvmConfig(C=2.0**15, kernel="linear"))
        w = model.dual_coef @ model.support_vectors
        assert w[0] == pytest.approx(1.0, rel=1e-3)
        assert abs(w[1]) <= 1e-3
        assert model.bias == pytest.approx(-1.0, abs=1e-3)

    def test_xor_rbf_fits_training_set(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        y = np.array([-1.0, -1.0, 1.0, 1.0])
        model = svm.train(X, y, svm.SvmConfig(C=1e6, kernel="rbf", gamma=1.0))
        assert np.array_equal(svm.predict(model, X), y)

    def test_dual_feasibility(self):
        rng = np.random.default_rng(7)
        X = np.vstack([rng.normal(0, 1, (20, 4)), rng.normal(1.5, 1, (20, 4))])
        y = np.array([-1.0] * 20 + [1.0] * 20)
        for cfg in (
            svm.SvmConfig(C=1.0, kernel="linear"),
            svm.SvmConfig(C=4.0, kernel="rbf", gamma=0.5),
        ):
            model = svm.train(X, y, cfg)
            alpha = np.abs(model.dual_coef)
            assert alpha.min() > 0
            assert alpha.max() <= cfg.C + 1e-12
            assert abs(model.dual_coef.sum()) <= 1e-8

    def test_determinism(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(30, 5))
        y = np.where(X[:, 0] + 0.2 * rng.normal(size=30) > 0, 1.0, -1.0)
        if len(np.unique(y)) < 2:
            y[0] = -y[0]
        a = svm.train(X, y, svm.SvmConfig(C=2.0, kernel="rbf", gamma=0.25))
        b = svm.train(X, y, svm.SvmConfig(C=2.0, kernel="rbf", gamma=0.25))
        assert np.array_equal(a.support_vectors, b.support_vectors)
        assert np.array_equal(a.dual_coef, b.dual_coef)
        assert a.bias == b.bias

    def test_single_class_rejected(self):
        X = np.zeros((3, 2))
        with pytest.raises(SingleClass):
            svm.train(X, np.array([1.0, 1.0, 1.0]))

    def test_non_finite_kernel_rejected(self):
        X = np.array([[np.nan, 0.0], [1.0, 1.0]])
        y = np.array([-1.0, 1.0])
        with pytest.raises(DegenerateKernel):
            svm.train(X, y, svm.SvmConfig(C=1.0, kernel="rbf", gamma=1.0))


class TestOracle:
    def test_smo_matches_exhaustive_qp(self):
        rng = np.random.default_rng(99)
        sizes = [4, 5, 6, 7, 8, 4, 5, 6, 4, 5]
        c_values = [0.1, 1.0, 10.0]
        for trial in range(100):
            n = sizes[trial % len(sizes)]
            C = c_values[trial % len(c_values)]
            X, y = random_instance(rng, n)
            if trial % 2 == 0:
                cfg = svm.SvmConfig(C=C, kernel="linear", tol=1e-10)
                K = X @ X.T
            else:
                cfg = svm.SvmConfig(C=C, kernel="rbf", gamma=0.5, tol=1e-10)
                d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
                K = np.exp(-0.5 * d2)
            model = svm.train(X, y, cfg)
            achieved = svm.dual_objective(model)
            target = qp_oracle(K, y, C)
            assert achieved == pytest.approx(target, abs=1e-6 * (1 + abs(target)))


class TestDecisionPredict:
    def test_tie_goes_positive(self):
        model = svm.SvmModel(
            support_vectors=np.array([[1.0], [-1.0]]),
            dual_coef=np.array([1.0, -1.0]),
            bias=0.0,
            kernel="linear",
            gamma=1.0,
            C=1.0,
        )
        assert svm.decision(model, np.array([0.0])) == 0.0
        assert svm.predict(model, np.array([0.0])) == 1

    def test_dim_mismatch(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0]])
        model = svm.train(X, np.array([-1.0, 1.0]))
        with pytest.raises(DimMismatch):
            svm.decision(model, np.array([1.0, 2.0, 3.0]))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(12, 3))
        y = np.where(X[:, 1] > 0, 1.0, -1.0)
        if len(np.unique(y)) < 2:
            y[0] = -y[0]
        model = svm.train(X, y, svm.SvmConfig(C=1.0, kernel="rbf", gamma=0.3))
        batch = svm.decision(model, X)
        singles = [svm.decision(model, row) for row in X]
        assert np.allclose(batch, singles, rtol=1e-12, atol=1e-12)

    def test_save_load_preserves_decisions(self, tmp_path):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(20, 4))
        y = np.where(X[:, 0] - X[:, 2] > 0, 1.0, -1.0)
        if len(np.unique(y)) < 2:
            y[0] = -y[0]
        model = svm.train(X, y, svm.SvmConfig(C=3.0, kernel="rbf", gamma=0.7))
        model = svm.calibrate(model, X, y)
        path = tmp_path / "clf.json"
        dataio.save_model(model, path)
        loaded = dataio.load_model(path)
        probe = rng.normal(size=(10, 4))
        assert np.array_equal(svm.decision(model, probe), svm.decision(loaded, probe))
        assert np.array_equal(svm.predict_proba(model, probe), svm.predict_proba(loaded, probe))


def line_model():
    return svm.SvmModel(
        support_vectors=np.array([[1.0]]),
        dual_coef=np.array([1.0]),
        bias=0.0,
        kernel="linear",
        gamma=1.0,
        C=1.0,
    )


class TestCalibration:
    def test_negative_slope_on_separated_data(self):
        X = np.array([[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]])
        y = np.array([-1.0, -1.0, -1.0, 1.0, 1.0, 1.0])
        calibrated = svm.calibrate(line_model(), X, y)
        assert calibrated.platt_a < 0

    def test_symmetric_balanced_midpoint(self):
        X = np.array([[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]])
        y = np.array([-1.0, -1.0, -1.0, 1.0, 1.0, 1.0])
        calibrated = svm.calibrate(line_model(), X, y)
        assert svm.predict_proba(calibrated, np.array([0.0])) == pytest.approx(0.5, abs=1e-6)

    def test_probabilities_monotone_in_decision(self):
        rng = np.random.default_rng(2)
        X = np.sort(rng.normal(size=40))[:, None]
        y = np.where(X[:, 0] + 0.3 * rng.normal(size=40) > 0, 1.0, -1.0)
        if len(np.unique(y)) < 2:
            y[0] = -y[0]
        calibrated = svm.calibrate(line_model(), X, y)
        probs = svm.predict_proba(calibrated, X)
        assert np.all(np.diff(probs) >= 0)
        assert probs.min() > 0 and probs.max() < 1

    def test_iteration_budget_enforced(self):
        X = np.array([[-1.0], [1.0]])
        y = np.array([-1.0, 1.0])
        with pytest.raises(CalibrationFailed):
            svm.calibrate(line_model(), X, y, max_iter=0)


def tiny_dataset(seed=0):
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0, 2 * math.pi, 30)
    ring = np.column_stack([np.cos(angles), np.sin(angles)]) * rng.uniform(0.9, 1.1, (30, 1))
    core = rng.normal(0, 0.15, (30, 2))
    X = np.vstack([ring, core])
    y = np.array([-1.0] * 30 + [1.0] * 30)
    order = rng.permutation(60)
    return X[order], y[order]


def two_folds(n):
    idx = np.arange(n)
    return [(idx[idx % 2 == 0], idx[idx % 2 == 1]), (idx[idx % 2 == 1], idx[idx % 2 == 0])]


class TestGridSearch:
    def test_enumeration_count_multimodal(self):
        keys = [
            (kd, kr)
            for kd in bovw.DP_DICTIONARY_SIZES
            for kr in bovw.RCI_DICTIONARY_SIZES
        ]
        entries = svm.enumerate_grid(keys)
        assert len(entries) == 20580
        assert len(svm.C_GRID) == 21
        assert len(svm.GAMMA_GRID) == 19
        assert svm.C_GRID[0] == 2.0**-5 and svm.C_GRID[-1] == 2.0**15
        assert svm.GAMMA_GRID[0] == 2.0**-15 and svm.GAMMA_GRID[-1] == 2.0**3

    def test_enumeration_order(self):
        entries = svm.enumerate_grid(["a", "b"], c_grid=(1.0, 2.0), gamma_grid=(4.0,))
        flat = [
            (e.feature_key, e.config.kernel, e.config.C, e.config.gamma if e.config.kernel == "rbf" else None)
            for e in entries
        ]
        assert flat == [
            (("a",), "linear", 1.0, None),
            (("a",), "linear", 2.0, None),
            (("a",), "rbf", 1.0, 4.0),
            (("a",), "rbf", 2.0, 4.0),
            (("b",), "linear", 1.0, None),
            (("b",), "linear", 2.0, None),
            (("b",), "rbf", 1.0, 4.0),
            (("b",), "rbf", 2.0, 4.0),
        ]

    def test_single_point_grid_returns_it(self):
        X, y = tiny_dataset()
        result = svm.grid_search(
            {("only",): X}, y, two_folds(60),
            c_grid=(2.0,), kernels=("linear",),
        )
        assert result.best.feature_key == ("only",)
        assert result.best.config.kernel == "linear"
        assert result.best.config.C == 2.0
        assert len(result.rows) == 1

    def test_selects_rbf_when_linear_cannot_separate(self):
        X, y = tiny_dataset()
        result = svm.grid_search(
            {("f",): X}, y, two_folds(60),
            c_grid=(1.0, 100.0), gamma_grid=(1.0,),
        )
        assert result.best.config.kernel == "rbf"
        assert result.mean_accuracy > 0.9

    def test_first_max_tie_break(self):
        X, y = tiny_dataset(3)
        result = svm.grid_search(
            {("first",): X, ("second",): X.copy()}, y, two_folds(60),
            c_grid=(1.0,), gamma_grid=(1.0,),
        )
        assert result.best.feature_key == ("first",)

    def test_parallel_matches_serial(self):
        X, y = tiny_dataset(4)
        kwargs = dict(c_grid=(0.5, 8.0), gamma_grid=(0.5,))
        serial = svm.grid_search({("f",): X}, y, two_folds(60), **kwargs)
        parallel = svm.grid_search({("f",): X}, y, two_folds(60), jobs=2, **kwargs)
        assert serial.rows == parallel.rows
        assert serial.best == parallel.best

    def test_report_round_trip(self, tmp_path):
        X, y = tiny_dataset(5)
        result = svm.grid_search(
            {("f", 10): X}, y, two_folds(60),
            c_grid=(1.0, 4.0), gamma_grid=(0.25,),
        )
        path = tmp_path / "grid.csv"
        svm.write_grid_report(result, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == len(result.rows) + 1
        assert lines[0].startswith("feature_key,kernel,C,gamma,fold_1_accuracy")
        recorded_means = [float(line.rsplit(",", 1)[1]) for line in lines[1:]]
        assert recorded_means == [
            pytest.approx(row[5], abs=5e-7) for row in result.rows
        ]
