"""Patient-grouped cross-validation, classification metrics, pooled ROC/AUC,
and paired t-tests with a self-contained Student-t distribution."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import SingleClass, TooFewPatients, ZeroVariance
from .seeds import rng_for


# --- fold planning ---------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple          # k tuples of patient ids
    reference_patients: tuple

    @property
    def k(self) -> int:
        return len(self.folds)

    def all_patients(self):
        out = list(self.reference_patients)
        for fold in self.folds:
            out.extend(fold)
        return out


def plan_folds(manifest, k: int = 5, reference_fraction: float = 0.0, seed: int = 0) -> FoldPlan:
    """Seeded patient-level split into a reference pool plus k folds.

    Shuffled patients feed the reference pool until its sample count reaches
    round(reference_fraction * total); the rest are dealt largest-first onto
    the currently smallest fold, so fold sample counts stay approximately
    balanced without splitting any patient.
    """
    patients = manifest.patients()
    counts = {pid: 0 for pid in patients}
    for record in manifest.samples:
        counts[record.patient_id] += 1
    total = sum(counts.values())

    rng = rng_for(seed, "fold-plan")
    order = [patients[i] for i in rng.permutation(len(patients))]

    target = int(math.floor(reference_fraction * total + 0.5))
    reference = []
    taken = 0
    idx = 0
    while taken < target and idx < len(order):
        reference.append(order[idx])
        taken += counts[order[idx]]
        idx += 1
    remaining = order[idx:]
    if len(remaining) < k:
        raise TooFewPatients(
            f"{len(remaining)} patients left for {k} folds after the reference pool"
        )

    by_size = sorted(range(len(remaining)), key=lambda i: (-counts[remaining[i]], i))
    folds = [[] for _ in range(k)]
    loads = [0] * k
    for i in by_size:
        dest = loads.index(min(loads))
        folds[dest].append(remaining[i])
        loads[dest] += counts[remaining[i]]
    return FoldPlan(
        folds=tuple(tuple(f) for f in folds),
        reference_patients=tuple(reference),
    )


# --- metrics ---------------------------------------------------------------------


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn)

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp)

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(
            self.tp + other.tp, self.fp + other.fp,
            self.tn + other.tn, self.fn + other.fn,
        )


def confusion(labels, predictions, positive_class) -> Confusion:
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions must have equal length")
    pos = labels == positive_class
    hit = predictions == positive_class
    return Confusion(
        tp=int((pos & hit).sum()),
        fp=int((~pos & hit).sum()),
        tn=int((~pos & ~hit).sum()),
        fn=int((pos & ~hit).sum()),
    )


def roc_auc(scores, labels, positive_label=1):
    """ROC by sweeping distinct score thresholds (descending) and trapezoid
    AUC, which equals the tie-adjusted pairwise ranking probability."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == positive_label
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both classes present")

    order = np.argsort(-scores, kind="stable")
    sorted_pos = pos[order]
    sorted_scores = scores[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    for i in range(len(scores)):
        tp += int(sorted_pos[i])
        fp += int(~sorted_pos[i])
        if i + 1 == len(scores) or sorted_scores[i + 1] != sorted_scores[i]:
            points.append((fp / n_neg, tp / n_pos))
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return tuple(points), auc


# --- cross-validation ------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    fold_confusions: tuple
    fold_aucs: tuple
    pooled_confusion: Confusion
    pooled_roc: tuple
    pooled_auc: float

    @property
    def fold_accuracies(self):
        return tuple(c.accuracy for c in self.fold_confusions)

    @property
    def fold_sensitivities(self):
        return tuple(c.sensitivity for c in self.fold_confusions)

    @property
    def fold_specificities(self):
        return tuple(c.specificity for c in self.fold_confusions)

    def summary(self) -> dict:
        out = {}
        for name, values in (
            ("accuracy", self.fold_accuracies),
            ("sensitivity", self.fold_sensitivities),
            ("specificity", self.fold_specificities),
            ("auc", self.fold_aucs),
        ):
            arr = np.asarray(values)
            out[f"mean_{name}"] = float(arr.mean())
            out[f"std_{name}"] = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        out["pooled_accuracy"] = self.pooled_confusion.accuracy
        out["pooled_auc"] = self.pooled_auc
        return out


def cross_validate(
    X: np.ndarray,
    y: np.ndarray,
    patient_ids,
    plan: FoldPlan,
    fit_fn,
    score_fn,
    positive_label=1,
    extra_train_indices=None,
) -> EvalReport:
    """Hold out one fold of patients at a time.

    fit_fn(X_train, y_train) -> model; score_fn(model, X_test) ->
    (predicted labels, continuous scores). Samples of reference patients are
    excluded entirely unless listed in extra_train_indices, which are added
    to every fold's training side (never to a test side).
    """
    X = np.asarray(X)
    y = np.asarray(y)
    patient_ids = np.asarray(patient_ids)
    extra = np.zeros(len(y), dtype=bool)
    if extra_train_indices is not None:
        extra[np.asarray(extra_train_indices)] = True
    in_fold = np.zeros(len(y), dtype=bool)
    for fold in plan.folds:
        in_fold |= np.isin(patient_ids, fold)

    confusions = []
    aucs = []
    all_scores = []
    all_labels = []
    for fold in plan.folds:
        test_mask = np.isin(patient_ids, fold)
        train_mask = (in_fold & ~test_mask) | extra
        model = fit_fn(X[train_mask], y[train_mask])
        predictions, scores = score_fn(model, X[test_mask])
        confusions.append(confusion(y[test_mask], predictions, positive_label))
        _, fold_auc = roc_auc(scores, y[test_mask], positive_label)
        aucs.append(fold_auc)
        all_scores.append(np.asarray(scores, dtype=np.float64))
        all_labels.append(y[test_mask])

    pooled = confusions[0]
    for c in confusions[1:]:
        pooled = pooled + c
    roc_points, pooled_auc = roc_auc(
        np.concatenate(all_scores), np.concatenate(all_labels), positive_label
    )
    return EvalReport(
        fold_confusions=tuple(confusions),
        fold_aucs=tuple(aucs),
        pooled_confusion=pooled,
        pooled_roc=roc_points,
        pooled_auc=pooled_auc,
    )


# --- Student-t machinery ---------------------------------------------------------


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise ValueError("df must be positive")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return tail if t < 0 else 1.0 - tail


def student_t_ppf(q: float, df: float) -> float:
    """Quantile by bisection on the CDF (q in (0, 1))."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    lo, hi = -1.0, 1.0
    while student_t_cdf(lo, df) > q:
        lo *= 2.0
    while student_t_cdf(hi, df) < q:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if student_t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class TTestResult:
    mean_diff: float
    std_diff: float
    n: int
    t: float
    df: int
    p: float
    ci_low: float
    ci_high: float
    t_crit: float


def ttest_from_summary(mean_diff: float, std_diff: float, n: int) -> TTestResult:
    if n < 2:
        raise ValueError("need at least two pairs")
    if std_diff <= 0:
        raise ZeroVariance("paired differences have no spread")
    df = n - 1
    se = std_diff / math.sqrt(n)
    t = mean_diff / se
    p = 2.0 * (1.0 - student_t_cdf(abs(t), df))
    t_crit = student_t_ppf(0.975, df)
    return TTestResult(
        mean_diff=mean_diff,
        std_diff=std_diff,
        n=n,
        t=t,
        df=df,
        p=p,
        ci_low=mean_diff - t_crit * se,
        ci_high=mean_diff + t_crit * se,
        t_crit=t_crit,
    )


def paired_ttest(a, b) -> TTestResult:
    """Two-tailed paired t-test on per-fold metric vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("inputs must be equal-length vectors of length >= 2")
    diff = a - b
    sd = float(diff.std(ddof=1))
    if sd <= 0:
        raise ZeroVariance("paired differences are constant")
    return ttest_from_summary(float(diff.mean()), sd, len(diff))


# --- report output ---------------------------------------------------------------


def write_metrics_csv(report: EvalReport, path) -> None:
    summary = report.summary()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["fold", "tp", "fp", "tn", "fn", "accuracy", "sensitivity", "specificity", "auc"]
        )
        for i, (c, auc) in enumerate(zip(report.fold_confusions, report.fold_aucs), 1):
            writer.writerow(
                [i, c.tp, c.fp, c.tn, c.fn,
                 f"{c.accuracy:.6f}", f"{c.sensitivity:.6f}",
                 f"{c.specificity:.6f}", f"{auc:.6f}"]
            )
        pooled = report.pooled_confusion
        writer.writerow(
            ["pooled", pooled.tp, pooled.fp, pooled.tn, pooled.fn,
             f"{pooled.accuracy:.6f}", f"{pooled.sensitivity:.6f}",
             f"{pooled.specificity:.6f}", f"{report.pooled_auc:.6f}"]
        )
        writer.writerow(
            ["mean±std", "", "", "", "",
             f"{summary['mean_accuracy']:.6f}±{summary['std_accuracy']:.6f}",
             f"{summary['mean_sensitivity']:.6f}±{summary['std_sensitivity']:.6f}",
             f"{summary['mean_specificity']:.6f}±{summary['std_specificity']:.6f}",
             f"{summary['mean_auc']:.6f}±{summary['std_auc']:.6f}"]
        )


def write_roc_csv(points, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr"])
        for fpr, tpr in points:
            writer.writerow([f"{fpr:.6f}", f"{tpr:.6f}"])


def write_roc_svg(points, auc: float, path, size: int = 400) -> None:
    """Minimal standalone ROC figure: axes, diagonal, curve, AUC label."""
    pad = 40
    span = size - 2 * pad

    def sx(v):
        return pad + v * span

    def sy(v):
        return size - pad - v * span

    poly = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in points)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{sx(0)}" y1="{sy(0)}" x2="{sx(1)}" y2="{sy(0)}" stroke="black"/>',
        f'<line x1="{sx(0)}" y1="{sy(0)}" x2="{sx(0)}" y2="{sy(1)}" stroke="black"/>',
        f'<line x1="{sx(0)}" y1="{sy(0)}" x2="{sx(1)}" y2="{sy(1)}" stroke="#999" stroke-dasharray="4"/>',
        f'<polyline points="{poly}" fill="none" stroke="#c22" stroke-width="2"/>',
        f'<text x="{sx(0.55)}" y="{sy(0.08)}" font-size="14">AUC = {auc:.3f}</text>',
        f'<text x="{sx(0.35)}" y="{size - 8}" font-size="12">false positive rate</text>',
        f'<text x="12" y="{sy(0.35)}" font-size="12" transform="rotate(-90 12 {sy(0.35)})">true positive rate</text>',
        "</svg>",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
