"""Fairness and utility measurements.

Fairness is the balanced error rate of an attribute probe,

    BER = (P(f(X) = 1 | S = 0) + P(f(X) = 0 | S = 1)) / 2,

measured with the cross-training protocol (train on synthetic, test on real,
and the reverse).  Utility is the Frechet distance between Gaussian fits in
raw coordinates, the mean unconditional log-likelihood under the ground
truth, and PCA projections onto axes fitted on reference data.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from switchdiff.errors import InputError, NumericalError
from switchdiff.gmm import ATTRIBUTES, ConditionalGmm, LabeledSet

PROBE_LR = 0.1
PROBE_STEPS = 2000
MLP_PROBE_HIDDEN = 32


@dataclass
class LinearClassifier:
    weights: np.ndarray
    bias: float
    train_accuracy: float

    def predict(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) @ self.weights + self.bias > 0).astype(np.int64)


@dataclass
class MlpClassifier:
    """One hidden tanh layer; optional alternative to the linear probe."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    train_accuracy: float

    def predict(self, x) -> np.ndarray:
        h = np.tanh(np.asarray(x, dtype=float) @ self.w1 + self.b1)
        return (h @ self.w2 + self.b2 > 0).astype(np.int64)


def _require_both(data: LabeledSet, what: str):
    for s in ATTRIBUTES:
        if not np.any(data.attributes == s):
            raise InputError(f"{what} has no points with attribute {s}")


def train_classifier(data: LabeledSet, seed: int = 0, probe: str = "linear"):
    """Full-batch gradient descent on the logistic loss (lr 0.1, 2000 steps).

    The linear probe starts from zero weights; ``seed`` only initialises the
    MLP probe.
    """
    _require_both(data, "training set")
    x, y = data.points, data.attributes.astype(float)
    n, d = x.shape
    if probe == "linear":
        w, b = np.zeros(d), 0.0
        for _ in range(PROBE_STEPS):
            r = expit(x @ w + b) - y
            w -= PROBE_LR * (x.T @ r) / n
            b -= PROBE_LR * r.mean()
        clf = LinearClassifier(w, float(b), 0.0)
    elif probe == "mlp":
        rng = np.random.default_rng(seed)
        w1 = rng.standard_normal((d, MLP_PROBE_HIDDEN)) / np.sqrt(d)
        b1 = np.zeros(MLP_PROBE_HIDDEN)
        w2 = rng.standard_normal(MLP_PROBE_HIDDEN) / np.sqrt(MLP_PROBE_HIDDEN)
        b2 = 0.0
        for _ in range(PROBE_STEPS):
            h = np.tanh(x @ w1 + b1)
            r = (expit(h @ w2 + b2) - y) / n
            gh = np.outer(r, w2) * (1.0 - h * h)
            w2 -= PROBE_LR * (h.T @ r)
            b2 -= PROBE_LR * r.sum()
            w1 -= PROBE_LR * (x.T @ gh)
            b1 -= PROBE_LR * gh.sum(axis=0)
        clf = MlpClassifier(w1, b1, w2, float(b2), 0.0)
    else:
        raise InputError(f"unknown probe {probe!r}")
    pred = clf.predict(x)
    if not np.all(np.isfinite(pred)):
        raise NumericalError("probe produced non-finite outputs")
    clf.train_accuracy = float(np.mean(pred == data.attributes))
    return clf


@dataclass
class FairnessReport:
    err_s0: float
    err_s1: float
    gap: float
    ber: float
    direction: str
    n_s0: int
    n_s1: int

    def to_dict(self) -> dict:
        return asdict(self)


def ber_from_predictions(pred, attributes, direction: str = "") -> FairnessReport:
    pred = np.asarray(pred)
    attributes = np.asarray(attributes)
    counts = {}
    for s in ATTRIBUTES:
        rows = attributes == s
        if not rows.any():
            raise InputError(f"evaluation set has no points with attribute {s}")
        counts[s] = int(rows.sum())
    err0 = float(np.mean(pred[attributes == 0] == 1))
    err1 = float(np.mean(pred[attributes == 1] == 0))
    return FairnessReport(err0, err1, abs(err0 - err1), (err0 + err1) / 2.0, direction, counts[0], counts[1])


def ber(classifier, eval_set: LabeledSet, direction: str = "") -> FairnessReport:
    return ber_from_predictions(classifier.predict(eval_set.points), eval_set.attributes, direction)


def cross_eval(
    synthetic: LabeledSet, real: LabeledSet, seed: int = 0, probe: str = "linear"
) -> tuple[FairnessReport, FairnessReport]:
    """(Syn->Orig, Orig->Syn) reports from two independently trained probes."""
    if len(synthetic) == 0 or len(real) == 0:
        raise InputError("cross evaluation needs nonempty synthetic and real sets")
    on_syn = train_classifier(synthetic, seed, probe)
    on_real = train_classifier(real, seed, probe)
    return ber(on_syn, real, "Syn->Orig"), ber(on_real, synthetic, "Orig->Syn")


# -- Frechet distance -------------------------------------------------------


def _psd_sqrt(m):
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _trace_sqrt_product(a, b) -> float:
    """Tr((a b)^{1/2}) through the symmetric form a^{1/2} b a^{1/2}."""
    ra = _psd_sqrt(a)
    m = ra @ b @ ra
    vals = np.linalg.eigvalsh(0.5 * (m + m.T))
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def gaussian_frechet(mu_a, cov_a, mu_b, cov_b) -> float:
    """Squared 2-Wasserstein distance between N(mu_a, cov_a) and N(mu_b, cov_b)."""
    mu_a, mu_b = np.asarray(mu_a, float), np.asarray(mu_b, float)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    diff = mu_a - mu_b
    # averaging both product orders makes the value exactly symmetric
    cross = 0.5 * (_trace_sqrt_product(cov_a, cov_b) + _trace_sqrt_product(cov_b, cov_a))
    val = float(diff @ diff) + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * cross
    return max(val, 0.0)


@dataclass
class FrechetResult:
    distance: float
    regularized: bool


def _fit(points, d):
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != d:
        raise InputError("point sets must share dimension")
    if points.shape[0] < d + 1:
        raise InputError(f"need at least {d + 1} points, got {points.shape[0]}")
    cov = np.atleast_2d(np.cov(points, rowvar=False))
    regularized = np.linalg.matrix_rank(cov) < d
    if regularized:
        cov = cov + 1e-8 * np.eye(d)
    return points.mean(axis=0), cov, regularized


def frechet_details(set_a, set_b) -> FrechetResult:
    d = np.asarray(set_a).shape[1]
    mu_a, cov_a, reg_a = _fit(set_a, d)
    mu_b, cov_b, reg_b = _fit(set_b, d)
    return FrechetResult(gaussian_frechet(mu_a, cov_a, mu_b, cov_b), bool(reg_a or reg_b))


def frechet_distance(set_a, set_b) -> float:
    return frechet_details(set_a, set_b).distance


# -- PCA ----------------------------------------------------------------------


@dataclass
class PcaResult:
    mean: np.ndarray
    axes: np.ndarray  # (2, d), rows are unit principal directions
    eigenvalues: np.ndarray
    projections: list[np.ndarray]
    iterations: list[int]


def power_iteration(cov, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0):
    """Dominant eigenpair of a symmetric PSD matrix."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(cov.shape[0])
    v /= np.linalg.norm(v)
    for it in range(1, max_iter + 1):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v, it
        w /= norm
        if np.linalg.norm(w - v) < tol:
            return float(w @ cov @ w), w, it
        v = w
    raise NumericalError(f"power iteration did not converge in {max_iter} iterations")


def pca_project(reference: LabeledSet | np.ndarray, targets, n_components: int = 2) -> PcaResult:
    """Top principal axes of the centred reference (power iteration with deflation);
    every target is projected with the reference mean and axes."""
    ref = reference.points if isinstance(reference, LabeledSet) else np.asarray(reference, float)
    if ref.shape[0] < 3:
        raise InputError("reference needs at least 3 points")
    mean = ref.mean(axis=0)
    cov = np.atleast_2d(np.cov(ref, rowvar=False))
    work = cov.copy()
    axes, vals, iters = [], [], []
    for k in range(min(n_components, cov.shape[0])):
        lam, v, it = power_iteration(work, seed=k)
        v = v * np.sign(v[np.argmax(np.abs(v))])  # deterministic sign
        axes.append(v)
        vals.append(lam)
        iters.append(it)
        work = work - lam * np.outer(v, v)
    axes = np.array(axes)
    projections = [(np.asarray(t, float) - mean) @ axes.T for t in targets]
    return PcaResult(mean, axes, np.array(vals), projections, iters)


def avg_loglik(samples, gmm: ConditionalGmm, t: float = 0.0) -> float:
    """Mean unconditional log-density of ``samples`` under the ground-truth mixture."""
    return float(np.mean(gmm.unconditional_log_density(np.atleast_2d(samples), t)))
