"""Attribute-conditioned Gaussian mixtures with exact diffused densities and scores.

Under the VP forward process a Gaussian component N(mu, Sigma) becomes
N(alpha_t mu, alpha_t^2 Sigma + sigma_t^2 I) at time t, so every perturbed
density p_t(x | s), and therefore every conditional score, is available in
closed form.  A ``ConditionalGmm`` is itself a score source: samplers and the
transition-point search call ``gmm.score(x, t, s)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from switchdiff.errors import ConfigError, InputError
from switchdiff.schedule import VpSchedule

ATTRIBUTES = (0, 1)
FAR_FIELD_LOG_DENSITY = -700.0
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Component:
    weight: float
    mean: tuple[float, ...]
    cov: tuple[tuple[float, ...], ...]

    @property
    def mean_array(self) -> np.ndarray:
        return np.asarray(self.mean, dtype=float)

    @property
    def cov_array(self) -> np.ndarray:
        return np.asarray(self.cov, dtype=float)

    def to_dict(self) -> dict:
        return {"weight": self.weight, "mean": list(self.mean), "cov": [list(r) for r in self.cov]}


def component(weight: float, mean, cov=None) -> Component:
    """Build a component from array-likes; ``cov=None`` means identity."""
    mean = np.asarray(mean, dtype=float).ravel()
    cov = np.eye(mean.size) if cov is None else np.asarray(cov, dtype=float)
    return Component(
        float(weight),
        tuple(float(v) for v in mean),
        tuple(tuple(float(v) for v in row) for row in cov),
    )


@dataclass(frozen=True)
class ConditionalGmm:
    """Per-attribute Gaussian mixtures plus an attribute prior.

    Attributes:
        components: maps each attribute in {0, 1} to its mixture components.
        prior: (p(s=0), p(s=1)).
        schedule: forward process used for the perturbed densities.
    """

    components: dict
    prior: tuple[float, float] = (0.5, 0.5)
    schedule: VpSchedule = field(default_factory=VpSchedule)

    def __post_init__(self):
        if set(self.components) != set(ATTRIBUTES):
            raise ConfigError("components must be given for attributes 0 and 1", "gmm.attributes")
        dims = set()
        for s, comps in self.components.items():
            if not comps:
                raise ConfigError("at least one component required", f"gmm.attributes.{s}")
            total = sum(c.weight for c in comps)
            if any(c.weight < 0 for c in comps) or abs(total - 1.0) > 1e-12:
                raise ConfigError(
                    f"weights must be nonnegative and sum to 1 (got {total!r})",
                    f"gmm.attributes.{s}",
                )
            for j, c in enumerate(comps):
                cov = c.cov_array
                d = len(c.mean)
                dims.add(d)
                path = f"gmm.attributes.{s}[{j}].cov"
                if cov.shape != (d, d):
                    raise ConfigError(f"covariance must be {d}x{d}", path)
                if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
                    raise ConfigError("covariance must be symmetric", path)
                if np.linalg.eigvalsh(cov).min() <= 0:
                    raise ConfigError("covariance must be positive definite", path)
        if len(dims) != 1:
            raise ConfigError("all components must share one data dimension", "gmm.attributes")
        p0, p1 = self.prior
        if min(p0, p1) < 0 or abs(p0 + p1 - 1.0) > 1e-12:
            raise ConfigError("prior must be two probabilities summing to 1", "gmm.prior")

    @property
    def data_dim(self) -> int:
        return len(self.components[0][0].mean)

    # -- exact sampling -------------------------------------------------

    def sample_data(self, n: int, seed: int) -> "LabeledSet":
        if n < 0:
            raise InputError("n must be nonnegative")
        rng = np.random.default_rng(seed)
        attrs = (rng.random(n) < self.prior[1]).astype(np.int64)
        points = np.empty((n, self.data_dim))
        for s in ATTRIBUTES:
            rows = np.flatnonzero(attrs == s)
            comps = self.components[s]
            weights = np.array([c.weight for c in comps])
            choice = rng.choice(len(comps), size=rows.size, p=weights)
            for j, c in enumerate(comps):
                sel = rows[choice == j]
                chol = np.linalg.cholesky(c.cov_array)
                z = rng.standard_normal((sel.size, self.data_dim))
                points[sel] = c.mean_array + z @ chol.T
        return LabeledSet(points, attrs, seed)

    # -- diffused densities ---------------------------------------------

    def perturbed_params(self, s: int, t: float) -> list[tuple[float, np.ndarray, np.ndarray]]:
        """Components of p_t(x | s) as (weight, alpha_t mu, alpha_t^2 Sigma + sigma_t^2 I)."""
        _check_attribute(s)
        alpha, sigma = self.schedule.marginal_coeffs(t)
        eye = np.eye(self.data_dim)
        return [
            (c.weight, alpha * c.mean_array, alpha**2 * c.cov_array + sigma**2 * eye)
            for c in self.components[s]
        ]

    def _component_terms(self, x: np.ndarray, t: float, s: int):
        """Per-component log N(x; m_k, C_k) and -C_k^{-1}(x - m_k), shapes (K, n), (K, n, d)."""
        logs, grads = [], []
        d = self.data_dim
        for _w, m, cov in self.perturbed_params(s, t):
            chol = np.linalg.cholesky(cov)
            diff = x - m
            z = solve_triangular(chol, diff.T, lower=True)
            logdet = 2.0 * np.log(np.diag(chol)).sum()
            logs.append(-0.5 * (z * z).sum(axis=0) - 0.5 * logdet - 0.5 * d * _LOG_2PI)
            grads.append(-cho_solve((chol, True), diff.T).T)
        return np.array(logs), np.array(grads)

    def log_density(self, x, t: float, s: int):
        x2, single = _as_batch(x, self.data_dim)
        logs, _ = self._component_terms(x2, t, s)
        logw = np.log([c.weight for c in self.components[s]])[:, None]
        out = logsumexp(logs + logw, axis=0)
        return float(out[0]) if single else out

    def unconditional_log_density(self, x, t: float):
        x2, single = _as_batch(x, self.data_dim)
        terms = []
        for s in ATTRIBUTES:
            if self.prior[s] > 0:
                terms.append(np.log(self.prior[s]) + self.log_density(x2, t, s))
        out = logsumexp(np.array(terms), axis=0)
        return float(out[0]) if single else out

    def analytic_score(self, x, t: float, s: int):
        """Exact grad_x log p_t(x | s) via log-sum-exp responsibilities.

        Rows whose component log-densities all fall below -700 use the score
        of the dominant component alone.
        """
        x2, single = _as_batch(x, self.data_dim)
        logs, grads = self._component_terms(x2, t, s)
        logw = np.log([c.weight for c in self.components[s]])[:, None]
        joint = logs + logw
        resp = np.exp(joint - logsumexp(joint, axis=0, keepdims=True))
        score = np.einsum("kn,knd->nd", resp, grads)
        far = logs.max(axis=0) < FAR_FIELD_LOG_DENSITY
        if np.any(far):
            dominant = np.argmax(logs[:, far], axis=0)
            score[far] = grads[dominant, np.flatnonzero(far)]
        return score[0] if single else score

    # score-source protocol
    def score(self, x, t: float, s: int):
        return self.analytic_score(x, t, s)

    def to_dict(self) -> dict:
        return {
            "data_dim": self.data_dim,
            "prior": list(self.prior),
            "attributes": {
                str(s): [c.to_dict() for c in self.components[s]] for s in ATTRIBUTES
            },
        }

    def fingerprint(self) -> str:
        blob = json.dumps(
            {"analytic": self.to_dict(), "schedule": self.schedule.to_dict()}, sort_keys=True
        )
        return "analytic:" + hashlib.sha256(blob.encode()).hexdigest()[:16]

    def is_single_gaussian(self) -> bool:
        return all(len(self.components[s]) == 1 for s in ATTRIBUTES)


def default_gmm(schedule: VpSchedule | None = None, separation: float = 2.0) -> ConditionalGmm:
    """Two-cluster benchmark: s=0 ~ N((-a, 0), I), s=1 ~ N((+a, 0), I)."""
    return ConditionalGmm(
        {0: (component(1.0, [-separation, 0.0]),), 1: (component(1.0, [separation, 0.0]),)},
        schedule=schedule or VpSchedule(),
    )


def _check_attribute(s):
    if s not in ATTRIBUTES:
        raise InputError(f"attribute must be 0 or 1, got {s!r}")


def _as_batch(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != d:
        raise InputError(f"expected points of dimension {d}, got shape {x.shape}")
    if not np.all(np.isfinite(x2)):
        raise InputError("x contains non-finite values")
    return x2, single


@dataclass
class LabeledSet:
    points: np.ndarray
    attributes: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.attributes = np.asarray(self.attributes, dtype=np.int64)
        if self.points.ndim != 2:
            raise InputError("points must be an n x d matrix")
        if self.points.shape[0] != self.attributes.shape[0]:
            raise InputError("row count of points must equal the number of attributes")
        if not np.isin(self.attributes, ATTRIBUTES).all():
            raise InputError("attributes must be 0 or 1")

    def __len__(self):
        return self.points.shape[0]

    def subset(self, s: int) -> np.ndarray:
        return self.points[self.attributes == s]

    @classmethod
    def concat(cls, *parts: "LabeledSet") -> "LabeledSet":
        return cls(
            np.vstack([p.points for p in parts]),
            np.concatenate([p.attributes for p in parts]),
        )

    def to_csv(self, path, label_column: str = "s") -> None:
        write_points_csv(path, self.points, self.attributes, label_column)

    @classmethod
    def from_csv(cls, path) -> "LabeledSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise InputError(f"{path}: empty CSV")
        header = rows[0]
        d = len(header) - 1
        if d < 1 or header[:d] != [f"x{i}" for i in range(d)]:
            raise InputError(f"{path}: header must be x0,...,x{{d-1}},<label>")
        data = np.array(rows[1:], dtype=float).reshape(-1, d + 1)
        return cls(data[:, :d], data[:, d].astype(np.int64))


def fmt(v: float) -> str:
    """Shortest round-trip float text; identical bytes for identical values."""
    return repr(float(v))


def write_points_csv(path, points, labels=None, label_column: str = "s") -> None:
    points = np.asarray(points, dtype=float)
    d = points.shape[1]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = [f"x{i}" for i in range(d)]
        if labels is not None:
            header.append(label_column)
        w.writerow(header)
        for i, row in enumerate(points):
            out = [fmt(v) for v in row]
            if labels is not None:
                out.append(str(int(labels[i])))
            w.writerow(out)
