"""Conditional noise-prediction MLP trained by denoising score matching.

The network maps (x_t, t, s) to a noise estimate eps_hat; the score it stands
for is -eps_hat / sigma_t.  Gradients are written out by hand and the
optimizer is a plain Adam, so the whole training loop is numpy only.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from switchdiff.errors import ConfigError, InputError, NumericalError
from switchdiff.gmm import ATTRIBUTES, ConditionalGmm, LabeledSet
from switchdiff.schedule import VpSchedule

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1
T_MIN = 1e-5
TIME_DIM = 16
ATTR_DIM = 8
HIDDEN = 128
# geometric ladder of angular frequencies over t in [0, 1]
TIME_FREQS = np.geomspace(1.0, 64.0, TIME_DIM // 2)
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "emb")


def time_embedding(t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    arg = t[:, None] * TIME_FREQS[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _silu_grad(a, sg):
    """d/da of a * sigmoid(a), given sg = sigmoid(a)."""
    return sg * (1.0 + a * (1.0 - sg))


class DenoiserMlp:
    """concat(x, time embedding, attribute embedding) -> 128 -> 128 -> eps_hat."""

    def __init__(self, data_dim: int = 2, seed: int = 0, params: dict | None = None):
        self.data_dim = data_dim
        if params is not None:
            self.params = {k: np.array(params[k], dtype=float) for k in PARAM_NAMES}
            self._check_shapes()
            return
        rng = np.random.default_rng(seed)
        n_in = data_dim + TIME_DIM + ATTR_DIM

        def dense(fan_in, fan_out):
            return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

        self.params = {
            "W1": dense(n_in, HIDDEN),
            "b1": np.zeros(HIDDEN),
            "W2": dense(HIDDEN, HIDDEN),
            "b2": np.zeros(HIDDEN),
            "W3": dense(HIDDEN, data_dim),
            "b3": np.zeros(data_dim),
            "emb": rng.standard_normal((len(ATTRIBUTES), ATTR_DIM)),
        }

    def _check_shapes(self):
        n_in = self.data_dim + TIME_DIM + ATTR_DIM
        expected = {
            "W1": (n_in, HIDDEN), "b1": (HIDDEN,), "W2": (HIDDEN, HIDDEN), "b2": (HIDDEN,),
            "W3": (HIDDEN, self.data_dim), "b3": (self.data_dim,),
            "emb": (len(ATTRIBUTES), ATTR_DIM),
        }
        for k, shape in expected.items():
            if self.params[k].shape != shape:
                raise InputError(f"parameter {k} has shape {self.params[k].shape}, expected {shape}")

    @classmethod
    def zeros(cls, data_dim: int = 2) -> "DenoiserMlp":
        model = cls(data_dim)
        for k in model.params:
            model.params[k] = np.zeros_like(model.params[k])
        return model

    def copy(self) -> "DenoiserMlp":
        return DenoiserMlp(self.data_dim, params={k: v.copy() for k, v in self.params.items()})

    # -- forward / backward ---------------------------------------------

    def _inputs(self, x, t, attr_emb):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.data_dim:
            raise InputError(f"expected x of shape (n, {self.data_dim}), got {x.shape}")
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        if np.any(t < 0) or np.any(t > 1):
            raise InputError("t must lie in [0, 1]")
        return np.concatenate([x, time_embedding(t), attr_emb], axis=1)

    def _attr_rows(self, s, n):
        s = np.broadcast_to(np.asarray(s, dtype=np.int64), (n,))
        if not np.isin(s, ATTRIBUTES).all():
            raise InputError("attribute must be 0 or 1")
        return s

    def _run(self, h0):
        p = self.params
        a1 = h0 @ p["W1"] + p["b1"]
        sg1 = expit(a1)
        h1 = a1 * sg1
        a2 = h1 @ p["W2"] + p["b2"]
        sg2 = expit(a2)
        h2 = a2 * sg2
        out = h2 @ p["W3"] + p["b3"]
        return out, (h0, a1, sg1, h1, a2, sg2, h2)

    def forward(self, x, t, s) -> np.ndarray:
        """Predicted noise for a batch x of shape (n, d); t and s broadcast over rows."""
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        rows = self._attr_rows(s, x2.shape[0])
        out, _ = self._run(self._inputs(x2, t, self.params["emb"][rows]))
        return out if np.ndim(x) == 2 else out[0]

    def forward_embedding_mix(self, x, t, s0: int, s1: int, p: float) -> np.ndarray:
        """Forward pass with the attribute embedding (1 - p) e[s0] + p e[s1]."""
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        e = (1.0 - p) * self.params["emb"][s0] + p * self.params["emb"][s1]
        out, _ = self._run(self._inputs(x2, t, np.broadcast_to(e, (x2.shape[0], ATTR_DIM))))
        return out if np.ndim(x) == 2 else out[0]

    def loss_and_grads(self, x_t, t, s, eps):
        """Mean over the batch of ||eps_hat - eps||^2 and its gradient for every parameter."""
        n = x_t.shape[0]
        rows = self._attr_rows(s, n)
        out, (h0, a1, sg1, h1, a2, sg2, h2) = self._run(self._inputs(x_t, t, self.params["emb"][rows]))
        resid = out - eps
        loss = float((resid * resid).sum() / n)
        p = self.params
        g_out = 2.0 * resid / n
        grads = {"W3": h2.T @ g_out, "b3": g_out.sum(axis=0)}
        g_a2 = (g_out @ p["W3"].T) * _silu_grad(a2, sg2)
        grads["W2"] = h1.T @ g_a2
        grads["b2"] = g_a2.sum(axis=0)
        g_a1 = (g_a2 @ p["W2"].T) * _silu_grad(a1, sg1)
        grads["W1"] = h0.T @ g_a1
        grads["b1"] = g_a1.sum(axis=0)
        g_h0 = g_a1 @ p["W1"].T
        g_emb = np.zeros_like(p["emb"])
        np.add.at(g_emb, rows, g_h0[:, self.data_dim + TIME_DIM:])
        grads["emb"] = g_emb
        return loss, grads

    # -- persistence ----------------------------------------------------

    def architecture(self) -> dict:
        return {
            "kind": "denoiser_mlp",
            "data_dim": self.data_dim,
            "time_dim": TIME_DIM,
            "time_freqs": [float(f) for f in TIME_FREQS],
            "attr_dim": ATTR_DIM,
            "hidden": [HIDDEN, HIDDEN],
            "activation": "silu",
            "output": "eps",
        }

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k in PARAM_NAMES:
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return "trained:" + h.hexdigest()[:16]


def score_from_eps(eps_hat, t, schedule: VpSchedule):
    """Score -eps_hat / sigma_t, with sigma clamped at sigma(1e-5) for tiny t."""
    sigma = schedule.sigma(max(float(t), T_MIN))
    return -np.asarray(eps_hat, dtype=float) / sigma


def eps_from_score(score, t, schedule: VpSchedule):
    sigma = schedule.sigma(max(float(t), T_MIN))
    return -np.asarray(score, dtype=float) * sigma


class NetworkScore:
    """Score source backed by a trained denoiser."""

    def __init__(self, model: DenoiserMlp, schedule: VpSchedule):
        self.model = model
        self.schedule = schedule
        self.data_dim = model.data_dim

    def score(self, x, t, s):
        return score_from_eps(self.model.forward(x, t, s), t, self.schedule)

    def mixed_embedding_score(self, x, t, s0, s1, p):
        return score_from_eps(self.model.forward_embedding_mix(x, t, s0, s1, p), t, self.schedule)

    def fingerprint(self) -> str:
        return self.model.fingerprint()


# -- training -------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    steps: int = 20000
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        for name in ("lr", "beta1", "beta2", "eps", "batch_size", "steps", "log_every"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", f"train.{name}")


class Adam:
    def __init__(self, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def noisy_batch(x0, schedule: VpSchedule, rng: np.random.Generator):
    """Draw t ~ U(1e-5, 1) and eps ~ N(0, I); return (x_t, t, eps)."""
    n, d = x0.shape
    t = rng.uniform(T_MIN, 1.0, size=n)
    eps = rng.standard_normal((n, d))
    alpha, sigma = schedule.marginal_coeffs(t)
    return alpha[:, None] * x0 + sigma[:, None] * eps, t, eps


def dsm_loss(model: DenoiserMlp, batch: LabeledSet, schedule: VpSchedule, rng) -> float:
    """Denoising score-matching loss mean ||eps_hat - eps||^2 on one noisy draw."""
    if len(batch) == 0:
        raise InputError("empty batch")
    x_t, t, eps = noisy_batch(batch.points, schedule, rng)
    resid = model.forward(x_t, t, batch.attributes) - eps
    return float((resid * resid).sum() / len(batch))


def train(
    model: DenoiserMlp,
    dataset: LabeledSet,
    config: TrainConfig,
    schedule: VpSchedule,
) -> tuple[DenoiserMlp, list[tuple[int, float]]]:
    """Run Adam on the DSM loss. Returns the trained model and (step, loss) records.

    Loss is recorded before the update at every ``log_every`` step and once more
    after the final update, on a fresh minibatch.
    """
    if len(dataset) == 0:
        raise InputError("empty training set")
    rng = np.random.default_rng(config.seed)
    opt = Adam(config.lr, config.beta1, config.beta2, config.eps)
    curve = []
    for step in range(config.steps):
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        x_t, t, eps = noisy_batch(dataset.points[idx], schedule, rng)
        loss, grads = model.loss_and_grads(x_t, t, dataset.attributes[idx], eps)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at step {step} (lr={config.lr})")
        if step % config.log_every == 0:
            curve.append((step, loss))
            log.debug("step %d loss %.5f", step, loss)
        opt.step(model.params, grads)
    idx = rng.integers(0, len(dataset), size=config.batch_size)
    x_t, t, eps = noisy_batch(dataset.points[idx], schedule, rng)
    final, _ = model.loss_and_grads(x_t, t, dataset.attributes[idx], eps)
    if not np.isfinite(final):
        raise NumericalError(f"non-finite loss after step {config.steps} (lr={config.lr})")
    curve.append((config.steps, final))
    return model, curve


def score_field_error(
    source,
    gmm: ConditionalGmm,
    times,
    n: int = 2000,
    seed: int = 0,
) -> float:
    """Mean over ``times`` of the relative L2 error sqrt(sum ||s_hat - s||^2 / sum ||s||^2).

    Points are drawn from p_t(x | s) for both attributes by diffusing exact
    data samples.
    """
    rng = np.random.default_rng(seed)
    errs = []
    for t in times:
        data = gmm.sample_data(n, int(rng.integers(2**31)))
        alpha, sigma = gmm.schedule.marginal_coeffs(t)
        x_t = alpha * data.points + sigma * rng.standard_normal(data.points.shape)
        num = den = 0.0
        for s in ATTRIBUTES:
            rows = data.attributes == s
            if not rows.any():
                continue
            exact = gmm.analytic_score(x_t[rows], t, s)
            approx = source.score(x_t[rows], t, s)
            num += float(((approx - exact) ** 2).sum())
            den += float((exact**2).sum())
        errs.append(np.sqrt(num / den))
    return float(np.mean(errs))


def save_checkpoint(
    path,
    model: DenoiserMlp,
    schedule: VpSchedule,
    config: TrainConfig,
    extra: dict | None = None,
) -> None:
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "architecture": model.architecture(),
        "weights": {
            k: {"shape": list(model.params[k].shape), "data": model.params[k].ravel().tolist()}
            for k in PARAM_NAMES
        },
        "schedule": schedule.to_dict(),
        "train": {"seed": config.seed, "config": asdict(config)},
    }
    if extra:
        doc.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[DenoiserMlp, VpSchedule, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise InputError(f"{path}: unsupported checkpoint schema {doc.get('schema_version')!r}")
    arch = doc["architecture"]
    if arch.get("kind") != "denoiser_mlp" or arch.get("hidden") != [HIDDEN, HIDDEN]:
        raise InputError(f"{path}: unsupported architecture {arch!r}")
    params = {
        k: np.asarray(w["data"], dtype=float).reshape(w["shape"]) for k, w in doc["weights"].items()
    }
    model = DenoiserMlp(arch["data_dim"], params=params)
    return model, VpSchedule(**doc["schedule"]), doc
