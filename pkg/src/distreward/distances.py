"""Distance models over observations: a goal-conditioned regressor, a
time-contrastive embedding, and two non-learned baselines.

All models expose distance(s, g) -> float >= 0 on H x W observations.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import demos, metrics, nn

ENCODER_HIDDEN = (256, 128)
EMBED_DIM = 32
HEAD_HIDDEN = 64


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TripletConfig:
    margin: float = 0.2
    pos_window: int = demos.POSITIVE_WINDOW_STEPS
    neg_window: int = demos.NEGATIVE_WINDOW_STEPS
    batch: int = 32

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.pos_window <= 0 or self.neg_window <= self.pos_window:
            raise ValueError("windows must satisfy 0 < positive < negative")


def _flatten(obs):
    arr = np.asarray(obs, dtype=np.float64)
    return arr.reshape(arr.shape[0], -1) if arr.ndim == 3 else arr.reshape(1, -1)


def _encoder_net(in_width):
    return nn.mlp("encoder", (in_width, *ENCODER_HIDDEN, EMBED_DIM))


def _head_net():
    return nn.mlp("head", (2 * EMBED_DIM, HEAD_HIDDEN, 1), final="softplus")


class RegressionDistance:
    """d(s, g) regressed on step gaps; shared encoder, concatenated codes,
    softplus output head. Allowed to be asymmetric in (s, g)."""

    kind = "hold_r"

    def __init__(self, in_width, params=None, rng=None):
        self.encoder = _encoder_net(in_width)
        self.head = _head_net()
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = {**nn.init_params(self.encoder, rng),
                      **nn.init_params(self.head, rng)}
        self.params = params
        self.in_width = in_width

    def encode(self, obs_batch):
        return nn.forward(self.encoder, self.params, _flatten(obs_batch))

    def distance_batch(self, s_batch, g_batch):
        cs = self.encode(s_batch)
        cg = self.encode(g_batch)
        out = nn.forward(self.head, self.params, np.concatenate([cs, cg], axis=1))
        return out[:, 0]

    def distance(self, s, g):
        return float(self.distance_batch(_flatten(s), _flatten(g))[0])


class EmbeddingDistance:
    """Euclidean distance in a learned embedding; d(g, g) == 0 exactly."""

    kind = "hold_c"

    def __init__(self, in_width, params=None, rng=None, squared=False):
        self.encoder = _encoder_net(in_width)
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = nn.init_params(self.encoder, rng)
        self.params = params
        self.in_width = in_width
        self.squared = squared

    def embed(self, obs_batch):
        return nn.forward(self.encoder, self.params, _flatten(obs_batch))

    def distance_batch(self, s_batch, g_batch):
        diff = self.embed(s_batch) - self.embed(g_batch)
        sq = np.sum(diff * diff, axis=1)
        return sq if self.squared else np.sqrt(sq)

    def distance(self, s, g):
        return float(self.distance_batch(_flatten(s), _flatten(g))[0])


class PixelL2Distance:
    """Euclidean norm of the flattened pixel difference."""

    kind = "pixel_l2"

    def __init__(self, in_width=None):
        self.in_width = in_width
        self.params = {}

    def distance(self, s, g):
        s, g = np.asarray(s, dtype=np.float64), np.asarray(g, dtype=np.float64)
        if s.shape != g.shape:
            raise ValueError(f"dimension mismatch: {s.shape} vs {g.shape}")
        return float(np.linalg.norm((s - g).ravel()))

    def distance_batch(self, s_batch, g_batch):
        diff = _flatten(s_batch) - _flatten(g_batch)
        return np.linalg.norm(diff, axis=1)


@dataclass
class MixtureDistanceConfig:
    alpha: float = 0.005
    beta: float = 0.02
    gamma: float = 0.2

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) <= 0:
            raise ValueError("mixture coefficients must be positive")


class MixtureDistance:
    """Weighted mix of squared Euclidean and a Huber-style term over an
    embedding: alpha*||df||^2 + beta*sqrt(gamma + ||df||^2)."""

    kind = "mixture"

    def __init__(self, embedding, cfg=None):
        self.embedding = embedding
        self.cfg = cfg or MixtureDistanceConfig()
        self.params = embedding.params
        self.in_width = embedding.in_width

    def distance(self, s, g):
        diff = self.embedding.embed(s) - self.embedding.embed(g)
        sq = float(np.sum(diff * diff))
        return self.cfg.alpha * sq + self.cfg.beta * np.sqrt(self.cfg.gamma + sq)

    def distance_batch(self, s_batch, g_batch):
        diff = self.embedding.embed(s_batch) - self.embedding.embed(g_batch)
        sq = np.sum(diff * diff, axis=1)
        return self.cfg.alpha * sq + self.cfg.beta * np.sqrt(self.cfg.gamma + sq)


def _check_finite(loss, step):
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss at step {step}")


def _val_spearman(model, val_data):
    table = metrics.build_prediction_table(model, val_data)
    return metrics.spearman(table)


def train_hold_r(data, epochs=30, batch=64, lr=3e-4, seed=0, val_data=None,
                 batches_per_epoch=None):
    """Squared-error regression of step gaps on sampled frame pairs.

    Returns (model, history) where history has per-epoch mean loss and,
    when val_data is given, per-epoch validation Spearman; the returned
    model is the best-validation-Spearman snapshot.
    """
    if not data.trajectories:
        raise ValueError("empty dataset")
    h, w = data.frame_shape
    rng = np.random.default_rng(seed)
    model = RegressionDistance(h * w, rng=rng)
    opt = nn.OptimState(lr=lr)
    if batches_per_epoch is None:
        total = sum(len(t) for t in data.trajectories)
        batches_per_epoch = max(1, total // batch)

    history = {"loss": [], "val_spearman": []}
    best = (-2.0, None)
    step = 0
    for _ in range(epochs):
        losses = []
        for _ in range(batches_per_epoch):
            step += 1
            samples = demos.sample_regression_batch(
                data, batch, int(rng.integers(0, 2**31 - 1)))
            s = np.stack([x.s for x in samples]).reshape(batch, -1)
            g = np.stack([x.g for x in samples]).reshape(batch, -1)
            delta = np.array([[x.delta] for x in samples], dtype=np.float64)

            cs, cache_s = nn.forward_cached(model.encoder, model.params, s)
            cg, cache_g = nn.forward_cached(model.encoder, model.params, g)
            pred, cache_h = nn.forward_cached(
                model.head, model.params, np.concatenate([cs, cg], axis=1))
            err = pred - delta
            loss = float(np.mean(err**2))
            _check_finite(loss, step)
            losses.append(loss)

            grads_h, dconcat = nn.backward(model.head, model.params, cache_h,
                                           2.0 * err / batch)
            grads_s, _ = nn.backward(model.encoder, model.params, cache_s,
                                     dconcat[:, :EMBED_DIM])
            grads_g, _ = nn.backward(model.encoder, model.params, cache_g,
                                     dconcat[:, EMBED_DIM:])
            grads = dict(grads_h)
            for k in grads_s:
                grads[k] = grads_s[k] + grads_g[k]
            nn.opt_step(model.params, grads, opt)
        history["loss"].append(float(np.mean(losses)))
        if val_data is not None:
            rho = _val_spearman(model, val_data)
            history["val_spearman"].append(rho)
            if rho > best[0]:
                best = (rho, copy.deepcopy(model.params))
    if val_data is not None and best[1] is not None:
        model.params = best[1]
    return model, history


def train_hold_c(data, cfg=None, epochs=30, lr=1e-4, seed=0, val_data=None,
                 batches_per_epoch=None):
    """Time-contrastive triplet training: hinge on squared embedding
    distances with margin cfg.margin."""
    if not data.trajectories:
        raise ValueError("empty dataset")
    cfg = cfg or TripletConfig()
    h, w = data.frame_shape
    rng = np.random.default_rng(seed)
    model = EmbeddingDistance(h * w, rng=rng)
    opt = nn.OptimState(lr=lr)
    if batches_per_epoch is None:
        total = sum(len(t) for t in data.trajectories)
        batches_per_epoch = max(1, total // cfg.batch)

    history = {"loss": [], "val_spearman": []}
    best = (-2.0, None)
    step = 0
    for _ in range(epochs):
        losses = []
        for _ in range(batches_per_epoch):
            step += 1
            triplets = demos.sample_triplet_batch(
                data, cfg.batch, int(rng.integers(0, 2**31 - 1)),
                pos_window=cfg.pos_window, neg_window=cfg.neg_window)
            a = np.stack([t.anchor for t in triplets]).reshape(cfg.batch, -1)
            p = np.stack([t.positive for t in triplets]).reshape(cfg.batch, -1)
            q = np.stack([t.negative for t in triplets]).reshape(cfg.batch, -1)

            fa, cache_a = nn.forward_cached(model.encoder, model.params, a)
            fp, cache_p = nn.forward_cached(model.encoder, model.params, p)
            fq, cache_q = nn.forward_cached(model.encoder, model.params, q)
            dp = fa - fp
            dq = fa - fq
            viol = np.sum(dp * dp, axis=1) + cfg.margin - np.sum(dq * dq, axis=1)
            active = (viol > 0.0).astype(np.float64)[:, None]
            loss = float(np.mean(np.maximum(0.0, viol)))
            _check_finite(loss, step)
            losses.append(loss)

            scale = active / cfg.batch
            ga, _ = nn.backward(model.encoder, model.params, cache_a,
                                2.0 * (dp - dq) * scale)
            gp, _ = nn.backward(model.encoder, model.params, cache_p,
                                -2.0 * dp * scale)
            gq, _ = nn.backward(model.encoder, model.params, cache_q,
                                2.0 * dq * scale)
            grads = {k: ga[k] + gp[k] + gq[k] for k in ga}
            nn.opt_step(model.params, grads, opt)
        history["loss"].append(float(np.mean(losses)))
        if val_data is not None:
            rho = _val_spearman(model, val_data)
            history["val_spearman"].append(rho)
            if rho > best[0]:
                best = (rho, copy.deepcopy(model.params))
    if val_data is not None and best[1] is not None:
        model.params = best[1]
    return model, history


def pixel_l2_distance(s, g):
    return PixelL2Distance().distance(s, g)


def mixture_distance(model, cfg, s, g):
    return MixtureDistance(model, cfg).distance(s, g)


# --- checkpoints -------------------------------------------------------------

def save_model(path, model, extra_meta=None):
    meta = {"kind": model.kind, "in_width": model.in_width}
    if isinstance(model, EmbeddingDistance):
        meta["squared"] = model.squared
    if isinstance(model, MixtureDistance):
        meta["mixture"] = [model.cfg.alpha, model.cfg.beta, model.cfg.gamma]
        meta["squared"] = model.embedding.squared
    if extra_meta:
        meta.update(extra_meta)
    nn.save_checkpoint(path, model.params, meta)


def load_model(path):
    params, meta = nn.load_checkpoint(path)
    kind = meta.get("kind")
    in_width = meta.get("in_width")
    if kind == "hold_r":
        return RegressionDistance(in_width, params=params), meta
    if kind == "hold_c":
        return EmbeddingDistance(in_width, params=params,
                                 squared=meta.get("squared", False)), meta
    if kind == "pixel_l2":
        return PixelL2Distance(in_width), meta
    if kind == "mixture":
        emb = EmbeddingDistance(in_width, params=params,
                                squared=meta.get("squared", False))
        a, b, c = meta["mixture"]
        return MixtureDistance(emb, MixtureDistanceConfig(a, b, c)), meta
    raise ValueError(f"unknown model kind {kind!r}")
