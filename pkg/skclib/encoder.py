"""Query/key contrastive encoders with a bilinear InfoNCE objective.

Encoder outputs have 2m real activations: the first m are the real parts of the latent modes and the
last m the imaginary parts. Gradients with respect to latents therefore map onto output activations
by as_real of the packed complex gradient.
"""

from dataclasses import dataclass, field
import json
import logging

import numpy as np
from scipy.special import logsumexp, softmax

from skclib.errors import EmptyInputError, SizeError
from skclib.nets import TanhMLP
from skclib.optim import SGD, Adam, pack_array, robbins_monro, unpack_array
from skclib.spectral import as_real

CHECKPOINT_VERSION = 1


@dataclass
class AugmentConfig:
    noise_sigma: float = 0.05
    mask_prob: float = 0.1
    version: int = 1

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

        if not 0.0 <= self.mask_prob < 1.0:
            raise ValueError("mask_prob must lie in [0, 1)")


@dataclass
class EncoderParams:
    query: TanhMLP
    key: TanhMLP
    W: np.ndarray
    m: int

    @property
    def d_obs(self):
        return self.query.sizes[0]

    @property
    def h(self):
        return self.query.sizes[1]

    @classmethod
    def init(cls, d_obs, h, m, rng, out_scale=0.1):
        query = TanhMLP([d_obs, h, 2 * m], rng, out_scale=out_scale)
        return cls(query, query.copy(), np.eye(2 * m), m)

    def copy(self):
        return EncoderParams(self.query.copy(), self.key.copy(), self.W.copy(), self.m)


def encode(net, obs, m=None):
    """Complex latents of obs (one row per observation; a 1-D obs gives a 1-D latent)."""
    obs = np.asarray(obs, dtype=float)
    out = net(obs)
    m = out.shape[-1] // 2 if m is None else m
    z = out[:, :m] + 1j * out[:, m:]
    return z[0] if obs.ndim == 1 else z


def augment(obs, cfg, rng):
    """Additive Gaussian noise, then each coordinate zeroed with probability mask_prob."""
    obs = np.asarray(obs, dtype=float)
    noisy = obs + cfg.noise_sigma * rng.normal(size=obs.shape)
    keep = rng.random(obs.shape) >= cfg.mask_prob
    return noisy * keep


def _flat(z):
    z = np.atleast_2d(np.asarray(z))
    return as_real(z) if np.iscomplexobj(z) else z.astype(float)


def infonce_from_logits(logits):
    """Mean over rows of -log softmax(logits)_ii, and its gradient (softmax - I)/N."""
    n = logits.shape[0]
    if n < 2:
        raise EmptyInputError("no negatives: InfoNCE needs a batch of at least 2")

    loss = float(np.mean(logsumexp(logits, axis=1) - np.diag(logits)))
    return loss, (softmax(logits, axis=1) - np.eye(n)) / n


def infonce_loss(zq, zpos, W):
    q, k = _flat(zq), _flat(zpos)
    if q.shape != k.shape:
        raise SizeError("query and key latents differ in shape")

    return infonce_from_logits(q @ W @ k.T)[0]


def infonce_grad(zq, zpos, W):
    """Returns (loss, dq, dk, dW) on the flattened real latents."""
    q, k = _flat(zq), _flat(zpos)
    loss, D = infonce_from_logits(q @ W @ k.T)
    return loss, D @ k @ W.T, D.T @ q @ W, q.T @ D @ k


def ema_update(key, query, tau):
    """key' = (1 - tau) key + tau query; returns a new network."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")

    out = key.copy()
    out.ema_from(query, tau)
    return out


def grad_encoder(params, obs, out_grads):
    """Backprop summed output gradients (e.g. {'cst': ..., 'pred': ..., 'task': ...}) through the query net.

    Each entry is dL/d(query output) with shape (N, 2m); complex entries are taken as packed latent
    gradients and flattened with as_real.
    """
    total = None
    for g in out_grads.values():
        if g is None:
            continue

        g = as_real(g) if np.iscomplexobj(g) else np.asarray(g, dtype=float)
        total = g if total is None else total + g

    _, inputs = params.query.forward(obs)
    if total is None:
        total = np.zeros((len(inputs[0]), 2 * params.m))

    return params.query.backward(inputs, total)[1]


def contrastive_step_grads(params, obs, cfg, rng):
    """One InfoNCE evaluation on a batch: query sees one augmentation, key another.

    Returns (loss, query-net grads, dW); the key net receives no gradient.
    """
    q_in = augment(obs, cfg, rng)
    k_in = augment(obs, cfg, rng)
    out_q, inputs = params.query.forward(q_in)
    out_k = params.key(k_in)
    loss, dq, _, dW = infonce_grad(out_q, out_k, params.W)
    grads = params.query.backward(inputs, dq)[1]
    return loss, grads, dW


def grad_sq_norm(grads, dW=None):
    s = sum(float(np.sum(g ** 2)) for g in grads.values())
    return s + (float(np.sum(dW ** 2)) if dW is not None else 0.0)


def cluster_sampler(centers, spread):
    """Batch sampler drawing one observation around each center."""
    centers = np.asarray(centers, dtype=float)

    def sample(rng):
        return centers + spread * rng.normal(size=centers.shape)

    return sample


@dataclass
class ContrastiveHistory:
    losses: list = field(default_factory=list)
    grad_sq: list = field(default_factory=list)
    running_min: list = field(default_factory=list)


def train_contrastive(params, sample_batch, steps, rng, cfg=None, lr=1e-3, optimizer="adam",
                      schedule="constant", T0=1000, tau=0.05):
    """Contrastive-only training loop used for the stationarity diagnostic.

    Tracks the running minimum of the squared gradient norm, which is non-increasing by construction.
    """
    cfg = AugmentConfig() if cfg is None else cfg
    opt = Adam(lr, 0.9, 0.999) if optimizer == "adam" else SGD(lr)
    hist = ContrastiveHistory()
    best = float("inf")
    for t in range(steps):
        obs = sample_batch(rng)
        loss, grads, dW = contrastive_step_grads(params, obs, cfg, rng)
        gsq = grad_sq_norm(grads, dW)
        best = min(best, gsq)
        hist.losses.append(loss)
        hist.grad_sq.append(gsq)
        hist.running_min.append(best)

        if schedule == "robbins_monro":
            opt.lr = robbins_monro(lr, t, T0)

        grads = dict(grads)
        grads["W_bil"] = dW
        stepped = opt.step(dict(params.query.params, W_bil=params.W), grads)
        params.W = stepped.pop("W_bil")
        params.query.params = stepped
        params.key = ema_update(params.key, params.query, tau)

    logging.debug("contrastive training: final loss " + "{:.4e}".format(hist.losses[-1] if hist.losses else 0.0)
                  + ", running-min grad^2 " + "{:.3e}".format(best))
    return hist


def encoder_to_dict(params, cfg):
    return {"version": CHECKPOINT_VERSION, "d_obs": params.d_obs, "h": params.h, "m": params.m,
            "query": params.query.to_dict(), "key": params.key.to_dict(), "W": pack_array(params.W),
            "augment": {"version": cfg.version, "noise_sigma": cfg.noise_sigma, "mask_prob": cfg.mask_prob}}


def encoder_from_dict(d):
    if int(d.get("version", 0)) != CHECKPOINT_VERSION:
        raise ValueError("unsupported encoder checkpoint version " + str(d.get("version")))

    params = EncoderParams(TanhMLP.from_dict(d["query"]), TanhMLP.from_dict(d["key"]), unpack_array(d["W"]),
                           int(d["m"]))
    if params.W.shape != (2 * params.m, 2 * params.m) or params.d_obs != int(d["d_obs"]):
        raise SizeError("encoder checkpoint shapes are inconsistent")

    a = d["augment"]
    return params, AugmentConfig(a["noise_sigma"], a["mask_prob"], a["version"])


def save_encoder(params, cfg, path):
    with open(path, 'w') as fp:
        json.dump(encoder_to_dict(params, cfg), fp)


def load_encoder(path):
    with open(path) as fp:
        return encoder_from_dict(json.load(fp))
