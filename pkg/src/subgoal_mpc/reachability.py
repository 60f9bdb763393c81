"""Travel-time distribution between object states, learned offline.

A 40-bin classifier p(k | o_a, o_b) predicts how many steps the random
data-collection policy needed between two states; the soft minimum

    d_hat = -alpha * log E_{k~p}[exp(-k / alpha)]

turns the distribution into a robust least-steps estimate, and a pair is
deemed reachable when d_hat is below the MPC horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import netcore as nc
from .autodiff import softmax_cross_entropy
from .datastore import Dataset, sample_distance_pairs
from .world2d import ensure_rng

N_BINS = 40


class DistanceModel:
    """Classifier over travel-time bins 1..40 with soft-min readout.

    Input features: both flattened states and their difference.
    """

    def __init__(self, state_dim: int, hidden: int = 128, alpha: float = 1.0,
                 horizon: int = 10, seed=0):
        self.state_dim = state_dim
        self.alpha = alpha
        self.horizon = horizon
        self.hyperparams = {"state_dim": state_dim, "hidden": hidden,
                            "alpha": alpha, "horizon": horizon}
        self.store = nc.ParamStore(seed)
        self.net = nc.MLP(self.store, "dist", [3 * state_dim, hidden, hidden, N_BINS])

    def features(self, o_a, o_b) -> np.ndarray:
        a = np.asarray(o_a, dtype=np.float64).reshape(-1, self.state_dim)
        b = np.asarray(o_b, dtype=np.float64).reshape(-1, self.state_dim)
        return np.concatenate([a, b, b - a], axis=1)

    def logits(self, o_a, o_b) -> np.ndarray:
        return self.net(self.features(o_a, o_b)).data

    def save(self, path):
        nc.save_checkpoint(path, "distance", self.store, self.hyperparams)

    @classmethod
    def load(cls, path) -> "DistanceModel":
        manifest, arrays = nc.load_checkpoint(path)
        hp = manifest["hyperparams"]
        model = cls(state_dim=hp["state_dim"], hidden=hp["hidden"],
                    alpha=hp["alpha"], horizon=hp["horizon"], seed=0)
        model.store.load_arrays(arrays)
        return model


def d_hat_from_probs(probs, alpha: float) -> np.ndarray | float:
    """Soft least-steps estimate from explicit bin probabilities (..., 40)."""
    probs = np.asarray(probs, dtype=np.float64)
    k = np.arange(1, N_BINS + 1)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    val = -alpha * logsumexp(logp - k / alpha, axis=-1)
    return float(val) if val.ndim == 0 else val


def d_hat_from_logits(logits, alpha: float) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    logp = logits - logsumexp(logits, axis=-1, keepdims=True)
    k = np.arange(1, N_BINS + 1)
    return -alpha * logsumexp(logp - k / alpha, axis=-1)


def d_hat(model: DistanceModel, o_a, o_b) -> np.ndarray | float:
    """Soft estimate of the least number of steps from o_a to o_b.

    Directed; accepts single states (K, 2) or batches (B, K, 2).
    """
    single = np.asarray(o_a).size == model.state_dim
    val = d_hat_from_logits(model.logits(o_a, o_b), model.alpha)
    return float(val[0]) if single else val


def is_reachable(model: DistanceModel, o_a, o_b) -> bool | np.ndarray:
    """True when d_hat(o_a, o_b) < horizon (strict)."""
    val = d_hat(model, o_a, o_b)
    if np.ndim(val) == 0:
        return bool(val < model.horizon)
    return val < model.horizon


def segment_lengths(model: DistanceModel, chain_goals: np.ndarray) -> np.ndarray:
    """d_hat over adjacent pairs of a chain (M, K, 2) -> (M-1,)."""
    goals = np.asarray(chain_goals, dtype=np.float64)
    return np.atleast_1d(d_hat(model, goals[:-1], goals[1:]))


@dataclass
class DistanceTrainConfig:
    epochs: int = 30
    batch_size: int = 256
    batches_per_epoch: int = 60
    lr: float = 1e-3
    hidden: int = 128
    alpha: float = 1.0
    horizon: int = 10


def train_distance_model(dataset: Dataset, epochs: int | DistanceTrainConfig,
                         rng_seed, pair_sampler=sample_distance_pairs,
                         log_every: int = 0) -> tuple[DistanceModel, list]:
    """Cross-entropy training on travel-time pairs; classification avoids
    the mean-collapse a regression would suffer on multimodal travel times."""
    cfg = epochs if isinstance(epochs, DistanceTrainConfig) else DistanceTrainConfig(epochs=epochs)
    state_dim = 2 * dataset.K
    model = DistanceModel(state_dim=state_dim, hidden=cfg.hidden, alpha=cfg.alpha,
                          horizon=cfg.horizon, seed=rng_seed)
    opt = nc.Adam(model.store, lr=cfg.lr)
    root = np.random.SeedSequence(rng_seed)
    losses = []
    for epoch, seq in enumerate(root.spawn(cfg.epochs)):
        rng = np.random.default_rng(seq)
        epoch_losses = []
        for _ in range(cfg.batches_per_epoch):
            pairs = pair_sampler(dataset, cfg.batch_size, rng)
            feats = np.concatenate([model.features(p.o_a, p.o_b) for p in pairs])
            labels = np.array([p.k - 1 for p in pairs])
            loss = softmax_cross_entropy(model.net(feats), labels)
            epoch_losses.append(loss.item())
            loss.backward()
            opt.step()
        losses.append(float(np.mean(epoch_losses)))
        if log_every and epoch % log_every == 0:
            print(f"  distance epoch {epoch:3d}  loss {losses[-1]:.4f}")
    return model, losses
