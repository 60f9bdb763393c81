"""DDPM noise schedule, training loss, and endpoint-pinned sampling.

One denoiser serves every hierarchy level: chains are (M, K, 2) arrays
flattened to (M, 2K) sequences, and the temporal U-Net is length
polymorphic. The first and last positions are conditioning (current and
goal states): during training they are overwritten with clean values and
excluded from the loss; during sampling they are re-imposed after every
denoising step and pinned exactly at the end.

The latent conditioning encoder is part of the same parameter store, so
its gradients flow from the denoising objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import netcore as nc
from .autodiff import Tensor, concat, mul, silu, time_resample, tmean, tsum
from .datastore import Dataset, SubgoalBatch, sample_subgoal_batch
from .world2d import ensure_rng


@dataclass(frozen=True)
class NoiseSchedule:
    alphas: np.ndarray      # (K,), alpha_k for k = 1..K
    alpha_bars: np.ndarray  # (K,), cumulative products

    @property
    def K(self) -> int:
        return self.alphas.shape[0]

    def alpha_bar_prev(self, k: int) -> float:
        """alpha_bar_{k-1} with the convention alpha_bar_0 = 1."""
        return 1.0 if k <= 1 else float(self.alpha_bars[k - 2])


def make_schedule(K: int, kind: str = "linear") -> NoiseSchedule:
    """Linear-beta schedule compressed from the reference 1000-step range."""
    if K < 1:
        raise ValueError("schedule needs at least one step")
    if kind != "linear":
        raise ValueError(f"unknown schedule kind: {kind}")
    betas = np.linspace(1e-4, 0.02, K) * (1000.0 / K)
    betas = np.clip(betas, 0.0, 0.999)
    alphas = 1.0 - betas
    if np.any(alphas <= 0.0) or np.any(alphas >= 1.0):
        raise ValueError("alphas out of (0, 1); adjust K")
    return NoiseSchedule(alphas=alphas, alpha_bars=np.cumprod(alphas))


def forward_noise(tau0: np.ndarray, k, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward marginal: sqrt(ab_k) tau0 + sqrt(1-ab_k) eps.

    k is 1-indexed; scalar or an array matching tau0's batch dimension.
    """
    tau0 = np.asarray(tau0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != tau0.shape:
        raise ValueError("noise shape must match data shape")
    k_arr = np.asarray(k)
    ab = schedule.alpha_bars[k_arr - 1]
    if k_arr.ndim > 0:
        extra = (1,) * (tau0.ndim - 1)
        ab = ab.reshape(ab.shape + extra)
    return np.sqrt(ab) * tau0 + np.sqrt(1.0 - ab) * eps


@dataclass
class SubgoalChain:
    """Ordered object states ending at the goal, (M, K, 2).

    Freshly generated chains have M >= 2 with the current state pinned at
    goals[0] and the goal at goals[-1]; pruning during execution may
    shorten the working chain down to the bare goal.
    """

    goals: np.ndarray
    level: int = 0

    def __post_init__(self):
        self.goals = np.asarray(self.goals, dtype=np.float64)
        if self.goals.ndim != 3 or self.goals.shape[0] < 1:
            raise ValueError("chain must be a nonempty (M, K, 2) array")

    def __len__(self) -> int:
        return self.goals.shape[0]


class SubgoalDenoiser:
    """Noise-prediction network with latent conditioning and scene context.

    Context vector = [step embedding | current enc | goal enc | pooled
    conditioning latents | SDF feature enc]; the conditioning latents are
    also channel-concatenated per position.
    """

    D_Z = 16
    TIME_DIM = 32

    def __init__(self, state_dim: int, sdf_dim: int = 36, base: int = 32,
                 mid: int = 64, seed=0):
        self.state_dim = state_dim
        self.sdf_dim = sdf_dim
        self.hyperparams = {"state_dim": state_dim, "sdf_dim": sdf_dim,
                            "base": base, "mid": mid}
        store = nc.ParamStore(seed)
        self.store = store
        self.f_phi = nc.MLP(store, "f_phi", [state_dim, 64, self.D_Z])
        self.time_mlp = nc.MLP(store, "time_mlp", [self.TIME_DIM, 64, 64])
        self.enc_cur = nc.Linear(store, "enc_cur", state_dim, 32)
        self.enc_goal = nc.Linear(store, "enc_goal", state_dim, 32)
        self.enc_pool = nc.Linear(store, "enc_pool", self.D_Z, 32)
        self.enc_sdf = nc.Linear(store, "enc_sdf", sdf_dim, 32)
        ctx_dim = 64 + 4 * 32
        self.unet = nc.TemporalUNet(store, "unet", in_ch=state_dim + self.D_Z,
                                    out_ch=state_dim, ctx_dim=ctx_dim,
                                    base=base, mid=mid)

    def encode(self, states) -> Tensor:
        """Latent encoding of object states (..., state_dim)."""
        return self.f_phi(states)

    def predict_eps(self, tau_k, k, cond_latents, cur, goal, sdf_feat=None,
                    keep_mask=None) -> Tensor:
        """Predict the noise in tau_k (B, M, state_dim).

        cond_latents: (B, M, D_Z) Tensor/array, or None for unconditioned
        prediction. keep_mask (B,) zeroes dropped conditioning rows.
        """
        tau_k = np.asarray(tau_k, dtype=np.float64) if not isinstance(tau_k, Tensor) else tau_k
        b, m, _ = tau_k.shape if isinstance(tau_k, np.ndarray) else tau_k.data.shape
        if cond_latents is None:
            cond_latents = Tensor(np.zeros((b, m, self.D_Z)))
        if keep_mask is not None:
            cond_latents = mul(cond_latents, np.asarray(keep_mask, dtype=np.float64).reshape(b, 1, 1))
        if sdf_feat is None:
            sdf_feat = np.zeros((b, self.sdf_dim))
        temb = self.time_mlp(nc.sinusoidal_embedding(k, self.TIME_DIM))
        cur_e = silu(self.enc_cur(np.asarray(cur, dtype=np.float64).reshape(b, -1)))
        goal_e = silu(self.enc_goal(np.asarray(goal, dtype=np.float64).reshape(b, -1)))
        pool_e = silu(self.enc_pool(tmean(cond_latents, axis=1)))
        sdf_e = silu(self.enc_sdf(np.asarray(sdf_feat, dtype=np.float64).reshape(b, -1)))
        ctx = concat([temb, cur_e, goal_e, pool_e, sdf_e], axis=1)
        x = concat([tau_k, cond_latents], axis=2)
        return self.unet(x, ctx)

    def save(self, path):
        nc.save_checkpoint(path, "denoiser", self.store, self.hyperparams)

    @classmethod
    def load(cls, path) -> "SubgoalDenoiser":
        manifest, arrays = nc.load_checkpoint(path)
        hp = manifest["hyperparams"]
        model = cls(state_dim=hp["state_dim"], sdf_dim=hp["sdf_dim"],
                    base=hp["base"], mid=hp["mid"], seed=0)
        model.store.load_arrays(arrays)
        return model


def _flatten(states: np.ndarray) -> np.ndarray:
    # (..., K, 2) -> (..., 2K)
    return np.asarray(states, dtype=np.float64).reshape(*states.shape[:-2], -1)


def denoise_loss(batch: list[SubgoalBatch], denoiser: SubgoalDenoiser,
                 schedule: NoiseSchedule, rng_seed, cond_dropout: float = 0.1) -> Tensor:
    """Noise-prediction MSE over non-pinned positions (scalar Tensor).

    Per item: a uniform diffusion step, Gaussian noise, forward noising,
    clean current/goal overwritten at the ends, then the squared error of
    the predicted noise on interior positions only. Conditioning latents
    come from the (noised) previous-level states, with random dropout to
    zero for robustness to poor coarse predictions.
    """
    rng = ensure_rng(rng_seed)
    by_level: dict[int, list[SubgoalBatch]] = {}
    for item in batch:
        by_level.setdefault(item.level, []).append(item)

    sq_terms = []
    total_count = 0
    for level in sorted(by_level):
        items = by_level[level]
        tau0 = np.stack([_flatten(it.targets) for it in items])       # (B, M, D)
        cond = np.stack([_flatten(it.conditioning) for it in items])  # (B, m_prev, D)
        cur = tau0[:, 0, :]
        goal = tau0[:, -1, :]
        sdf = np.stack([
            it.sdf_feature if it.sdf_feature is not None else np.zeros(denoiser.sdf_dim)
            for it in items
        ])
        b, m, d = tau0.shape
        k = rng.integers(1, schedule.K + 1, size=b)
        eps = rng.normal(size=tau0.shape)
        tau_k = forward_noise(tau0, k, eps, schedule)
        tau_k[:, 0, :] = cur
        tau_k[:, -1, :] = goal
        keep = (rng.random(b) >= cond_dropout).astype(np.float64)

        latents = denoiser.encode(cond)
        latents = time_resample(latents, m)
        eps_hat = denoiser.predict_eps(tau_k, k, latents, cur, goal, sdf, keep_mask=keep)

        if m <= 2:
            continue
        mask = np.zeros((1, m, 1))
        mask[:, 1:-1, :] = 1.0
        diff = eps_hat - Tensor(eps)
        sq_terms.append(tsum(mul(mul(diff, diff), mask)))
        total_count += b * (m - 2) * d

    if not sq_terms:
        return Tensor(0.0)
    total = sq_terms[0]
    for t in sq_terms[1:]:
        total = total + t
    return mul(total, 1.0 / total_count)


def sample_level(denoiser: SubgoalDenoiser, schedule: NoiseSchedule, o_cur, o_G,
                 conditioning, M: int, rng_seed, sdf_feat=None, level: int = 0,
                 endpoint_mode: str = "noised") -> SubgoalChain:
    """Ancestral sampling of one hierarchy level with endpoint in-painting.

    conditioning: latent vectors already upsampled to length M (or None to
    sample without previous-level guidance). endpoint_mode picks how the
    pinned ends are imposed during the reverse loop: "noised" re-noises
    them to the current step's marginal, "clean" copies them exactly.
    Either way the returned chain's endpoints equal o_cur / o_G exactly.
    """
    if endpoint_mode not in ("noised", "clean"):
        raise ValueError(f"unknown endpoint mode: {endpoint_mode}")
    rng = ensure_rng(rng_seed)
    o_cur = np.asarray(o_cur, dtype=np.float64)
    keypoint_shape = o_cur.shape
    cur = _flatten(o_cur)[None, :]
    goal = _flatten(np.asarray(o_G, dtype=np.float64))[None, :]
    d = cur.shape[1]
    cond = None
    if conditioning is not None:
        cond = np.asarray(conditioning, dtype=np.float64)[None, :, :]
        if cond.shape[1] != M:
            raise ValueError(f"conditioning must be upsampled to length {M}, "
                             f"got {cond.shape[1]}")
    sdf = None if sdf_feat is None else np.asarray(sdf_feat, dtype=np.float64)[None, :]

    x = rng.normal(size=(1, M, d))
    for k in range(schedule.K, 0, -1):
        alpha = schedule.alphas[k - 1]
        ab = schedule.alpha_bars[k - 1]
        eps_hat = denoiser.predict_eps(x, np.array([k]), cond, cur, goal, sdf).data
        mean = (x - (1.0 - alpha) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
        ab_prev = schedule.alpha_bar_prev(k)
        if k > 1:
            var = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - alpha)
            x = mean + np.sqrt(var) * rng.normal(size=x.shape)
        else:
            x = mean
        if endpoint_mode == "noised":
            x[:, 0, :] = np.sqrt(ab_prev) * cur + np.sqrt(1.0 - ab_prev) * rng.normal(size=(1, d))
            x[:, -1, :] = np.sqrt(ab_prev) * goal + np.sqrt(1.0 - ab_prev) * rng.normal(size=(1, d))
        else:
            x[:, 0, :] = cur
            x[:, -1, :] = goal

    x = np.clip(x, -1.0, 1.0)
    x[:, 0, :] = cur
    x[:, -1, :] = goal
    goals = x[0].reshape(M, *keypoint_shape)
    return SubgoalChain(goals=goals, level=level)


@dataclass
class DiffusionTrainConfig:
    hierarchy: tuple = (2, 3, 5, 7, 9, 17)
    steps: int = 3000
    batch_size: int = 64
    lr: float = 2e-3
    sigma_cond: float = 0.03
    cond_dropout: float = 0.1
    K_steps: int = 50


def train_diffusion(dataset: Dataset, cfg: DiffusionTrainConfig, rng_seed,
                    denoiser: SubgoalDenoiser | None = None,
                    log_every: int = 0) -> tuple[SubgoalDenoiser, NoiseSchedule, list]:
    """Train the denoiser (and, through it, the latent encoder) on a dataset."""
    state_dim = 2 * dataset.K
    schedule = make_schedule(cfg.K_steps)
    if denoiser is None:
        denoiser = SubgoalDenoiser(state_dim=state_dim, seed=rng_seed)
    opt = nc.Adam(denoiser.store, lr=cfg.lr)
    root = np.random.SeedSequence(rng_seed)
    losses = []
    for step, seq in enumerate(root.spawn(cfg.steps)):
        rng = np.random.default_rng(seq)
        batch = sample_subgoal_batch(dataset, list(cfg.hierarchy), cfg.batch_size,
                                     cfg.sigma_cond, rng)
        loss = denoise_loss(batch, denoiser, schedule, rng, cond_dropout=cfg.cond_dropout)
        losses.append(loss.item())
        loss.backward()
        opt.step()
        if log_every and step % log_every == 0:
            recent = np.mean(losses[-log_every:])
            print(f"  diffusion step {step:5d}  loss {recent:.4f}")
    return denoiser, schedule, losses
