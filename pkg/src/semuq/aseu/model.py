"""A small GRU language model with a Gaussian latent head and an embedding decoder.

Parameters are split into three groups:

* ``theta``: token embeddings, stacked GRU layers and the next-token head
* ``psi``: the variational head mapping a hidden state to (mu, log_var)
* ``omega``: the decoder mapping a latent sample to a predicted embedding

All gradients are computed by a hand-written reverse pass.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

LOG_VAR_MIN, LOG_VAR_MAX = -10.0, 10.0
GROUPS = ("theta", "psi", "omega")


@dataclass(frozen=True)
class ToyLmConfig:
    vocab_size: int = 32
    hidden_dim: int = 24
    latent_dim: int = 8
    layers: int = 1
    sigma_e2: float = 0.1
    learning_rate: float = 0.02
    seed: int = 0
    head_hidden: int = 0  # 0 -> hidden_dim
    decoder_hidden: int = 0  # 0 -> hidden_dim
    train_backbone: bool = True
    nll_weight: float = 1.0
    prefix_training: bool = False
    mc_samples: int = 1

    def __post_init__(self):
        for name in ("vocab_size", "hidden_dim", "latent_dim", "layers", "mc_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.sigma_e2 > 0:
            raise ValueError("sigma_e2 must be > 0")

    @property
    def q_hidden(self) -> int:
        return self.head_hidden or self.hidden_dim

    @property
    def dec_hidden(self) -> int:
        return self.decoder_hidden or self.hidden_dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LatentPosterior:
    mu: np.ndarray
    log_var: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


@dataclass
class ModelParams:
    theta: dict[str, np.ndarray] = field(default_factory=dict)
    psi: dict[str, np.ndarray] = field(default_factory=dict)
    omega: dict[str, np.ndarray] = field(default_factory=dict)

    def groups(self) -> Iterator[tuple[str, dict[str, np.ndarray]]]:
        yield from (("theta", self.theta), ("psi", self.psi), ("omega", self.omega))

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for g, d in self.groups():
            for k, v in d.items():
                yield f"{g}/{k}", v

    def zeros_like(self) -> ModelParams:
        return ModelParams(*({k: np.zeros_like(v) for k, v in d.items()} for _, d in self.groups()))

    def copy(self) -> ModelParams:
        return ModelParams(*({k: v.copy() for k, v in d.items()} for _, d in self.groups()))


def expected_shapes(cfg: ToyLmConfig) -> dict[str, tuple[int, ...]]:
    V, H, D, Hq, Hd = cfg.vocab_size, cfg.hidden_dim, cfg.latent_dim, cfg.q_hidden, cfg.dec_hidden
    shapes = {"theta/emb": (V, H)}
    for layer in range(cfg.layers):
        for gate in "zrh":
            shapes[f"theta/gru{layer}.W{gate}"] = (H, H)
            shapes[f"theta/gru{layer}.U{gate}"] = (H, H)
            shapes[f"theta/gru{layer}.b{gate}"] = (H,)
    shapes.update({"theta/out.W": (H, V), "theta/out.b": (V,)})
    shapes.update(
        {
            "psi/q.W1": (H, Hq),
            "psi/q.b1": (Hq,),
            "psi/q.Wmu": (Hq, D),
            "psi/q.bmu": (D,),
            "psi/q.Wlv": (Hq, D),
            "psi/q.blv": (D,),
            "omega/dec.W1": (D, Hd),
            "omega/dec.b1": (Hd,),
            "omega/dec.W2": (Hd, D),
            "omega/dec.b2": (D,),
        }
    )
    return shapes


def init_params(cfg: ToyLmConfig, seed: int | None = None) -> ModelParams:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    p = ModelParams()
    for name, shape in expected_shapes(cfg).items():
        group, key = name.split("/")
        if len(shape) == 1:
            arr = np.zeros(shape)
        elif key == "emb":
            arr = rng.normal(0.0, 1.0, shape)
        else:
            arr = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
        getattr(p, group)[key] = arr
    # start near the prior's scale but a little tighter
    p.psi["q.blv"][:] = -1.0
    return p


def validate_params(params: ModelParams, cfg: ToyLmConfig) -> None:
    want = expected_shapes(cfg)
    have = {k: v.shape for k, v in params.items()}
    if set(want) != set(have):
        raise ValueError(f"parameter names differ from config: missing {sorted(set(want) - set(have))}, "
                         f"unexpected {sorted(set(have) - set(want))}")
    for k, shape in want.items():
        if have[k] != shape:
            raise ValueError(f"{k}: shape {have[k]} does not match config {shape}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- closed-form pieces ---------------------------------------------------------------


def gaussian_kl(q: LatentPosterior) -> float:
    """KL from a diagonal Gaussian to the standard normal."""
    lv = np.asarray(q.log_var, dtype=np.float64)
    mu = np.asarray(q.mu, dtype=np.float64)
    # expm1 avoids cancellation near log_var = 0, which could otherwise go negative
    return float(0.5 * np.sum(np.maximum(np.expm1(lv) - lv, 0.0) + mu**2))


def decode(z: np.ndarray, omega: dict[str, np.ndarray]) -> np.ndarray:
    return np.tanh(z @ omega["dec.W1"] + omega["dec.b1"]) @ omega["dec.W2"] + omega["dec.b2"]


def recon_loglik(e: np.ndarray, z: np.ndarray, omega: dict[str, np.ndarray], sigma_e2: float) -> float:
    """log N(e; decode(z), sigma_e2 I)."""
    e = np.asarray(e, dtype=np.float64)
    resid = e - decode(np.asarray(z, dtype=np.float64), omega)
    d = e.shape[-1]
    return float(-np.sum(resid**2) / (2.0 * sigma_e2) - 0.5 * d * math.log(2.0 * math.pi * sigma_e2))


# -- backbone -------------------------------------------------------------------------


def _gru_layer_forward(x: np.ndarray, p: dict[str, np.ndarray], layer: int):
    """Run one GRU layer over (B, T, H_in) inputs; h_0 = 0."""
    B, T, _ = x.shape
    W = {g: p[f"gru{layer}.W{g}"] for g in "zrh"}
    U = {g: p[f"gru{layer}.U{g}"] for g in "zrh"}
    b = {g: p[f"gru{layer}.b{g}"] for g in "zrh"}
    H = U["z"].shape[0]
    h = np.zeros((B, H))
    hs = np.empty((B, T, H))
    cache = []
    for t in range(T):
        xt = x[:, t]
        z = _sigmoid(xt @ W["z"] + h @ U["z"] + b["z"])
        r = _sigmoid(xt @ W["r"] + h @ U["r"] + b["r"])
        n = np.tanh(xt @ W["h"] + (r * h) @ U["h"] + b["h"])
        h_new = (1.0 - z) * n + z * h
        cache.append((h, z, r, n))
        h = h_new
        hs[:, t] = h
    return hs, cache


def _gru_layer_backward(x, dhs, cache, p, layer, grads):
    B, T, _ = x.shape
    W = {g: p[f"gru{layer}.W{g}"] for g in "zrh"}
    U = {g: p[f"gru{layer}.U{g}"] for g in "zrh"}
    dx = np.zeros_like(x)
    dh_next = np.zeros((B, dhs.shape[2]))
    for t in reversed(range(T)):
        h, z, r, n = cache[t]
        xt = x[:, t]
        dh = dhs[:, t] + dh_next
        dn = dh * (1.0 - z)
        dz = dh * (h - n)
        dh_prev = dh * z
        da_n = dn * (1.0 - n**2)
        da_z = dz * z * (1.0 - z)
        drh = da_n @ U["h"].T
        da_r = drh * h * r * (1.0 - r)
        dh_prev += drh * r
        grads[f"gru{layer}.Wh"] += xt.T @ da_n
        grads[f"gru{layer}.Uh"] += (r * h).T @ da_n
        grads[f"gru{layer}.bh"] += da_n.sum(0)
        for g, da in (("z", da_z), ("r", da_r)):
            grads[f"gru{layer}.W{g}"] += xt.T @ da
            grads[f"gru{layer}.U{g}"] += h.T @ da
            grads[f"gru{layer}.b{g}"] += da.sum(0)
            dh_prev += da @ U[g].T
            dx[:, t] += da @ W[g].T
        dx[:, t] += da_n @ W["h"].T
        dh_next = dh_prev
    return dx


def backbone_forward(ids: np.ndarray, theta: dict[str, np.ndarray], cfg: ToyLmConfig):
    """Top-layer hidden states (B, T, H) plus what the reverse pass needs."""
    x = theta["emb"][ids]
    inputs, caches = [], []
    for layer in range(cfg.layers):
        inputs.append(x)
        x, cache = _gru_layer_forward(x, theta, layer)
        caches.append(cache)
    return x, (ids, inputs, caches)


def backbone_backward(dh_top: np.ndarray, tape, theta, cfg: ToyLmConfig, grads: dict[str, np.ndarray]) -> None:
    ids, inputs, caches = tape
    d = dh_top
    for layer in reversed(range(cfg.layers)):
        d = _gru_layer_backward(inputs[layer], d, caches[layer], theta, layer, grads)
    np.add.at(grads["emb"], ids, d)


def gru_step(token: int, state: list[np.ndarray], theta: dict[str, np.ndarray], cfg: ToyLmConfig) -> list[np.ndarray]:
    """Advance a single sequence by one token; ``state`` holds one (H,) vector per layer."""
    x = theta["emb"][token]
    new = []
    for layer in range(cfg.layers):
        h = state[layer]
        p = lambda k: theta[f"gru{layer}.{k}"]  # noqa: E731
        z = _sigmoid(x @ p("Wz") + h @ p("Uz") + p("bz"))
        r = _sigmoid(x @ p("Wr") + h @ p("Ur") + p("br"))
        n = np.tanh(x @ p("Wh") + (r * h) @ p("Uh") + p("bh"))
        x = (1.0 - z) * n + z * h
        new.append(x)
    return new


def initial_state(cfg: ToyLmConfig) -> list[np.ndarray]:
    return [np.zeros(cfg.hidden_dim) for _ in range(cfg.layers)]


# -- variational head -----------------------------------------------------------------


def posterior(h: np.ndarray, psi: dict[str, np.ndarray]) -> LatentPosterior:
    a = np.tanh(h @ psi["q.W1"] + psi["q.b1"])
    mu = a @ psi["q.Wmu"] + psi["q.bmu"]
    lv = np.clip(a @ psi["q.Wlv"] + psi["q.blv"], LOG_VAR_MIN, LOG_VAR_MAX)
    return LatentPosterior(mu, lv)


@dataclass
class LossParts:
    total: float
    elbo: float
    kl: float
    recon: float
    nll: float


def objective(
    params: ModelParams,
    ids: np.ndarray,
    targets: np.ndarray,
    positions: np.ndarray,
    eps: np.ndarray,
    cfg: ToyLmConfig,
    *,
    nll_weight: float | None = None,
    need_grad: bool = True,
) -> tuple[LossParts, ModelParams | None]:
    """Negative ELBO (plus weighted next-token NLL) and its gradient.

    Args:
        ids: (B, T) token ids, all rows the same length.
        targets: (R, D) reference embeddings, one per readout.
        positions: (R, 2) integer pairs (row, time) whose hidden state
            conditions the posterior for each readout.
        eps: (S, R, D) standard-normal noise for the reparameterised samples.

    The ELBO part is averaged over readouts; the NLL part is the mean
    per-token negative log-likelihood over all rows.
    """
    nll_weight = cfg.nll_weight if nll_weight is None else nll_weight
    theta, psi, omega = params.theta, params.psi, params.omega
    B, T = ids.shape
    S, R, D = eps.shape
    s2 = cfg.sigma_e2

    hs, tape = backbone_forward(ids, theta, cfg)
    rows, cols = positions[:, 0], positions[:, 1]
    h = hs[rows, cols]

    a = np.tanh(h @ psi["q.W1"] + psi["q.b1"])
    mu = a @ psi["q.Wmu"] + psi["q.bmu"]
    lv_raw = a @ psi["q.Wlv"] + psi["q.blv"]
    lv = np.clip(lv_raw, LOG_VAR_MIN, LOG_VAR_MAX)
    std = np.exp(0.5 * lv)
    z = mu[None] + std[None] * eps
    g = np.tanh(z @ omega["dec.W1"] + omega["dec.b1"])
    e_hat = g @ omega["dec.W2"] + omega["dec.b2"]
    resid = targets[None] - e_hat
    recon_each = -np.sum(resid**2, axis=-1) / (2 * s2) - 0.5 * D * math.log(2 * math.pi * s2)
    kl_each = 0.5 * np.sum(np.maximum(np.expm1(lv) - lv, 0.0) + mu**2, axis=-1)
    kl = float(kl_each.mean())
    recon = float(recon_each.mean())
    elbo = kl - recon

    nll = 0.0
    use_nll = nll_weight != 0.0 and T > 1
    if use_nll:
        logits = hs[:, :-1] @ theta["out.W"] + theta["out.b"]
        logits = logits - logits.max(-1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
        nxt = ids[:, 1:]
        n_tok = B * (T - 1)
        nll = float(-np.take_along_axis(logp, nxt[..., None], -1).sum() / n_tok)
    total = elbo + nll_weight * nll
    parts = LossParts(total, elbo, kl, recon, nll)
    if not need_grad:
        return parts, None

    grads = params.zeros_like()
    gt, gq, gd = grads.theta, grads.psi, grads.omega
    # d(-mean recon)/d e_hat
    de_hat = -resid / (s2 * S * R)
    gd["dec.W2"] += np.einsum("srh,srd->hd", g, de_hat)
    gd["dec.b2"] += de_hat.sum((0, 1))
    dpre = (de_hat @ omega["dec.W2"].T) * (1.0 - g**2)
    gd["dec.W1"] += np.einsum("srd,srh->dh", z, dpre)
    gd["dec.b1"] += dpre.sum((0, 1))
    dz = dpre @ omega["dec.W1"].T
    dmu = mu / R + dz.sum(0)
    dlv = 0.5 * (np.exp(lv) - 1.0) / R + 0.5 * std * (dz * eps).sum(0)
    dlv = dlv * ((lv_raw > LOG_VAR_MIN) & (lv_raw < LOG_VAR_MAX))
    gq["q.Wmu"] += a.T @ dmu
    gq["q.bmu"] += dmu.sum(0)
    gq["q.Wlv"] += a.T @ dlv
    gq["q.blv"] += dlv.sum(0)
    da = (dmu @ psi["q.Wmu"].T + dlv @ psi["q.Wlv"].T) * (1.0 - a**2)
    gq["q.W1"] += h.T @ da
    gq["q.b1"] += da.sum(0)
    dh_read = da @ psi["q.W1"].T

    dhs = np.zeros_like(hs)
    np.add.at(dhs, (rows, cols), dh_read)
    if use_nll:
        probs = np.exp(logp)
        np.put_along_axis(probs, nxt[..., None], np.take_along_axis(probs, nxt[..., None], -1) - 1.0, -1)
        dlogits = probs * (nll_weight / n_tok)
        gt["out.W"] += np.einsum("bth,btv->hv", hs[:, :-1], dlogits)
        gt["out.b"] += dlogits.sum((0, 1))
        dhs[:, :-1] += dlogits @ theta["out.W"].T
    backbone_backward(dhs, tape, theta, cfg, gt)
    return parts, grads


def elbo_loss(
    sequence: Sequence[int],
    e_target: np.ndarray,
    params: ModelParams,
    cfg: ToyLmConfig,
    mc_samples: int = 1,
    rng: np.random.Generator | None = None,
    *,
    eps: np.ndarray | None = None,
    need_grad: bool = False,
):
    """Negative ELBO of one sequence, posterior read at its final token.

    Returns the scalar loss, or ``(loss, grads)`` with ``need_grad=True``.
    Pass ``eps`` of shape (mc_samples, D) to fix the noise.
    """
    ids = np.asarray(sequence, dtype=np.int64)[None]
    if ids.shape[1] == 0:
        raise ValueError("empty sequence")
    if eps is None:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        eps = rng.standard_normal((mc_samples, cfg.latent_dim))
    eps = np.asarray(eps, dtype=np.float64).reshape(-1, 1, cfg.latent_dim)
    positions = np.array([[0, ids.shape[1] - 1]])
    target = np.asarray(e_target, dtype=np.float64)[None]
    parts, grads = objective(params, ids, target, positions, eps, cfg, nll_weight=0.0, need_grad=need_grad)
    return (parts.elbo, grads) if need_grad else parts.elbo
