"""A small recurrent sequence VAE with in-module reverse-mode gradients.

Architecture: shared token embedding -> single-layer gated recurrent (GRU)
encoder read left to right -> affine heads producing the latent mean and
log-variance -> reparameterized Gaussian sample -> affine+tanh latent-to-
initial-state map -> GRU decoder run autoregressively (teacher forcing in
training) -> affine softmax head over the 130-token vocabulary.

Everything is float64 numpy.  The loss is reconstruction cross-entropy
averaged over batch and steps plus a beta-weighted KL divergence to the
standard normal prior, and the backward pass is written out by hand so the
whole gradient can be verified against finite differences.

The GRU cell follows the original formulation where the reset gate is
applied to the hidden state before the candidate projection:

    r = sigmoid(Wr x + Ur h + br)
    u = sigmoid(Wu x + Uu h + bu)
    c = tanh(Wc x + Uc (r * h) + bc)
    h' = u * h + (1 - u) * c
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, dataclass

import numpy as np

from .melody import HOLD, STEPS_PER_BAR, VOCAB_SIZE, TokenSequence

CHECKPOINT_MAGIC = "latent-lens-checkpoint"
CHECKPOINT_VERSION = 1
CELL_TYPE = "gru"


class ShapeError(ValueError):
    """Input or parameter shapes are inconsistent with the model config."""


class NumericalError(RuntimeError):
    """A non-finite value appeared during loss or gradient computation."""


class CheckpointError(ValueError):
    """A checkpoint file is unreadable or incompatible."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; carries the last good state."""

    def __init__(self, message: str, params: "Params", history: list):
        super().__init__(message)
        self.params = params
        self.history = history


@dataclass(frozen=True)
class ModelConfig:
    vocab: int = VOCAB_SIZE
    embed_dim: int = 64
    hidden_dim: int = 128
    latent_dim: int = 32
    seq_len: int = 32

    def __post_init__(self) -> None:
        if self.vocab != VOCAB_SIZE:
            raise ValueError(f"vocab is fixed at {VOCAB_SIZE}")
        for name in ("embed_dim", "hidden_dim", "latent_dim", "seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.seq_len % STEPS_PER_BAR != 0 or self.seq_len // STEPS_PER_BAR not in (2, 16):
            raise ValueError(f"seq_len must be 32 or 256, got {self.seq_len}")

    @property
    def bars(self) -> int:
        return self.seq_len // STEPS_PER_BAR


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    v, e, h, d = cfg.vocab, cfg.embed_dim, cfg.hidden_dim, cfg.latent_dim
    return {
        "embed": (v, e),
        "enc_wx": (e, 3 * h),
        "enc_wh": (h, 3 * h),
        "enc_b": (3 * h,),
        "w_mu": (h, d),
        "b_mu": (d,),
        "w_logvar": (h, d),
        "b_logvar": (d,),
        "z_w": (d, h),
        "z_b": (h,),
        "dec_wx": (e, 3 * h),
        "dec_wz": (d, 3 * h),
        "dec_wh": (h, 3 * h),
        "dec_b": (3 * h,),
        "out_w": (h, v),
        "out_b": (v,),
    }


PARAM_NAMES = tuple(_param_shapes(ModelConfig()).keys())


@dataclass
class Params:
    """All weights of the model, tied to the config they were built for."""

    config: ModelConfig
    embed: np.ndarray
    enc_wx: np.ndarray
    enc_wh: np.ndarray
    enc_b: np.ndarray
    w_mu: np.ndarray
    b_mu: np.ndarray
    w_logvar: np.ndarray
    b_logvar: np.ndarray
    z_w: np.ndarray
    z_b: np.ndarray
    dec_wx: np.ndarray
    dec_wz: np.ndarray
    dec_wh: np.ndarray
    dec_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "Params":
        return Params(self.config, **{k: v.copy() for k, v in self.arrays().items()})

    def validate(self) -> None:
        shapes = _param_shapes(self.config)
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"non-finite values in parameter {name}")


@dataclass(frozen=True)
class LatentEncoding:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        if self.mu.shape != self.sigma.shape:
            raise ShapeError("mu and sigma must have the same shape")
        if not (np.all(np.isfinite(self.sigma)) and np.all(self.sigma > 0)):
            raise ValueError("sigma must be strictly positive and finite")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr: float = 1e-3
    batch: int = 32
    beta_max: float = 0.2
    beta_anneal_steps: int = 2000
    grad_clip_norm: float = 1.0
    seed: int = 0
    # Fraction of decoder input tokens blanked during training.  With full
    # teacher forcing the autoregressive decoder can model melodies from the
    # prefix alone and the KL term collapses every latent dimension; blanking
    # part of the prefix forces reconstruction to route through the latent.
    input_dropout: float = 0.3

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.beta_max < 0:
            raise ValueError("beta_max must be >= 0")
        if self.batch < 1 or self.beta_anneal_steps < 1:
            raise ValueError("batch and beta_anneal_steps must be >= 1")
        if not 0.0 <= self.input_dropout < 1.0:
            raise ValueError("input_dropout must lie in [0, 1)")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    recon_ce: float
    kl: float
    sigma_median: np.ndarray  # per-dim median sigma on the held-out slice


def init_params(cfg: ModelConfig, seed: int) -> Params:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in _param_shapes(cfg).items():
        if len(shape) == 2:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-a, a, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return Params(cfg, **arrays)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * np.tanh(0.5 * x) + 0.5


def _gru_forward(g: np.ndarray, wh: np.ndarray, h0: np.ndarray):
    """Run the cell over time.

    g: (B, T, 3H) input contributions (x @ Wx + b), gate order [r | u | c].
    Returns hidden states (B, T, H) and the gate cache for backprop.
    """
    b, t_len, h3 = g.shape
    h_dim = h3 // 3
    wh_ru = wh[:, : 2 * h_dim]
    wh_c = wh[:, 2 * h_dim :]
    h = h0
    hs = np.empty((b, t_len, h_dim))
    ru_all = np.empty((b, t_len, 2 * h_dim))
    c_all = np.empty((b, t_len, h_dim))
    s_all = np.empty((b, t_len, h_dim))
    for t in range(t_len):
        ru = _sigmoid(g[:, t, : 2 * h_dim] + h @ wh_ru)
        r = ru[:, :h_dim]
        u = ru[:, h_dim:]
        s = r * h
        c = np.tanh(g[:, t, 2 * h_dim :] + s @ wh_c)
        ru_all[:, t] = ru
        c_all[:, t] = c
        s_all[:, t] = s
        h = u * h + (1.0 - u) * c
        hs[:, t] = h
    return hs, (h0, ru_all, c_all, s_all)


def _gru_backward(g: np.ndarray, wh: np.ndarray, hs: np.ndarray, cache,
                  dhs: np.ndarray):
    """Backprop through the cell.

    dhs: (B, T, H) gradients arriving at each output hidden state.
    Returns (dg, dwh, dh0).
    """
    b, t_len, h3 = g.shape
    h_dim = h3 // 3
    h0, ru_all, c_all, s_all = cache
    wh_ru = wh[:, : 2 * h_dim]
    wh_c = wh[:, 2 * h_dim :]
    dg = np.empty_like(g)
    dh = np.zeros((b, h_dim))
    for t in range(t_len - 1, -1, -1):
        h_prev = h0 if t == 0 else hs[:, t - 1]
        r = ru_all[:, t, :h_dim]
        u = ru_all[:, t, h_dim:]
        c = c_all[:, t]
        dh = dh + dhs[:, t]
        du = dh * (h_prev - c)
        dc = dh * (1.0 - u)
        dh_prev = dh * u
        dac = dc * (1.0 - c * c)
        dg[:, t, 2 * h_dim :] = dac
        ds = dac @ wh_c.T
        dh_prev += ds * r
        dr = ds * h_prev
        dg[:, t, :h_dim] = dr * r * (1.0 - r)
        dg[:, t, h_dim : 2 * h_dim] = du * u * (1.0 - u)
        dh_prev += dg[:, t, : 2 * h_dim] @ wh_ru.T
        dh = dh_prev
    # weight gradients accumulate in two large matmuls over all steps
    h_prev_all = np.concatenate((h0[:, None, :], hs[:, :-1, :]), axis=1)
    dwh = np.empty_like(wh)
    dwh[:, : 2 * h_dim] = (
        h_prev_all.reshape(-1, h_dim).T @ dg[:, :, : 2 * h_dim].reshape(-1, 2 * h_dim)
    )
    dwh[:, 2 * h_dim :] = (
        s_all.reshape(-1, h_dim).T @ dg[:, :, 2 * h_dim :].reshape(-1, h_dim)
    )
    return dg, dwh, dh


def _stack_batch(batch, seq_len: int) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        tokens = batch.astype(np.int64, copy=False)
        if tokens.ndim != 2 or tokens.shape[1] != seq_len:
            raise ShapeError(f"batch must be (n, {seq_len}), got {tokens.shape}")
        return tokens
    rows = []
    for i, seq in enumerate(batch):
        toks = tuple(seq)
        if len(toks) != seq_len:
            raise ShapeError(f"sequence {i} has length {len(toks)}, expected {seq_len}")
        rows.append(toks)
    if not rows:
        raise ValueError("batch must be non-empty")
    return np.array(rows, dtype=np.int64)


def _encoder_forward(p: Params, tokens: np.ndarray):
    xe = p.embed[tokens]
    g_enc = xe @ p.enc_wx + p.enc_b
    h0 = np.zeros((tokens.shape[0], p.config.hidden_dim))
    hs, cache = _gru_forward(g_enc, p.enc_wh, h0)
    h_t = hs[:, -1]
    mu = h_t @ p.w_mu + p.b_mu
    logvar = h_t @ p.w_logvar + p.b_logvar
    return xe, g_enc, hs, cache, h_t, mu, logvar


def encode_batch(p: Params, batch) -> tuple[np.ndarray, np.ndarray]:
    """Encode many sequences at once; returns (mus, sigmas) as (n, d) arrays."""
    tokens = _stack_batch(batch, p.config.seq_len)
    mu, logvar = _encoder_forward(p, tokens)[-2:]
    return mu, np.exp(0.5 * logvar)


def encode(p: Params, seq: TokenSequence) -> LatentEncoding:
    """Deterministic posterior parameters (mu, sigma) for one sequence."""
    mus, sigmas = encode_batch(p, [seq])
    return LatentEncoding(mus[0], sigmas[0])


def sample_latent(enc: LatentEncoding, rng: np.random.Generator) -> np.ndarray:
    """Reparameterized draw z = mu + sigma * eps."""
    return enc.mu + enc.sigma * rng.standard_normal(enc.mu.shape)


def decode(
    p: Params,
    z: np.ndarray,
    mode: str = "greedy",
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
) -> TokenSequence:
    """Autoregressive generation from a latent vector.

    ``mode`` is "greedy" (argmax per step) or "sample" (softmax at the given
    temperature; requires an rng).  The hold token is masked at step 0 so the
    output always starts with an explicit note-on or rest.
    """
    z = np.asarray(z, dtype=float)
    cfg = p.config
    if z.shape != (cfg.latent_dim,):
        raise ShapeError(f"z must have shape ({cfg.latent_dim},), got {z.shape}")
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sample mode requires an rng")
    h_dim = cfg.hidden_dim
    h = np.tanh(z @ p.z_w + p.z_b)
    wh_ru = p.dec_wh[:, : 2 * h_dim]
    wh_c = p.dec_wh[:, 2 * h_dim :]
    gz = z @ p.dec_wz + p.dec_b
    x = np.zeros(cfg.embed_dim)
    tokens = []
    for t in range(cfg.seq_len):
        g = x @ p.dec_wx + gz
        ru = _sigmoid(g[: 2 * h_dim] + h @ wh_ru)
        r, u = ru[:h_dim], ru[h_dim:]
        c = np.tanh(g[2 * h_dim :] + (r * h) @ wh_c)
        h = u * h + (1.0 - u) * c
        logits = h @ p.out_w + p.out_b
        if t == 0:
            logits = logits.copy()
            logits[HOLD] = -np.inf
        if mode == "greedy":
            tok = int(np.argmax(logits))
        else:
            scaled = logits / max(temperature, 1e-8)
            scaled = scaled - scaled.max()
            probs = np.exp(scaled)
            probs /= probs.sum()
            tok = int(rng.choice(cfg.vocab, p=probs))
        tokens.append(tok)
        x = p.embed[tok]
    return TokenSequence(tuple(tokens), cfg.bars)


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """Per-row KL( N(mu, sigma^2) || N(0, I) ), summed over dimensions."""
    return 0.5 * (mu**2 + np.exp(logvar) - 1.0 - logvar).sum(axis=-1)


def _loss_forward(p: Params, tokens: np.ndarray, beta: float, eps: np.ndarray,
                  want_grads: bool, keep_mask: np.ndarray | None = None):
    """Teacher-forced ELBO forward pass; optionally keeps the backprop cache.

    keep_mask, when given, is a (B, T) 0/1 array blanking decoder inputs
    (training-time input dropout); position 0 is always blank by design.
    """
    b, t_len = tokens.shape
    cfg = p.config

    xe, g_enc, hs_enc, cache_enc, h_t, mu, logvar = _encoder_forward(p, tokens)
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * eps

    h0 = np.tanh(z @ p.z_w + p.z_b)
    dec_in = tokens[:, :-1]
    xd = np.zeros((b, t_len, cfg.embed_dim))
    xd[:, 1:] = p.embed[dec_in]
    if keep_mask is not None:
        xd *= keep_mask[:, :, None]
    g_dec = xd @ p.dec_wx + (z @ p.dec_wz)[:, None, :] + p.dec_b
    hs_dec, cache_dec = _gru_forward(g_dec, p.dec_wh, h0)
    logits = hs_dec @ p.out_w + p.out_b

    m = logits.max(axis=-1, keepdims=True)
    ex = np.exp(logits - m)
    sumex = ex.sum(axis=-1)
    lse = m[..., 0] + np.log(sumex)
    tgt = np.take_along_axis(logits, tokens[..., None], axis=-1)[..., 0]
    ce_rows = (lse - tgt).mean(axis=1)
    recon = float(ce_rows.mean())
    kl_rows = gaussian_kl(mu, logvar)
    kl = float(kl_rows.mean())
    loss = recon + beta * kl

    if not np.isfinite(loss):
        bad = np.flatnonzero(~(np.isfinite(ce_rows) & np.isfinite(kl_rows)))
        idx = int(bad[0]) if bad.size else 0
        raise NumericalError(f"non-finite loss (first bad batch index {idx})")
    if not want_grads:
        return loss, recon, kl, None

    state = (xe, g_enc, hs_enc, cache_enc, h_t, mu, logvar, sigma, z, h0, xd,
             g_dec, hs_dec, cache_dec, ex, sumex, dec_in, keep_mask)
    return loss, recon, kl, state


def _loss_backward(p: Params, tokens: np.ndarray, beta: float, eps: np.ndarray,
                   state) -> dict[str, np.ndarray]:
    (xe, g_enc, hs_enc, cache_enc, h_t, mu, logvar, sigma, z, h0, xd,
     g_dec, hs_dec, cache_dec, ex, sumex, dec_in, keep_mask) = state
    b, t_len = tokens.shape
    cfg = p.config
    grads: dict[str, np.ndarray] = {}

    dlogits = ex / sumex[..., None]
    np.put_along_axis(
        dlogits, tokens[..., None],
        np.take_along_axis(dlogits, tokens[..., None], axis=-1) - 1.0, axis=-1,
    )
    dlogits /= b * t_len

    h_flat = hs_dec.reshape(-1, cfg.hidden_dim)
    dl_flat = dlogits.reshape(-1, cfg.vocab)
    grads["out_w"] = h_flat.T @ dl_flat
    grads["out_b"] = dl_flat.sum(axis=0)
    dhs_dec = dlogits @ p.out_w.T

    dg_dec, dwh_dec, dh0 = _gru_backward(g_dec, p.dec_wh, hs_dec, cache_dec, dhs_dec)
    grads["dec_wh"] = dwh_dec
    grads["dec_wx"] = xd.reshape(-1, cfg.embed_dim).T @ dg_dec.reshape(-1, 3 * cfg.hidden_dim)
    dg_dec_sum = dg_dec.sum(axis=1)
    grads["dec_wz"] = z.T @ dg_dec_sum
    grads["dec_b"] = dg_dec_sum.sum(axis=0)
    dxd = dg_dec @ p.dec_wx.T
    if keep_mask is not None:
        dxd *= keep_mask[:, :, None]

    d_embed = np.zeros_like(p.embed)
    np.add.at(d_embed, dec_in, dxd[:, 1:])

    da0 = dh0 * (1.0 - h0 * h0)
    grads["z_w"] = z.T @ da0
    grads["z_b"] = da0.sum(axis=0)
    dz = da0 @ p.z_w.T + dg_dec_sum @ p.dec_wz.T

    dmu = dz + beta * mu / b
    dlogvar = dz * eps * 0.5 * sigma + beta * 0.5 * (np.exp(logvar) - 1.0) / b

    grads["w_mu"] = h_t.T @ dmu
    grads["b_mu"] = dmu.sum(axis=0)
    grads["w_logvar"] = h_t.T @ dlogvar
    grads["b_logvar"] = dlogvar.sum(axis=0)
    dh_t = dmu @ p.w_mu.T + dlogvar @ p.w_logvar.T

    dhs_enc = np.zeros((b, t_len, cfg.hidden_dim))
    dhs_enc[:, -1] = dh_t
    dg_enc, dwh_enc, _ = _gru_backward(g_enc, p.enc_wh, hs_enc, cache_enc, dhs_enc)
    grads["enc_wh"] = dwh_enc
    grads["enc_wx"] = xe.reshape(-1, cfg.embed_dim).T @ dg_enc.reshape(-1, 3 * cfg.hidden_dim)
    grads["enc_b"] = dg_enc.sum(axis=(0, 1))
    dxe = dg_enc @ p.enc_wx.T
    np.add.at(d_embed, tokens, dxe)
    grads["embed"] = d_embed
    return grads


def elbo_loss(p: Params, batch, beta: float, rng: np.random.Generator):
    """(loss, recon_ce, kl) for one batch with reparameterized sampling.

    The latent noise is drawn from ``rng``; passing an identically seeded
    generator reproduces the exact loss, which is what the finite-difference
    gradient checks rely on.
    """
    tokens = _stack_batch(batch, p.config.seq_len)
    eps = rng.standard_normal((tokens.shape[0], p.config.latent_dim))
    loss, recon, kl, _ = _loss_forward(p, tokens, beta, eps, want_grads=False)
    return loss, recon, kl


def elbo_loss_and_grads(p: Params, batch, beta: float, rng: np.random.Generator):
    """Like :func:`elbo_loss` but also returns d loss / d parameter."""
    tokens = _stack_batch(batch, p.config.seq_len)
    eps = rng.standard_normal((tokens.shape[0], p.config.latent_dim))
    loss, recon, kl, state = _loss_forward(p, tokens, beta, eps, want_grads=True)
    grads = _loss_backward(p, tokens, beta, eps, state)
    return loss, recon, kl, grads


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale


class _Adam:
    """Adam with bias correction, matched to the parameter dict layout."""

    def __init__(self, params: Params, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}

    def step(self, params: Params, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            getattr(params, name)[...] -= self.lr * update


def train(p: Params, corpus, cfg: TrainConfig) -> tuple[Params, list[EpochStats]]:
    """Adam + gradient clipping with a linear KL-weight ramp.

    beta rises linearly from 0 to ``cfg.beta_max`` over
    ``cfg.beta_anneal_steps`` optimizer steps.  Because the reconstruction
    term is averaged per step while the KL is summed per sequence, the KL
    weight is applied per step (beta / seq_len); this makes beta mean the
    same thing at every sequence length and is what the usual convention of
    weighting the KL against step-summed cross-entropy does.  Weighting the
    full per-sequence KL by beta instead would make discarding the latent
    optimal whenever beta > 1/seq_len, collapsing every dimension.

    Per epoch the history records mean loss / reconstruction / KL over
    training batches and the per-dim median posterior sigma on a held-out
    slice of the corpus.  Deterministic for a fixed seed.  On divergence
    raises :class:`TrainingDiverged` carrying the parameters from the last
    completed epoch.
    """
    tokens = _stack_batch(corpus, p.config.seq_len)
    n = tokens.shape[0]
    if n < 2:
        raise ValueError("corpus must contain at least two sequences")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_hold = max(1, min(n // 10, 256))
    hold = tokens[perm[:n_hold]]
    train_tokens = tokens[perm[n_hold:]]

    params = p.copy()
    opt = _Adam(params, cfg.lr)
    history: list[EpochStats] = []
    last_good = params.copy()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_tokens.shape[0])
        losses, recons, kls = [], [], []
        for lo in range(0, order.size, cfg.batch):
            batch = train_tokens[order[lo : lo + cfg.batch]]
            ramp = cfg.beta_max * min(1.0, step / cfg.beta_anneal_steps)
            beta = ramp / params.config.seq_len
            eps = rng.standard_normal((batch.shape[0], params.config.latent_dim))
            keep = None
            if cfg.input_dropout > 0.0:
                keep = (
                    rng.random(batch.shape) >= cfg.input_dropout
                ).astype(float)
            try:
                loss, recon, kl, state = _loss_forward(
                    params, batch, beta, eps, True, keep
                )
            except NumericalError as err:
                raise TrainingDiverged(
                    f"epoch {epoch}: {err}", last_good, history
                ) from err
            grads = _loss_backward(params, batch, beta, eps, state)
            _clip_grads(grads, cfg.grad_clip_norm)
            opt.step(params, grads)
            step += 1
            losses.append(loss)
            recons.append(recon)
            kls.append(kl)
        _, hold_sigma = encode_batch(params, hold)
        history.append(
            EpochStats(
                epoch=epoch,
                loss=float(np.mean(losses)),
                recon_ce=float(np.mean(recons)),
                kl=float(np.mean(kls)),
                sigma_median=np.median(hold_sigma, axis=0),
            )
        )
        last_good = params.copy()
    return params, history


def history_csv(history: list[EpochStats]) -> str:
    lines = ["epoch,loss,recon_ce,kl"]
    for row in history:
        lines.append(f"{row.epoch},{row.loss:.10g},{row.recon_ce:.10g},{row.kl:.10g}")
    return "\n".join(lines) + "\n"


def save_checkpoint(p: Params, path) -> None:
    """Versioned container: JSON metadata plus the raw float64 weight arrays."""
    p.validate()
    meta = json.dumps(
        {
            "magic": CHECKPOINT_MAGIC,
            "version": CHECKPOINT_VERSION,
            "cell": CELL_TYPE,
            "config": asdict(p.config),
        }
    )
    arrays = {f"param_{k}": v for k, v in p.arrays().items()}
    arrays["meta"] = np.frombuffer(meta.encode("utf-8"), dtype=np.uint8).copy()
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> Params:
    """Load a checkpoint; optionally enforce an expected model config."""
    try:
        with np.load(path, allow_pickle=False) as data:
            if "meta" not in data:
                raise CheckpointError("missing checkpoint metadata")
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            if meta.get("magic") != CHECKPOINT_MAGIC:
                raise CheckpointError("bad checkpoint magic")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported version {meta.get('version')}")
            cfg = ModelConfig(**meta["config"])
            arrays = {name: data[f"param_{name}"] for name in PARAM_NAMES}
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, json.JSONDecodeError, zipfile.BadZipFile) as err:
        raise CheckpointError(f"unreadable checkpoint: {err}") from err
    if expect_config is not None and cfg != expect_config:
        raise CheckpointError(
            f"checkpoint config {cfg} does not match expected {expect_config}"
        )
    params = Params(cfg, **arrays)
    params.validate()
    return params
