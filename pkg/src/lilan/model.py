"""Flow-map surrogate built from linear latent dynamics.

Two encoders map (initial condition, parameters) to a latent anchor and
a latent slope; a time-warp network maps (t, initial condition,
parameters) to one warped time per latent channel; the latent state is
the closed-form line `anchor + warp * slope`; a decoder maps it back to
physical states.  Four wiring variants share this skeleton, and the
warp can be replaced by the plain rescaled time for ablations.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .exceptions import ShapeError, TransformDomainError
from .nets import Mlp, forward, forward_with_tape, init_mlp, load_mlp, save_mlp
from .transforms import TransformSpec, identity_transforms

VARIANTS = ("full", "independent", "common_encoder", "common_decoder")
MODEL_MANIFEST_VERSION = 1


def latent_solution(e_out, c_out, tau_out):
    """Closed-form latent state: anchor + warped-time (.) slope."""
    e_out = np.asarray(e_out, dtype=float)
    c_out = np.asarray(c_out, dtype=float)
    tau_out = np.asarray(tau_out, dtype=float)
    if not (e_out.shape == c_out.shape == tau_out.shape):
        raise ShapeError(
            f"latent pieces disagree: {e_out.shape}, {c_out.shape}, {tau_out.shape}"
        )
    return e_out + tau_out * c_out


@dataclass
class LiLaNModel:
    variant: str
    n_x: int
    n_p: int
    latent_dim: int  # total across blocks
    encoder_layout: str  # "x0_p" | "p_only"
    conservation_mode: str  # "none" | "softmax_scaled"
    transforms: TransformSpec
    use_tau: bool
    state_encoders: list  # anchor nets (e)
    slope_encoders: list  # slope nets (c)
    time_warps: list  # warp nets (tau); empty when use_tau is False
    decoders: list
    warp_gains: list = None  # trainable per-channel gain on each warp output

    def __post_init__(self):
        if self.warp_gains is None:
            self.warp_gains = [np.ones(net.n_out) for net in self.time_warps]

    @property
    def n_blocks(self) -> int:
        return self.n_x if self.variant in ("independent", "common_decoder") else 1

    @property
    def block_dim(self) -> int:
        return self.latent_dim // self.n_blocks

    @property
    def encoder_width(self) -> int:
        return self.n_x + self.n_p if self.encoder_layout == "x0_p" else self.n_p

    def all_nets(self):
        for group in (self.state_encoders, self.slope_encoders, self.time_warps, self.decoders):
            yield from group

    def copy(self) -> "LiLaNModel":
        return LiLaNModel(
            self.variant,
            self.n_x,
            self.n_p,
            self.latent_dim,
            self.encoder_layout,
            self.conservation_mode,
            self.transforms,
            self.use_tau,
            [n.copy() for n in self.state_encoders],
            [n.copy() for n in self.slope_encoders],
            [n.copy() for n in self.time_warps],
            [n.copy() for n in self.decoders],
            [g.copy() for g in self.warp_gains],
        )


def model_param_count(model: LiLaNModel) -> int:
    """Total trainable parameters: networks plus warp gains."""
    total = sum(nets.param_count(n.layer_sizes) for n in model.all_nets())
    total += sum(g.size for g in model.warp_gains)
    return int(total)


def validate_model(model: LiLaNModel) -> None:
    if model.variant not in VARIANTS:
        raise ShapeError(f"unknown variant {model.variant!r}")
    if model.latent_dim % model.n_blocks != 0:
        raise ShapeError("latent_dim must split evenly across blocks")
    m_b = model.block_dim
    d_in = model.encoder_width
    nb = model.n_blocks
    if len(model.state_encoders) != nb or len(model.slope_encoders) != nb:
        raise ShapeError(f"variant {model.variant}: expected {nb} encoder block(s)")
    if model.use_tau and len(model.time_warps) != nb:
        raise ShapeError(f"variant {model.variant}: expected {nb} time-warp net(s)")
    for net in model.state_encoders + model.slope_encoders:
        if net.n_in != d_in or net.n_out != m_b:
            raise ShapeError(f"encoder must map {d_in} -> {m_b}, got {net.layer_sizes}")
    for net in model.time_warps:
        if net.n_in != d_in + 1 or net.n_out != m_b:
            raise ShapeError(f"time warp must map {d_in + 1} -> {m_b}, got {net.layer_sizes}")
    if model.use_tau:
        if len(model.warp_gains) != nb or any(g.shape != (m_b,) for g in model.warp_gains):
            raise ShapeError("warp gains must be one length-m vector per block")
    n_dec = 1 if model.variant in ("full", "common_decoder") else model.n_x
    if len(model.decoders) != n_dec:
        raise ShapeError(f"variant {model.variant}: expected {n_dec} decoder(s)")
    dec_out = model.n_x if model.variant == "full" else 1
    for net in model.decoders:
        if net.n_in != m_b or net.n_out != dec_out:
            raise ShapeError(f"decoder must map {m_b} -> {dec_out}, got {net.layer_sizes}")


def build_model(
    problem,
    seed: int,
    variant: str | None = None,
    latent_dim: int | None = None,
    use_tau: bool = True,
    transforms: TransformSpec | None = None,
    conservation_mode: str | None = None,
    arch: dict | None = None,
) -> LiLaNModel:
    """Instantiate a model for a problem from its default architecture.

    `arch` entries override the problem defaults; hidden-layer lists may
    be given per net role (encoder_hidden, slope_hidden, tau_hidden,
    decoder_hidden).
    """
    spec = dict(problem.arch)
    if arch:
        spec.update(arch)
    variant = variant or spec["variant"]
    if variant not in VARIANTS:
        raise ShapeError(f"unknown variant {variant!r}")
    n_x, n_p = problem.n_x, problem.n_p
    n_blocks = n_x if variant in ("independent", "common_decoder") else 1
    if latent_dim is None:
        if "latent_per_block" in spec and n_blocks > 1:
            latent_dim = spec["latent_per_block"] * n_blocks
        else:
            latent_dim = spec.get("latent_dim", spec.get("latent_per_block", 5) * n_blocks)
    if latent_dim % n_blocks != 0:
        raise ShapeError(f"latent_dim {latent_dim} not divisible by {n_blocks} blocks")
    m_b = latent_dim // n_blocks

    if use_tau:
        enc_hidden = spec["encoder_hidden"]
        dec_hidden = spec["decoder_hidden"]
    else:
        enc_hidden = spec.get("no_tau_encoder_hidden", spec["encoder_hidden"])
        dec_hidden = spec.get("no_tau_decoder_hidden", spec["decoder_hidden"])
    slope_hidden = spec.get("slope_hidden", enc_hidden) if use_tau else enc_hidden
    tau_hidden = spec.get("tau_hidden", enc_hidden)

    d_in = n_x + n_p if problem.encoder_layout == "x0_p" else n_p
    n_dec = 1 if variant in ("full", "common_decoder") else n_x
    dec_out = n_x if variant == "full" else 1

    n_nets = 2 * n_blocks + (n_blocks if use_tau else 0) + n_dec
    seeds = np.random.SeedSequence(seed).generate_state(n_nets)
    pool = iter(int(s) for s in seeds)

    state_encoders = [init_mlp([d_in, *enc_hidden, m_b], next(pool)) for _ in range(n_blocks)]
    slope_encoders = [init_mlp([d_in, *slope_hidden, m_b], next(pool)) for _ in range(n_blocks)]
    time_warps = (
        [init_mlp([1 + d_in, *tau_hidden, m_b], next(pool)) for _ in range(n_blocks)]
        if use_tau
        else []
    )
    decoders = [init_mlp([m_b, *dec_hidden, dec_out], next(pool)) for _ in range(n_dec)]

    model = LiLaNModel(
        variant=variant,
        n_x=n_x,
        n_p=n_p,
        latent_dim=latent_dim,
        encoder_layout=problem.encoder_layout,
        conservation_mode=(
            conservation_mode if conservation_mode is not None else problem.conservation_mode
        ),
        transforms=transforms if transforms is not None else identity_transforms(),
        use_tau=use_tau,
        state_encoders=state_encoders,
        slope_encoders=slope_encoders,
        time_warps=time_warps,
        decoders=decoders,
    )
    validate_model(model)
    return model


# ---------------------------------------------------------------------------
# Forward evaluation
# ---------------------------------------------------------------------------


def encoder_inputs(model: LiLaNModel, x0: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Transformed [x0 | p] block, sliced to the model's input layout."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    p = np.zeros((x0.shape[0], 0)) if p is None else np.asarray(p, dtype=float)
    if p.size == 0:
        p = np.zeros((x0.shape[0], model.n_p))
    p = np.atleast_2d(p)
    if x0.shape[1] != model.n_x or p.shape[1] != model.n_p:
        raise ShapeError(
            f"expected x0 width {model.n_x} and p width {model.n_p}, "
            f"got {x0.shape} and {p.shape}"
        )
    full = model.transforms.apply_inputs(np.concatenate([x0, p], axis=1))
    if model.encoder_layout == "p_only":
        return full[:, model.n_x:]
    return full


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def decoder_output(
    model: LiLaNModel, enc_in: np.ndarray, t_scaled: np.ndarray, no_tau: bool = False
) -> np.ndarray:
    """Raw decoder output on the (sample, time) grid, shape (N, T, n_x)."""
    n_samp = enc_in.shape[0]
    t_scaled = np.atleast_1d(np.asarray(t_scaled, dtype=float))
    n_t = t_scaled.size
    broadcast = (not model.use_tau) or no_tau

    if not broadcast:
        warp_in = np.empty((n_samp * n_t, 1 + enc_in.shape[1]))
        warp_in[:, 0] = np.tile(t_scaled, n_samp)
        warp_in[:, 1:] = np.repeat(enc_in, n_t, axis=0)

    latents = []
    for b in range(model.n_blocks):
        anchor = forward(model.state_encoders[b], enc_in)
        slope = forward(model.slope_encoders[b], enc_in)
        if broadcast:
            warp = np.broadcast_to(t_scaled[None, :, None], (n_samp, n_t, 1))
        else:
            warp = forward(model.time_warps[b], warp_in).reshape(n_samp, n_t, -1)
            warp = warp * model.warp_gains[b]
        latents.append(anchor[:, None, :] + warp * slope[:, None, :])

    if model.variant == "full":
        rows = latents[0].reshape(n_samp * n_t, -1)
        raw = forward(model.decoders[0], rows).reshape(n_samp, n_t, model.n_x)
    elif model.variant == "common_encoder":
        rows = latents[0].reshape(n_samp * n_t, -1)
        cols = [forward(d, rows).reshape(n_samp, n_t) for d in model.decoders]
        raw = np.stack(cols, axis=-1)
    else:  # independent / common_decoder: one latent block per component
        cols = []
        for i in range(model.n_x):
            dec = model.decoders[i] if model.variant == "independent" else model.decoders[0]
            rows = latents[i].reshape(n_samp * n_t, -1)
            cols.append(forward(dec, rows).reshape(n_samp, n_t))
        raw = np.stack(cols, axis=-1)
    return raw


def physical_from_raw(model: LiLaNModel, raw: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Map raw decoder output to physical states.

    With softmax conservation the decoder output is treated as logits and
    rescaled to the per-sample conserved total; otherwise it lives in the
    transformed state domain and is inverted.
    """
    if model.conservation_mode == "softmax_scaled":
        totals = np.asarray(x0, dtype=float).sum(axis=-1)
        return _softmax(raw) * np.reshape(totals, (-1, 1, 1))
    return model.transforms.invert_states(raw)


def transformed_from_raw(model: LiLaNModel, raw: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Raw decoder output mapped to the transformed (loss) domain."""
    if model.conservation_mode == "softmax_scaled":
        return model.transforms.apply_states(physical_from_raw(model, raw, x0))
    return raw


def predict_batch(model: LiLaNModel, x0, p, times, no_tau: bool = False) -> np.ndarray:
    """Physical-state predictions on a (samples x times) grid: (N, T, n_x)."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    enc_in = encoder_inputs(model, x0, p)
    t_scaled = model.transforms.apply_time(np.atleast_1d(times))
    raw = decoder_output(model, enc_in, t_scaled, no_tau=no_tau)
    return physical_from_raw(model, raw, x0)


def _predict_shaped(model, x0, p, t, no_tau):
    x0 = np.asarray(x0, dtype=float)
    t = np.asarray(t, dtype=float)
    single_sample = x0.ndim == 1
    single_time = t.ndim == 0
    out = predict_batch(
        model,
        x0 if not single_sample else x0[None, :],
        p,
        np.atleast_1d(t),
        no_tau=no_tau,
    )
    if single_sample and single_time:
        return out[0, 0]
    if single_sample:
        return out[0]
    if single_time:
        return out[:, 0]
    return out


def predict(model: LiLaNModel, x0, p, t):
    """Predicted physical state(s) for one query or a batch of queries."""
    return _predict_shaped(model, x0, p, t, no_tau=False)


def predict_no_tau(model: LiLaNModel, x0, p, t):
    """Prediction with the warp replaced by the rescaled time itself."""
    return _predict_shaped(model, x0, p, t, no_tau=True)


# ---------------------------------------------------------------------------
# Forward/backward with tapes (training support)
# ---------------------------------------------------------------------------


@dataclass
class ForwardCache:
    enc_in: np.ndarray
    t_scaled: np.ndarray
    no_tau: bool
    anchors: list = field(default_factory=list)
    slopes: list = field(default_factory=list)
    warps: list = field(default_factory=list)  # effective warps, (N, T, m_b)
    raw_warps: list = field(default_factory=list)  # pre-gain warp-net outputs
    anchor_tapes: list = field(default_factory=list)
    slope_tapes: list = field(default_factory=list)
    warp_tapes: list = field(default_factory=list)
    decoder_tapes: list = field(default_factory=list)
    raw: np.ndarray | None = None


def forward_training(
    model: LiLaNModel, enc_in: np.ndarray, t_scaled: np.ndarray, no_tau: bool = False
):
    """Forward pass that keeps every tape needed for backward_training."""
    n_samp = enc_in.shape[0]
    t_scaled = np.atleast_1d(np.asarray(t_scaled, dtype=float))
    n_t = t_scaled.size
    broadcast = (not model.use_tau) or no_tau
    cache = ForwardCache(enc_in=enc_in, t_scaled=t_scaled, no_tau=broadcast)

    if not broadcast:
        warp_in = np.empty((n_samp * n_t, 1 + enc_in.shape[1]))
        warp_in[:, 0] = np.tile(t_scaled, n_samp)
        warp_in[:, 1:] = np.repeat(enc_in, n_t, axis=0)

    latents = []
    for b in range(model.n_blocks):
        anchor, tape_a = forward_with_tape(model.state_encoders[b], enc_in)
        slope, tape_s = forward_with_tape(model.slope_encoders[b], enc_in)
        if broadcast:
            warp = np.broadcast_to(t_scaled[None, :, None], (n_samp, n_t, 1))
            raw_warp, tape_w = None, None
        else:
            flat, tape_w = forward_with_tape(model.time_warps[b], warp_in)
            raw_warp = flat.reshape(n_samp, n_t, -1)
            warp = raw_warp * model.warp_gains[b]
        cache.anchors.append(anchor)
        cache.slopes.append(slope)
        cache.warps.append(warp)
        cache.raw_warps.append(raw_warp)
        cache.anchor_tapes.append(tape_a)
        cache.slope_tapes.append(tape_s)
        cache.warp_tapes.append(tape_w)
        latents.append(anchor[:, None, :] + warp * slope[:, None, :])

    if model.variant == "full":
        rows = latents[0].reshape(n_samp * n_t, -1)
        out, tape = forward_with_tape(model.decoders[0], rows)
        cache.decoder_tapes.append(tape)
        raw = out.reshape(n_samp, n_t, model.n_x)
    elif model.variant == "common_encoder":
        rows = latents[0].reshape(n_samp * n_t, -1)
        cols = []
        for d in model.decoders:
            out, tape = forward_with_tape(d, rows)
            cache.decoder_tapes.append(tape)
            cols.append(out.reshape(n_samp, n_t))
        raw = np.stack(cols, axis=-1)
    else:
        cols = []
        for i in range(model.n_x):
            dec = model.decoders[i] if model.variant == "independent" else model.decoders[0]
            rows = latents[i].reshape(n_samp * n_t, -1)
            out, tape = forward_with_tape(dec, rows)
            cache.decoder_tapes.append(tape)
            cols.append(out.reshape(n_samp, n_t))
        raw = np.stack(cols, axis=-1)
    cache.raw = raw
    return raw, cache


def backward_training(model: LiLaNModel, cache: ForwardCache, raw_grad: np.ndarray):
    """Gradients of <raw_grad, raw> for every network, keyed by group."""
    n_samp, n_t, _ = raw_grad.shape
    m_b = model.block_dim

    latent_grads = []
    dec_grads = []
    if model.variant == "full":
        g_rows = raw_grad.reshape(n_samp * n_t, model.n_x)
        pg, g_y = nets.backward(model.decoders[0], cache.decoder_tapes[0], g_rows)
        dec_grads.append(pg)
        latent_grads.append(g_y.reshape(n_samp, n_t, m_b))
    elif model.variant == "common_encoder":
        g_y = np.zeros((n_samp * n_t, m_b))
        for i, d in enumerate(model.decoders):
            g_col = raw_grad[:, :, i].reshape(n_samp * n_t, 1)
            pg, g_in = nets.backward(d, cache.decoder_tapes[i], g_col)
            dec_grads.append(pg)
            g_y += g_in
        latent_grads.append(g_y.reshape(n_samp, n_t, m_b))
    elif model.variant == "independent":
        for i, d in enumerate(model.decoders):
            g_col = raw_grad[:, :, i].reshape(n_samp * n_t, 1)
            pg, g_in = nets.backward(d, cache.decoder_tapes[i], g_col)
            dec_grads.append(pg)
            latent_grads.append(g_in.reshape(n_samp, n_t, m_b))
    else:  # common_decoder: shared net, one tape per block
        shared = None
        for i in range(model.n_x):
            g_col = raw_grad[:, :, i].reshape(n_samp * n_t, 1)
            pg, g_in = nets.backward(model.decoders[0], cache.decoder_tapes[i], g_col)
            shared = pg if shared is None else nets.accumulate_grads(shared, pg)
            latent_grads.append(g_in.reshape(n_samp, n_t, m_b))
        dec_grads.append(shared)

    anchor_grads, slope_grads, warp_grads, gain_grads = [], [], [], []
    for b in range(model.n_blocks):
        g_y = latent_grads[b]
        g_anchor = g_y.sum(axis=1)
        pg_a, _ = nets.backward(model.state_encoders[b], cache.anchor_tapes[b], g_anchor)
        anchor_grads.append(pg_a)
        g_slope = (g_y * cache.warps[b]).sum(axis=1)
        pg_s, _ = nets.backward(model.slope_encoders[b], cache.slope_tapes[b], g_slope)
        slope_grads.append(pg_s)
        if not cache.no_tau:
            g_warp_eff = g_y * cache.slopes[b][:, None, :]
            gain_grads.append((g_warp_eff * cache.raw_warps[b]).sum(axis=(0, 1)))
            g_warp = (g_warp_eff * model.warp_gains[b]).reshape(n_samp * n_t, m_b)
            pg_w, _ = nets.backward(model.time_warps[b], cache.warp_tapes[b], g_warp)
            warp_grads.append(pg_w)

    return {
        "state_encoders": anchor_grads,
        "slope_encoders": slope_grads,
        "time_warps": warp_grads,
        "decoders": dec_grads,
        "warp_gains": gain_grads,
    }


def raw_grad_from_transformed(model: LiLaNModel, cache: ForwardCache, g_trans, x0):
    """Chain a transformed-domain gradient back to the raw decoder output."""
    raw = cache.raw
    if model.conservation_mode == "softmax_scaled":
        totals = np.asarray(x0, dtype=float).sum(axis=-1).reshape(-1, 1, 1)
        soft = _softmax(raw)
        phys = soft * totals
        if model.transforms.state_log10:
            floor = model.transforms.state_floor or 0.0
            live = phys > floor
            g_phys = np.where(live, g_trans / (np.maximum(phys, floor) * np.log(10.0)), 0.0)
        else:
            g_phys = np.asarray(g_trans)
        g_logits = totals * soft * (g_phys - (g_phys * soft).sum(axis=-1, keepdims=True))
        return g_logits
    return np.asarray(g_trans).copy()


# ---------------------------------------------------------------------------
# Direct-learning construction
# ---------------------------------------------------------------------------


def build_direct_equivalent(w1, w, b, c1, activation: str = "tanh") -> LiLaNModel:
    """Wrap a one-hidden-layer network of (t, x0, p) as a full-variant model.

    The anchor is the affine map of (x0, p), the slope is the constant
    one-vector, the warp is linear in t, and the decoder applies the
    activation then the output layer, so predictions coincide with the
    single-hidden-layer network exactly.
    """
    if activation != "tanh":
        raise ValueError("only tanh hidden activations are supported")
    w1 = np.asarray(w1, dtype=float)
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=float)
    c1 = np.asarray(c1, dtype=float)
    n_x, m = w1.shape
    if w.ndim != 2 or w.shape[0] != m or b.shape != (m,) or c1.shape != (n_x,):
        raise ShapeError("inconsistent direct-network shapes")
    n_p = w.shape[1] - 1 - n_x
    if n_p < 0:
        raise ShapeError("weight matrix too narrow for (t, x0, p) inputs")

    d_in = n_x + n_p
    w_t = w[:, :1]
    w_xp = w[:, 1:]

    anchor = Mlp([d_in, m], [w_xp.copy()], [b.copy()])
    slope = Mlp([d_in, m], [np.zeros((m, d_in))], [np.ones(m)])
    warp_w = np.zeros((m, 1 + d_in))
    warp_w[:, :1] = w_t
    warp = Mlp([1 + d_in, m], [warp_w], [np.zeros(m)])
    decoder = Mlp([m, m, n_x], [np.eye(m), w1.copy()], [np.zeros(m), c1.copy()])

    model = LiLaNModel(
        variant="full",
        n_x=n_x,
        n_p=n_p,
        latent_dim=m,
        encoder_layout="x0_p",
        conservation_mode="none",
        transforms=identity_transforms(),
        use_tau=True,
        state_encoders=[anchor],
        slope_encoders=[slope],
        time_warps=[warp],
        decoders=[decoder],
    )
    validate_model(model)
    return model


# ---------------------------------------------------------------------------
# Lifting embedding with analytic left inverse
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingPair:
    matrix: np.ndarray  # (m, n_x), linearly independent columns
    pinv: np.ndarray  # (n_x, m)


def make_embedding(a: np.ndarray) -> EmbeddingPair:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise ShapeError("embedding matrix must be m x n_x with m >= n_x")
    if np.linalg.matrix_rank(a) < a.shape[1]:
        raise ShapeError("embedding matrix columns must be linearly independent")
    pinv = np.linalg.pinv(a)
    if not np.allclose(pinv @ a, np.eye(a.shape[1]), atol=1e-10):
        raise ShapeError("pseudo-inverse failed the left-inverse check")
    return EmbeddingPair(a, pinv)


def embed(pair: EmbeddingPair, y: np.ndarray) -> np.ndarray:
    """Componentwise softplus of the lifted vector: log(1 + exp(A y))."""
    y = np.asarray(y, dtype=float)
    v = y @ pair.matrix.T if y.ndim > 1 else pair.matrix @ y
    return np.logaddexp(0.0, v)


def embed_inverse(pair: EmbeddingPair, z: np.ndarray) -> np.ndarray:
    """Left inverse: A^+ log(exp(z) - 1); requires every z > 0."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise TransformDomainError("embedding inverse needs strictly positive inputs")
    big = z > 30.0
    w = np.where(big, z + np.log1p(-np.exp(-np.where(big, z, 1.0))), 0.0)
    small = ~big
    if np.any(small):
        w = np.where(small, np.log(np.expm1(np.where(small, z, 1.0))), w)
    return w @ pair.pinv.T if w.ndim > 1 else pair.pinv @ w


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_NET_GROUPS = ("state_encoders", "slope_encoders", "time_warps", "decoders")


def save_model(model: LiLaNModel, directory) -> None:
    """Write manifest.json plus one checkpoint file per network."""
    directory = str(directory)
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "manifest_version": MODEL_MANIFEST_VERSION,
        "variant": model.variant,
        "n_x": model.n_x,
        "n_p": model.n_p,
        "latent_dim": model.latent_dim,
        "encoder_layout": model.encoder_layout,
        "conservation_mode": model.conservation_mode,
        "use_tau": model.use_tau,
        "transforms": model.transforms.to_dict(),
        "warp_gains": [g.tolist() for g in model.warp_gains],
        "nets": {},
    }
    for group in _NET_GROUPS:
        files = []
        for i, net in enumerate(getattr(model, group)):
            fname = f"{group[:-1]}_{i}.liln"
            save_mlp(net, os.path.join(directory, fname))
            files.append(fname)
        manifest["nets"][group] = files
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_model(directory) -> LiLaNModel:
    directory = str(directory)
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    groups = {
        group: [load_mlp(os.path.join(directory, f)) for f in manifest["nets"][group]]
        for group in _NET_GROUPS
    }
    model = LiLaNModel(
        variant=manifest["variant"],
        n_x=manifest["n_x"],
        n_p=manifest["n_p"],
        latent_dim=manifest["latent_dim"],
        encoder_layout=manifest["encoder_layout"],
        conservation_mode=manifest["conservation_mode"],
        transforms=TransformSpec.from_dict(manifest["transforms"]),
        use_tau=manifest["use_tau"],
        warp_gains=[np.asarray(g, dtype=float) for g in manifest["warp_gains"]],
        **groups,
    )
    validate_model(model)
    return model
