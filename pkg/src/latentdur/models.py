"""Toy differentiable networks with hand-written backpropagation.

Every network is a token embedding plus one affine-tanh cell and affine
heads:

* ``LatentNet_phi`` (prior):      ``c_u = A tanh(W [z_{u-1}; emb(y_u)] + W_h h_{u-1} + b) + a``
* ``LatentNet_psi`` (posterior):  same cell over ``[z_{u-1}; xbar_u; emb(y_u)]``
* decoder:                        ``mu_t = A tanh(W [x_{t-1}; zhat_t; emb(yhat_t)] + b) + a``
* acoustic encoder:               ``tanh(W s_t + b)`` per super-frame ``s_t``, with a 2-way
                                  transition head and a ``V``-way token head, both log-softmaxed

The two latent nets are recurrent over tokens; ``z_0`` is a learned start
code owned by each net.  The embedding table is the shared linguistic
encoder and lives in the ``phi`` group.

Forward functions return ``(output, cache)``; the matching ``*_backward``
adds parameter gradients into a flat array laid out like ``params.values``
and returns gradients for the non-parameter inputs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from .core_types import Codebook, ModelParams, TrainConfig, ValidationError
from .trellis import EmissionTable


@dataclass(frozen=True)
class ModelSpec:
    V: int
    E: int
    H: int
    O: int
    D: int
    g: int = 1
    K: int = 13

    def __post_init__(self):
        for k, v in asdict(self).items():
            if int(v) < 1:
                raise ValidationError(f"ModelSpec.{k} must be >= 1")

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "ModelSpec":
        return cls(V=cfg.V, E=cfg.E, H=cfg.H, O=cfg.O, D=cfg.D, g=cfg.g, K=cfg.K)


def param_layout(spec: ModelSpec) -> Tuple[Tuple[str, Tuple[int, ...]], ...]:
    V, E, H, O, D, g, K = spec.V, spec.E, spec.H, spec.O, spec.D, spec.g, spec.K
    return (
        ("theta.Wi", (H, O + D + E)),
        ("theta.b", (H,)),
        ("theta.A", (O, H)),
        ("theta.a", (O,)),
        ("psi.start", (D,)),
        ("psi.Wi", (H, D + O + E)),
        ("psi.Wh", (H, H)),
        ("psi.b", (H,)),
        ("psi.A", (D, H)),
        ("psi.a", (D,)),
        ("phi.embed", (V, E)),
        ("phi.start", (D,)),
        ("phi.Wi", (H, D + E)),
        ("phi.Wh", (H, H)),
        ("phi.b", (H,)),
        ("phi.A", (D, H)),
        ("phi.a", (D,)),
        ("lambda.Wi", (H, g * O)),
        ("lambda.b", (H,)),
        ("lambda.At", (2, H)),
        ("lambda.at", (2,)),
        ("lambda.Ae", (V, H)),
        ("lambda.ae", (V,)),
        ("codebook", (K, D)),
    )


def init_params(spec: ModelSpec, seed: int = 0, scale: float = 1.0) -> ModelParams:
    """Random initialization: weights ``N(0, scale^2 / fan_in)``, zero biases, ``N(0, 1)`` codebook."""
    rng = np.random.default_rng(seed)
    layout = param_layout(spec)
    chunks = []
    for name, shape in layout:
        leaf = name.split(".")[-1]
        if name == "codebook":
            w = rng.standard_normal(shape)
        elif leaf == "embed":
            w = rng.standard_normal(shape)
        elif len(shape) == 2:
            w = rng.standard_normal(shape) * (scale / np.sqrt(shape[1]))
        else:
            w = np.zeros(shape)
        chunks.append(w.reshape(-1))
    return ModelParams(layout, np.concatenate(chunks))


def zero_params(spec: ModelSpec) -> ModelParams:
    layout = param_layout(spec)
    return ModelParams(layout, np.zeros(sum(int(np.prod(s)) for _, s in layout)))


def codebook_of(params: ModelParams) -> Codebook:
    return Codebook(params["codebook"])


def params_to_dict(spec: ModelSpec, params: ModelParams) -> dict:
    return {"spec": asdict(spec), **params.to_dict()}


def params_from_dict(d: dict) -> Tuple[ModelSpec, ModelParams]:
    spec = ModelSpec(**d["spec"])
    params = ModelParams.from_dict(d)
    if params.layout != param_layout(spec):
        raise ValidationError("parameter layout does not match the model spec")
    return spec, params


class GradBuffer:
    """Flat gradient accumulator addressed by parameter name."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.values = np.zeros(params.size)

    def add(self, name: str, g: np.ndarray) -> None:
        self.values[self.params.slice_of(name)] += np.asarray(g).reshape(-1)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[self.params.slice_of(name)].reshape(self.params.shape_of(name))


# -- shared cell -------------------------------------------------------------

def _cell_forward(p: ModelParams, prefix: str, X: np.ndarray, recurrent: bool):
    Wi, b, A, a = p[prefix + ".Wi"], p[prefix + ".b"], p[prefix + ".A"], p[prefix + ".a"]
    pre = X @ Wi.T + b
    if recurrent:
        Wh = p[prefix + ".Wh"]
        h = np.empty_like(pre)
        prev = np.zeros(pre.shape[1])
        for u in range(pre.shape[0]):
            prev = np.tanh(pre[u] + Wh @ prev)
            h[u] = prev
    else:
        h = np.tanh(pre)
    return h @ A.T + a, (X, h)


def _cell_backward(p: ModelParams, prefix: str, cache, dout: np.ndarray, grad: GradBuffer,
                   recurrent: bool) -> np.ndarray:
    X, h = cache
    Wi, A = p[prefix + ".Wi"], p[prefix + ".A"]
    grad.add(prefix + ".A", dout.T @ h)
    grad.add(prefix + ".a", dout.sum(axis=0))
    dh = dout @ A
    if recurrent:
        Wh = p[prefix + ".Wh"]
        dpre = np.empty_like(h)
        carry = np.zeros(h.shape[1])
        dWh = np.zeros_like(Wh)
        for u in range(h.shape[0] - 1, -1, -1):
            dpre[u] = (dh[u] + carry) * (1.0 - h[u] ** 2)
            if u > 0:
                dWh += np.outer(dpre[u], h[u - 1])
            carry = Wh.T @ dpre[u]
        grad.add(prefix + ".Wh", dWh)
    else:
        dpre = dh * (1.0 - h ** 2)
    grad.add(prefix + ".Wi", dpre.T @ X)
    grad.add(prefix + ".b", dpre.sum(axis=0))
    return dpre @ Wi


def _check_tokens(p: ModelParams, tokens) -> np.ndarray:
    y = np.asarray(tokens, dtype=np.int64).reshape(-1)
    V = p.shape_of("phi.embed")[0]
    if y.size and (y.min() < 0 or y.max() >= V):
        raise ValidationError(f"token id out of range 0..{V - 1}")
    return y


def _prev_codes(p: ModelParams, prefix: str, prev_codes: np.ndarray, U: int) -> np.ndarray:
    D = p.shape_of(prefix + ".start")[0]
    prev = np.asarray(prev_codes, dtype=np.float64).reshape(-1, D)
    if prev.shape[0] != U - 1:
        raise ValidationError(f"need {U - 1} feedback codes for {U} tokens, got {prev.shape[0]}")
    return np.vstack([p[prefix + ".start"][None, :], prev])


def _scatter_embed(grad: GradBuffer, y: np.ndarray, d_emb: np.ndarray) -> None:
    g = np.zeros_like(grad["phi.embed"])
    np.add.at(g, y, d_emb)
    grad.add("phi.embed", g)


# -- LatentNet_phi -------------------------------------------------------------

def latentnet_phi(params: ModelParams, prev_codes: np.ndarray, tokens):
    """Prior activations ``c_{1:U}`` given the codes of tokens ``1..U-1`` (teacher forced)."""
    y = _check_tokens(params, tokens)
    Z = _prev_codes(params, "phi", prev_codes, y.size)
    X = np.hstack([Z, params["phi.embed"][y]])
    out, cache = _cell_forward(params, "phi", X, recurrent=True)
    return out, (y, cache)


def latentnet_phi_backward(params: ModelParams, cache, d_c: np.ndarray, grad: GradBuffer) -> np.ndarray:
    """Returns the gradient w.r.t. ``prev_codes``."""
    y, cell = cache
    D = params.shape_of("phi.start")[0]
    dX = _cell_backward(params, "phi", cell, d_c, grad, recurrent=True)
    grad.add("phi.start", dX[0, :D])
    _scatter_embed(grad, y, dX[:, D:])
    return dX[1:, :D]


def latentnet_phi_step(params: ModelParams, h: Optional[np.ndarray], z_prev: Optional[np.ndarray],
                       token: int) -> Tuple[np.ndarray, np.ndarray]:
    """One free-running prior step; ``z_prev=None`` means the start code."""
    y = int(_check_tokens(params, [token])[0])
    H = params.shape_of("phi.b")[0]
    h = np.zeros(H) if h is None else h
    z = params["phi.start"] if z_prev is None else np.asarray(z_prev, dtype=np.float64)
    x = np.concatenate([z, params["phi.embed"][y]])
    h_new = np.tanh(params["phi.Wi"] @ x + params["phi.Wh"] @ h + params["phi.b"])
    return params["phi.A"] @ h_new + params["phi.a"], h_new


# -- LatentNet_psi -------------------------------------------------------------

def latentnet_psi(params: ModelParams, prev_codes: np.ndarray, xbar: np.ndarray, tokens):
    """Posterior means ``d_{1:U}`` from feedback codes, aggregated frames and tokens."""
    y = _check_tokens(params, tokens)
    Z = _prev_codes(params, "psi", prev_codes, y.size)
    xbar = np.asarray(xbar, dtype=np.float64)
    if xbar.shape[0] != y.size:
        raise ValidationError(f"{xbar.shape[0]} aggregated frames for {y.size} tokens")
    X = np.hstack([Z, xbar, params["phi.embed"][y]])
    out, cache = _cell_forward(params, "psi", X, recurrent=True)
    return out, (y, xbar.shape[1], cache)


def latentnet_psi_backward(params: ModelParams, cache, d_d: np.ndarray,
                           grad: GradBuffer) -> Tuple[np.ndarray, np.ndarray]:
    """Returns gradients w.r.t. ``(prev_codes, xbar)``."""
    y, O, cell = cache
    D = params.shape_of("psi.start")[0]
    dX = _cell_backward(params, "psi", cell, d_d, grad, recurrent=True)
    grad.add("psi.start", dX[0, :D])
    _scatter_embed(grad, y, dX[:, D + O:])
    return dX[1:, :D], dX[:, D:D + O]


# -- decoder -------------------------------------------------------------------

def decoder(params: ModelParams, x_prev: np.ndarray, z_hat: np.ndarray, y_hat):
    """Teacher-forced frame means: row ``t`` sees ``x_{t-1}`` (zero go-frame for ``t=1``)."""
    y = _check_tokens(params, y_hat)
    X = np.hstack([np.asarray(x_prev, dtype=np.float64), np.asarray(z_hat, dtype=np.float64),
                   params["phi.embed"][y]])
    out, cache = _cell_forward(params, "theta", X, recurrent=False)
    return out, (y, np.shape(x_prev)[1], np.shape(z_hat)[1], cache)


def decoder_backward(params: ModelParams, cache, d_mu: np.ndarray,
                     grad: GradBuffer) -> Tuple[np.ndarray, np.ndarray]:
    """Returns gradients w.r.t. ``(x_prev, z_hat)``."""
    y, O, D, cell = cache
    dX = _cell_backward(params, "theta", cell, d_mu, grad, recurrent=False)
    _scatter_embed(grad, y, dX[:, O + D:])
    return dX[:, :O], dX[:, O:O + D]


def decoder_step(params: ModelParams, x_prev: np.ndarray, z_hat: np.ndarray, y_hat: int) -> np.ndarray:
    """Mean of one frame; free-running synthesis feeds this back as the next ``x_prev``."""
    mu, _ = decoder(params, np.asarray(x_prev)[None, :], np.asarray(z_hat)[None, :], [y_hat])
    return mu[0]


def teacher_inputs(x: np.ndarray) -> np.ndarray:
    """Previous-frame inputs for teacher forcing: the go-frame followed by ``x_{1:T-1}``."""
    x = np.asarray(x, dtype=np.float64)
    return np.vstack([np.zeros((1, x.shape[1])), x[:-1]])


# -- acoustic encoder ------------------------------------------------------------

def acoustic_encoder(params: ModelParams, super_frames: np.ndarray):
    """Transition and token log-probabilities for every super-frame."""
    s = np.asarray(super_frames, dtype=np.float64)
    width = params.shape_of("lambda.Wi")[1]
    if s.ndim != 2 or s.shape[1] != width:
        raise ValidationError(f"super-frames must be T' x {width}, got {s.shape}")
    X = s
    h = np.tanh(X @ params["lambda.Wi"].T + params["lambda.b"])
    log_trans = log_softmax(h @ params["lambda.At"].T + params["lambda.at"], axis=1)
    log_emit = log_softmax(h @ params["lambda.Ae"].T + params["lambda.ae"], axis=1)
    return EmissionTable(log_trans, log_emit), (X, h, log_trans, log_emit)


def acoustic_encoder_backward(params: ModelParams, cache, d_log_trans: np.ndarray,
                              d_log_emit: np.ndarray, grad: GradBuffer) -> None:
    X, h, log_trans, log_emit = cache
    dz_t = d_log_trans - np.exp(log_trans) * d_log_trans.sum(axis=1, keepdims=True)
    dz_e = d_log_emit - np.exp(log_emit) * d_log_emit.sum(axis=1, keepdims=True)
    grad.add("lambda.At", dz_t.T @ h)
    grad.add("lambda.at", dz_t.sum(axis=0))
    grad.add("lambda.Ae", dz_e.T @ h)
    grad.add("lambda.ae", dz_e.sum(axis=0))
    dh = dz_t @ params["lambda.At"] + dz_e @ params["lambda.Ae"]
    dpre = dh * (1.0 - h ** 2)
    grad.add("lambda.Wi", dpre.T @ X)
    grad.add("lambda.b", dpre.sum(axis=0))


# -- gradient verification ---------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5,
                     indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (flattened), optionally on a subset of coordinates."""
    x = np.array(x, dtype=np.float64).reshape(-1)
    idx = range(x.size) if indices is None else indices
    out = np.zeros(x.size)
    for i in idx:
        old = x[i]
        x[i] = old + eps
        fp = f(x.copy())
        x[i] = old - eps
        fm = f(x.copy())
        x[i] = old
        out[i] = (fp - fm) / (2.0 * eps)
    return out


def finite_diff_check(f: Callable[[np.ndarray], Tuple[float, np.ndarray]], x: np.ndarray,
                      eps: float = 1e-5, indices: Optional[Sequence[int]] = None) -> float:
    """Largest elementwise relative error between ``f``'s analytic gradient and central differences.

    ``f`` maps a flat vector to ``(value, gradient)``.  The relative error of
    each coordinate uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator.
    """
    x = np.array(x, dtype=np.float64).reshape(-1)
    _, analytic = f(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = numeric_gradient(lambda v: f(v)[0], x, eps, indices)
    idx = np.arange(x.size) if indices is None else np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return 0.0
    return float(np.max(relative_error(analytic[idx], numeric[idx])))
