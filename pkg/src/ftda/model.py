"""Fixed-architecture MLP in plain numpy.

Parameters live in one flat float64 vector; layer l maps width arch[l] to
arch[l+1] and contributes W_l (out, in) followed by b_l (out,) to the flat
layout. All gradient machinery is written out explicitly: reverse-mode
backprop for (weighted, per-example) gradients, and a forward-over-reverse
pass for exact Hessian-vector products.

The scalar-output decomposition used by the Gauss-Newton curvature writes
each per-instance loss as a convex scalar function of a single model
output: for regression the prediction error with half-squared loss, for
classification the log-odds of the target class with a softplus loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .data import CLASSIFICATION, REGRESSION, Dataset, Task
from .prng import TAG_INIT, stream


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Activations. Each entry maps preactivation a to (value, first and second
# derivative); second derivatives are needed by the curvature-vector pass.

def _tanh(a):
    t = np.tanh(a)
    s1 = 1.0 - t * t
    return t, s1, -2.0 * t * s1


def _relu(a):
    s1 = (a > 0).astype(np.float64)
    return a * s1, s1, np.zeros_like(a)


ACTIVATIONS = {"tanh": _tanh, "relu": _relu}


def mlp_arch(d: int, hidden, task: Task) -> tuple:
    out = task.num_classes if task.kind == CLASSIFICATION else 1
    return (d, *tuple(int(h) for h in hidden), out)


def param_count(arch) -> int:
    return sum((arch[l] + 1) * arch[l + 1] for l in range(len(arch) - 1))


def unpack(theta: np.ndarray, arch) -> list:
    """Views (W_l, b_l) into the flat vector, no copies."""
    layers = []
    off = 0
    for l in range(len(arch) - 1):
        nin, nout = arch[l], arch[l + 1]
        w = theta[off:off + nin * nout].reshape(nout, nin)
        off += nin * nout
        b = theta[off:off + nout]
        off += nout
        layers.append((w, b))
    if off != theta.shape[0]:
        raise ModelError(f"theta length {theta.shape[0]} != {off} for arch {arch}")
    return layers


def pack(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])


@dataclass(frozen=True)
class ModelState:
    theta: np.ndarray
    arch: tuple
    activation: str
    task: Task

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.shape != (param_count(self.arch),):
            raise ModelError(f"theta shape {theta.shape} does not match arch "
                             f"{self.arch}")
        if not np.all(np.isfinite(theta)):
            raise ModelError("non-finite parameters")
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation {self.activation!r}")
        theta = theta.copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "arch", tuple(int(a) for a in self.arch))

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    def with_theta(self, theta: np.ndarray) -> "ModelState":
        return replace(self, theta=theta)


def init_mlp(d: int, hidden, task: Task, seed: int,
             activation: str = "tanh") -> ModelState:
    """Fan-in-scaled uniform initialization: W ~ U(-1/sqrt(fan_in),
    1/sqrt(fan_in)), biases zero. Deterministic in the seed."""
    arch = mlp_arch(d, hidden, task)
    rng = stream(TAG_INIT, seed)
    layers = []
    for l in range(len(arch) - 1):
        nin, nout = arch[l], arch[l + 1]
        bound = 1.0 / np.sqrt(nin)
        layers.append((rng.uniform(-bound, bound, size=(nout, nin)),
                       np.zeros(nout)))
    return ModelState(pack(layers), arch, activation, task)


# ---------------------------------------------------------------------------
# Forward / loss

def _forward_trace(m: ModelState, X: np.ndarray):
    """Hidden-layer inputs, preactivations, and output logits for a batch."""
    act = ACTIVATIONS[m.activation]
    layers = unpack(m.theta, m.arch)
    hs = [X]
    pre = []
    h = X
    for w, b in layers[:-1]:
        a = h @ w.T + b
        pre.append(a)
        h = act(a)[0]
        hs.append(h)
    w, b = layers[-1]
    return hs, pre, h @ w.T + b


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def predict(m: ModelState, X) -> np.ndarray:
    """Batch outputs: (n,) predictions for regression, (n, c) logits."""
    X = _as_batch(X)
    if X.shape[1] != m.arch[0]:
        raise ModelError(f"input dimension {X.shape[1]} != {m.arch[0]}")
    u = _forward_trace(m, X)[2]
    return u[:, 0] if m.task.kind == REGRESSION else u


def forward(m: ModelState, x):
    """Single-instance output: scalar for regression, logits otherwise."""
    out = predict(m, np.asarray(x, dtype=np.float64)[None, :])
    return float(out[0]) if m.task.kind == REGRESSION else out[0]


def _log_softmax(u: np.ndarray) -> np.ndarray:
    shifted = u - u.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def losses(m: ModelState, X, Y) -> np.ndarray:
    """Per-instance losses: half squared error or cross-entropy."""
    X = _as_batch(X)
    u = _forward_trace(m, X)[2]
    if m.task.kind == REGRESSION:
        return 0.5 * (u[:, 0] - np.asarray(Y, dtype=np.float64)) ** 2
    yi = np.asarray(Y, dtype=np.int64)
    return -_log_softmax(u)[np.arange(len(yi)), yi]


def loss(m: ModelState, x, y) -> float:
    return float(losses(m, np.asarray(x)[None, :], np.atleast_1d(y))[0])


def _loss_output_grads(m: ModelState, U: np.ndarray, Y) -> np.ndarray:
    """dL/d(output) per example: residual for MSE, softmax - onehot for CE."""
    if m.task.kind == REGRESSION:
        return U - np.asarray(Y, dtype=np.float64)[:, None]
    yi = np.asarray(Y, dtype=np.int64)
    p = np.exp(_log_softmax(U))
    p[np.arange(len(yi)), yi] -= 1.0
    return p


# ---------------------------------------------------------------------------
# Reverse mode

def _backward(m: ModelState, hs, pre, seed: np.ndarray) -> np.ndarray:
    """Gradient of sum_i <seed_i, output_i> w.r.t. the flat parameters."""
    act = ACTIVATIONS[m.activation]
    layers = unpack(m.theta, m.arch)
    grads = [None] * len(layers)
    d = seed
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        grads[l] = (d.T @ hs[l], d.sum(axis=0))
        if l > 0:
            dh = d @ w
            d = dh * act(pre[l - 1])[1]
    return pack(grads)


def grad(m: ModelState, X, Y, weights=None) -> np.ndarray:
    """Exact gradient of the weighted loss sum over the batch."""
    X = _as_batch(X)
    hs, pre, u = _forward_trace(m, X)
    seed = _loss_output_grads(m, u, Y)
    if weights is not None:
        seed = seed * np.asarray(weights, dtype=np.float64)[:, None]
    return _backward(m, hs, pre, seed)


def _per_example_backward(m: ModelState, hs, pre,
                          seed: np.ndarray) -> np.ndarray:
    """Rows: gradient of <seed_i, output_i> for each example i."""
    act = ACTIVATIONS[m.activation]
    layers = unpack(m.theta, m.arch)
    n = seed.shape[0]
    blocks = [None] * len(layers)
    d = seed
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        dW = np.einsum("no,ni->noi", d, hs[l]).reshape(n, -1)
        blocks[l] = np.hstack([dW, d])
        if l > 0:
            d = (d @ w) * act(pre[l - 1])[1]
    return np.hstack(blocks)


def per_example_grads(m: ModelState, X, Y) -> np.ndarray:
    """(n, p) matrix of per-instance loss gradients (unit weights)."""
    X = _as_batch(X)
    hs, pre, u = _forward_trace(m, X)
    return _per_example_backward(m, hs, pre, _loss_output_grads(m, u, Y))


# ---------------------------------------------------------------------------
# Curvature-vector products

def hvp(m: ModelState, X, Y, v: np.ndarray, weights=None) -> np.ndarray:
    """Exact Hessian-vector product for the weighted loss sum.

    Forward-over-reverse: the forward pass is differentiated along v to get
    directional derivatives of every intermediate, then the backward pass
    is differentiated using those. One pass costs a small constant times a
    gradient evaluation and never materializes the p x p Hessian.
    """
    X = _as_batch(X)
    v = np.asarray(v, dtype=np.float64)
    act = ACTIVATIONS[m.activation]
    layers = unpack(m.theta, m.arch)
    vlayers = unpack(v, m.arch)
    L = len(layers)

    # Forward and its directional derivative.
    hs, rhs = [X], [np.zeros_like(X)]
    ras, s1s, s2s = [], [], []
    h, rh = X, np.zeros_like(X)
    for l in range(L - 1):
        w, b = layers[l]
        vw, vb = vlayers[l]
        a = h @ w.T + b
        ra = h @ vw.T + rh @ w.T + vb
        h, s1, s2 = act(a)
        rh = s1 * ra
        ras.append(ra)
        s1s.append(s1)
        s2s.append(s2)
        hs.append(h)
        rhs.append(rh)
    w, b = layers[L - 1]
    vw, vb = vlayers[L - 1]
    u = hs[-1] @ w.T + b
    ru = hs[-1] @ vw.T + rhs[-1] @ w.T + vb

    # Loss head: d = dL/du, rd = R{d} = (d^2 L / du^2) R{u}, per example.
    d = _loss_output_grads(m, u, Y)
    if m.task.kind == REGRESSION:
        rd = ru
    else:
        p = np.exp(_log_softmax(u))
        rd = p * (ru - (p * ru).sum(axis=1, keepdims=True))
    if weights is not None:
        wts = np.asarray(weights, dtype=np.float64)[:, None]
        d = d * wts
        rd = rd * wts

    out = [None] * L
    for l in range(L - 1, -1, -1):
        w, _ = layers[l]
        vw, _ = vlayers[l]
        out[l] = (rd.T @ hs[l] + d.T @ rhs[l], rd.sum(axis=0))
        if l > 0:
            dh = d @ w
            rdh = rd @ w + d @ vw
            s1, s2, ra = s1s[l - 1], s2s[l - 1], ras[l - 1]
            d = dh * s1
            rd = rdh * s1 + dh * s2 * ra
    return pack(out)


@dataclass(frozen=True)
class GaussNewtonContext:
    """Scalar-output gradients and curvature weights at a fixed model.

    G rows are gradients of the scalar output, r the negated first
    derivatives of the convex scalar loss, V its second derivatives
    (diagonal, all nonnegative). The Gauss-Newton curvature is G^T V G.
    """

    G: np.ndarray
    r: np.ndarray
    V: np.ndarray
    instance_ids: np.ndarray

    @property
    def p(self) -> int:
        return self.G.shape[1]


def scalar_output(m: ModelState, x, y) -> tuple[float, float, float]:
    """(scalar output, first, second derivative of the scalar loss).

    Regression: output is the prediction error e = f - y with loss e^2/2.
    Classification: output is the log-odds of the target class,
    log p_y - log(1 - p_y), with softplus loss -log sigmoid; its chain rule
    reproduces the cross-entropy gradient exactly for any class count.
    """
    f, d1, d2 = _scalar_output_batch(m, _as_batch(x), np.atleast_1d(y))
    return float(f[0]), float(d1[0]), float(d2[0])


def _scalar_output_batch(m: ModelState, X, Y):
    u = _forward_trace(m, X)[2]
    if m.task.kind == REGRESSION:
        fbar = u[:, 0] - np.asarray(Y, dtype=np.float64)
        return fbar, fbar, np.ones_like(fbar)
    yi = np.asarray(Y, dtype=np.int64)
    logp = _log_softmax(u)
    rows = np.arange(len(yi))
    py = np.exp(logp[rows, yi])
    # log(1 - p_y) via logsumexp over the non-target logits.
    mask = np.ones_like(u, dtype=bool)
    mask[rows, yi] = False
    rest = np.where(mask, u, -np.inf)
    lse_rest = _log_softmax_denom(rest)
    lse_all = _log_softmax_denom(u)
    fbar = u[rows, yi] - lse_rest
    lbar1 = py - 1.0
    lbar2 = py * np.exp(lse_rest - lse_all)  # p_y * (1 - p_y), stably
    return fbar, lbar1, lbar2


def _log_softmax_denom(u):
    mx = u.max(axis=1)
    return mx + np.log(np.exp(u - mx[:, None]).sum(axis=1))


def scalar_output_grads(m: ModelState, X, Y) -> np.ndarray:
    """(n, p) per-instance gradients of the scalar output function."""
    X = _as_batch(X)
    hs, pre, u = _forward_trace(m, X)
    if m.task.kind == REGRESSION:
        seed = np.ones((X.shape[0], 1))
    else:
        yi = np.asarray(Y, dtype=np.int64)
        rows = np.arange(len(yi))
        mask = np.ones_like(u, dtype=bool)
        mask[rows, yi] = False
        rest = np.where(mask, u, -np.inf)
        seed = -np.exp(rest - _log_softmax_denom(rest)[:, None])
        seed[rows, yi] = 1.0
    return _per_example_backward(m, hs, pre, seed)


def build_gauss_newton_context(m: ModelState, ds: Dataset,
                               indices=None) -> GaussNewtonContext:
    """Evaluate G, r, V over the given rows (all rows by default)."""
    idx = (np.arange(ds.n, dtype=np.int64) if indices is None
           else np.asarray(indices, dtype=np.int64))
    X, Y = ds.features[idx], ds.targets[idx]
    G = scalar_output_grads(m, X, Y)
    _, d1, d2 = _scalar_output_batch(m, X, Y)
    return GaussNewtonContext(G=G, r=-d1, V=d2, instance_ids=ds.ids[idx])


def gnvp(ctx: GaussNewtonContext, v: np.ndarray) -> np.ndarray:
    """Gauss-Newton curvature-vector product G^T V G v, never p x p."""
    return ctx.G.T @ (ctx.V * (ctx.G @ np.asarray(v, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Serialization: a deterministic flat binary, bit-exact round trip.

_MAGIC = b"FTDAMODEL1\n"


def save_model(m: ModelState, path) -> None:
    header = {
        "arch": list(m.arch),
        "activation": m.activation,
        "task": m.task.kind,
        "num_classes": m.task.num_classes,
        "p": m.p,
    }
    blob = json.dumps(header, sort_keys=True).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(blob)
        fh.write(m.theta.astype("<f8").tobytes())


def load_model(path) -> ModelState:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ModelError(f"{path}: not a model file")
        header = json.loads(fh.readline().decode())
        theta = np.frombuffer(fh.read(), dtype="<f8")
    task = Task(header["task"], header["num_classes"])
    return ModelState(theta, tuple(header["arch"]), header["activation"], task)
