"""Small dense networks with hand-derived gradients and three trainers.

Everything is plain numpy on nets small enough that dense linear algebra wins:
Levenberg-Marquardt for the surrogate regressions, a frozen random-feature
layer solved by truncated SVD, and an adaptively scaled minibatch descent on
the Euler-Maruyama likelihood for the SDE pair.  Derivatives are exact
chain-rule expressions for the fixed layer algebra (no autodiff tape), which
keeps Newton-type consumers (continuation on a learned drift) honest.
"""

import copy
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import expit

from .errors import NumericalError

# activation -> (value, derivative), both elementwise in the pre-activation
_ACTIVATIONS = {
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "cosine": (np.cos, lambda z: -np.sin(z)),
    "softplus": (lambda z: np.logaddexp(0.0, z), expit),
}


@dataclass
class DenseNet:
    sizes: List[int]
    weights: List[np.ndarray]  # (n_out, n_in) per layer
    biases: List[np.ndarray]
    activations: List[str]  # per layer; last is the output activation
    trainable: List[bool]
    input_shift: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n_layers = len(self.sizes) - 1
        if not (len(self.weights) == len(self.biases) == len(self.activations)
                == len(self.trainable) == n_layers):
            raise ValueError("inconsistent layer bookkeeping")
        for l in range(n_layers):
            if self.weights[l].shape != (self.sizes[l + 1], self.sizes[l]):
                raise ValueError("weight shape mismatch in layer %d" % l)
            if self.biases[l].shape != (self.sizes[l + 1],):
                raise ValueError("bias shape mismatch in layer %d" % l)
            if self.activations[l] not in _ACTIVATIONS:
                raise ValueError("unknown activation %r" % self.activations[l])
            if self.activations[l] == "cosine" and self.trainable[l]:
                raise ValueError("random-feature (cosine) layers stay frozen")
        if self.input_shift is None:
            self.input_shift = np.zeros(self.sizes[0])
        if self.input_scale is None:
            self.input_scale = np.ones(self.sizes[0])

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size
                   for w, b, t in zip(self.weights, self.biases, self.trainable) if t)


def dense_init(sizes, activations=None, seed=0, output_activation="identity"):
    """Glorot-normal random net; hidden layers tanh unless specified."""
    rng = np.random.default_rng(seed)
    n_layers = len(sizes) - 1
    if activations is None:
        activations = ["tanh"] * (n_layers - 1) + [output_activation]
    weights, biases = [], []
    for l in range(n_layers):
        scale = np.sqrt(2.0 / (sizes[l] + sizes[l + 1]))
        weights.append(rng.normal(0.0, scale, size=(sizes[l + 1], sizes[l])))
        biases.append(np.zeros(sizes[l + 1]))
    return DenseNet(sizes=list(sizes), weights=weights, biases=biases,
                    activations=list(activations), trainable=[True] * n_layers,
                    meta={"seed": seed})


def set_standardization(net: DenseNet, shift, scale):
    net.input_shift = np.asarray(shift, dtype=np.float64).reshape(net.sizes[0])
    net.input_scale = np.asarray(scale, dtype=np.float64).reshape(net.sizes[0])
    if np.any(net.input_scale <= 0):
        raise ValueError("standardization scale must be positive")


def _forward_all(net: DenseNet, x):
    """Returns (pre-activations per layer, activations incl. scaled input)."""
    a = (np.asarray(x, dtype=np.float64) - net.input_shift) / net.input_scale
    acts, pres = [a], []
    for w, b, tag in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        a = _ACTIVATIONS[tag][0](z)
        pres.append(z)
        acts.append(a)
    return pres, acts


def forward(net: DenseNet, x):
    """Evaluate the net on one input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.sizes[0]:
        raise ValueError(
            "input dimension %d does not match net input %d"
            % (x.shape[-1], net.sizes[0])
        )
    return _forward_all(net, x)[1][-1]


def grad_input(net: DenseNet, x):
    """Exact Jacobian d(output)/d(input) at one input vector."""
    x = np.asarray(x, dtype=np.float64)
    pres, _ = _forward_all(net, x)
    jac = None
    for w, z, tag in zip(net.weights, pres, net.activations):
        d = _ACTIVATIONS[tag][1](z)
        step = d[:, None] * w
        jac = step if jac is None else step @ jac
    return jac / net.input_scale[None, :]


def get_params(net: DenseNet):
    parts = []
    for w, b, t in zip(net.weights, net.biases, net.trainable):
        if t:
            parts.extend([w.ravel(), b])
    return np.concatenate(parts) if parts else np.empty(0)


def set_params(net: DenseNet, vec):
    pos = 0
    for l, t in enumerate(net.trainable):
        if not t:
            continue
        w, b = net.weights[l], net.biases[l]
        net.weights[l] = vec[pos:pos + w.size].reshape(w.shape).copy()
        pos += w.size
        net.biases[l] = vec[pos:pos + b.size].copy()
        pos += b.size
    if pos != vec.size:
        raise ValueError("parameter vector length mismatch")


def _backward_blocks(net: DenseNet, pres, acts, delta):
    """Per-layer parameter gradients contracted against upstream delta.

    delta enters as dL/d(output pre-activation composed with act'); the
    return is the flat gradient vector over trainable layers (ascending),
    summed over the batch.
    """
    grads = {}
    for l in range(len(net.weights) - 1, -1, -1):
        if net.trainable[l]:
            grads[l] = (delta.T @ acts[l], delta.sum(axis=0))
        if l > 0:
            dprev = _ACTIVATIONS[net.activations[l - 1]][1](pres[l - 1])
            delta = (delta @ net.weights[l]) * dprev
    parts = []
    for l in range(len(net.weights)):
        if net.trainable[l]:
            gw, gb = grads[l]
            parts.extend([gw.ravel(), gb])
    return np.concatenate(parts) if parts else np.empty(0)


def param_gradient(net: DenseNet, x_batch, out_weights):
    """Gradient of sum_k out_weights[k] * net(x_k) over trainable params."""
    if net.sizes[-1] != 1:
        raise ValueError("parameter gradients support scalar-output nets")
    pres, acts = _forward_all(net, np.atleast_2d(x_batch))
    dact = _ACTIVATIONS[net.activations[-1]][1](pres[-1])
    delta = np.asarray(out_weights, dtype=np.float64)[:, None] * dact
    return _backward_blocks(net, pres, acts, delta)


def param_jacobian(net: DenseNet, x_batch):
    """Rows d(net(x_k))/d(params) for a scalar-output net (LM residuals)."""
    if net.sizes[-1] != 1:
        raise ValueError("parameter Jacobian supports scalar-output nets")
    x_batch = np.atleast_2d(x_batch)
    n = x_batch.shape[0]
    pres, acts = _forward_all(net, x_batch)
    deltas = [None] * len(net.weights)
    delta = _ACTIVATIONS[net.activations[-1]][1](pres[-1])  # (n, 1)
    for l in range(len(net.weights) - 1, -1, -1):
        deltas[l] = delta
        if l > 0:
            dprev = _ACTIVATIONS[net.activations[l - 1]][1](pres[l - 1])
            delta = (delta @ net.weights[l]) * dprev
    cols = []
    for l in range(len(net.weights)):
        if net.trainable[l]:
            gw = deltas[l][:, :, None] * acts[l][:, None, :]
            cols.extend([gw.reshape(n, -1), deltas[l]])
    return np.hstack(cols) if cols else np.empty((n, 0))


# ---------------------------------------------------------------------------
# Levenberg-Marquardt


@dataclass
class TrainConfig:
    max_iters: int = 200
    mu0: float = 1e-3
    mu_raise: float = 10.0
    mu_lower: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 256
    validation_fraction: float = 0.1
    seed: int = 0
    patience: int = 20

    def __post_init__(self):
        if not (0.0 <= self.validation_fraction < 1.0):
            raise ValueError("validation fraction must lie in [0, 1)")
        if (self.max_iters < 0 or self.mu0 <= 0 or self.mu_raise <= 1.0
                or not (0.0 < self.mu_lower < 1.0) or self.learning_rate <= 0
                or self.batch_size < 1 or self.patience < 1):
            raise ValueError("nonsensical training configuration")


def lm_train(net: DenseNet, z, y, config: TrainConfig, return_history=False):
    """Levenberg-Marquardt least squares on a scalar-output net.

    Standard Marquardt damping: accepted steps lower mu by mu_lower, rejected
    ones raise it by mu_raise.  Stops on max_iters, gradient norm < 1e-8, or
    validation patience; with a validation split the best-validation
    parameters are restored at the end.
    """
    net = copy.deepcopy(net)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if config.validation_fraction > 0:
        rng = np.random.default_rng(config.seed)
        perm = rng.permutation(z.shape[0])
        n_val = max(1, int(round(config.validation_fraction * z.shape[0])))
        val_idx, tr_idx = perm[:n_val], perm[n_val:]
    else:
        tr_idx = np.arange(z.shape[0])
        val_idx = np.empty(0, dtype=int)
    zt, yt = z[tr_idx], y[tr_idx]
    zv, yv = z[val_idx], y[val_idx]

    params = get_params(net)
    mu = config.mu0
    history = []

    def sse(p):
        set_params(net, p)
        r = forward(net, zt)[:, 0] - yt
        return float(r @ r), r

    loss, resid = sse(params)
    best_val = np.inf
    best_params = params.copy()
    stale = 0
    for _ in range(config.max_iters):
        set_params(net, params)
        jac = param_jacobian(net, zt)
        grad = jac.T @ resid
        if np.abs(grad).max() < 1e-8:
            break
        jtj = jac.T @ jac
        accepted = False
        while mu < 1e12:
            try:
                step = np.linalg.solve(jtj + mu * np.eye(jtj.shape[0]), -grad)
            except np.linalg.LinAlgError:
                mu *= config.mu_raise
                continue
            trial = params + step
            trial_loss, trial_resid = sse(trial)
            if np.isfinite(trial_loss) and trial_loss < loss:
                params, loss, resid = trial, trial_loss, trial_resid
                mu = max(mu * config.mu_lower, 1e-14)
                accepted = True
                break
            mu *= config.mu_raise
        if not accepted:
            raise NumericalError(
                "LM damping escalation exhausted at loss %.3e" % loss
            )
        history.append(loss / max(1, yt.size))
        if val_idx.size:
            set_params(net, params)
            rv = forward(net, zv)[:, 0] - yv
            val_mse = float(rv @ rv) / yv.size
            if val_mse < best_val - 1e-15:
                best_val = val_mse
                best_params = params.copy()
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
        else:
            best_params = params
    set_params(net, best_params if val_idx.size else params)
    if return_history:
        return net, history
    return net


# ---------------------------------------------------------------------------
# random Fourier features


def rff_build(input_dim: int, n_neurons: int, seed) -> DenseNet:
    """Frozen cosine feature layer plus a trainable zero linear readout.

    Feature weights are standard normal, phases uniform on [0, 2pi]; only the
    readout is ever solved for.
    """
    if n_neurons < 1:
        raise ValueError("need at least one feature")
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1.0, size=(n_neurons, input_dim))
    b = rng.uniform(0.0, 2.0 * np.pi, size=n_neurons)
    return DenseNet(
        sizes=[input_dim, n_neurons, 1],
        weights=[w, np.zeros((1, n_neurons))],
        biases=[b, np.zeros(1)],
        activations=["cosine", "identity"],
        trainable=[False, True],
        meta={"seed": seed, "kind": "rff"},
    )


def rff_solve(net: DenseNet, z, y, reg_tol: float = 1e-6) -> DenseNet:
    """Truncated-SVD least squares for the readout of a frozen feature net.

    Singular values below reg_tol * sigma_max are dropped, which doubles as
    the regularizer; the feature layer is untouched.
    """
    if net.trainable[0] or net.activations[0] != "cosine":
        raise ValueError("expected a frozen cosine feature layer")
    net = copy.deepcopy(net)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    phi = _forward_all(net, z)[1][1]  # (n, n_neurons)
    u, s, vt = np.linalg.svd(phi, full_matrices=False)
    keep = s >= reg_tol * s[0]
    w = vt[keep].T @ ((u[:, keep].T @ y) / s[keep])
    net.weights[1] = w[None, :]
    net.biases[1] = np.zeros(1)
    return net


# ---------------------------------------------------------------------------
# Euler-Maruyama likelihood for the SDE pair


@dataclass
class SdeNets:
    drift: DenseNet  # (x, g) -> mu
    diff: DenseNet  # (x, g) -> sigma > 0 (softplus output)


def sde_init(seed=0, hidden=(32, 32, 32, 32, 32)) -> SdeNets:
    sizes = [2] + list(hidden) + [1]
    drift = dense_init(sizes, seed=seed)
    diff = dense_init(sizes, seed=seed + 1, output_activation="softplus")
    return SdeNets(drift=drift, diff=diff)


_SIGMA_FLOOR = 1e-12


def _em_terms(nets: SdeNets, batch):
    x0, x1, h, g = batch[:, 0], batch[:, 1], batch[:, 2], batch[:, 3]
    inp = np.column_stack([x0, g])
    mu = forward(nets.drift, inp)[:, 0]
    sig = forward(nets.diff, inp)[:, 0]
    if np.any(sig < _SIGMA_FLOOR):
        warnings.warn("diffusion output clamped at the positivity floor")
        sig = np.maximum(sig, _SIGMA_FLOOR)
    r = x1 - x0 - h * mu
    var = h * sig**2
    return r, sig, var, inp


def em_loss(nets: SdeNets, batch) -> float:
    """Euler-Maruyama negative log likelihood (exact sum over the batch)."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if np.any(batch[:, 2] <= 0):
        raise ValueError("every sample needs a positive step h")
    r, _, var, _ = _em_terms(nets, batch)
    terms = r**2 / var + np.log(var)
    return math.fsum(terms.tolist())


def em_loss_grad(nets: SdeNets, batch):
    """Analytic parameter gradients of em_loss: (drift part, diffusion part)."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    r, sig, var, inp = _em_terms(nets, batch)
    h = batch[:, 2]
    d_mu = -2.0 * r / sig**2
    d_sig = -2.0 * r**2 / (h * sig**3) + 2.0 / sig
    return (param_gradient(nets.drift, inp, d_mu),
            param_gradient(nets.diff, inp, d_sig))


def _standardize_from(rows):
    shift = rows.mean(axis=0)
    scale = rows.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return shift, scale


def sde_train(dataset, config: TrainConfig, hidden=(32, 32, 32, 32, 32)) -> SdeNets:
    """Fit (drift, diffusion) nets to transition pairs by minibatch descent.

    dataset is a list of per-trajectory arrays with rows (x0, x1, h, g); the
    90/10 train/validation split happens at trajectory granularity so
    consecutive pairs never straddle the split.  The optimizer is adaptive
    per-parameter scaling (RMS of past gradients) on em_loss; NaN divergence
    restarts with a halved rate, at most 3 times.  Returns the
    best-validation nets.
    """
    trajs = [np.atleast_2d(np.asarray(t, dtype=np.float64)) for t in dataset]
    if not trajs:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(trajs))
    n_val = max(1, int(round(config.validation_fraction * len(trajs)))) \
        if config.validation_fraction > 0 and len(trajs) > 1 else 0
    val = np.vstack([trajs[i] for i in perm[:n_val]]) if n_val else None
    train = np.vstack([trajs[i] for i in perm[n_val:]])

    shift, scale = _standardize_from(np.column_stack([train[:, 0], train[:, 3]]))

    lr = config.learning_rate
    for restart in range(4):
        nets = sde_init(seed=config.seed + 1000 * restart, hidden=hidden)
        set_standardization(nets.drift, shift, scale)
        set_standardization(nets.diff, shift, scale)
        n_par = nets.drift.n_params + nets.diff.n_params
        if train.shape[0] < 10 * n_par:
            warnings.warn(
                "only %d samples for %d parameters; fit may be under-determined"
                % (train.shape[0], n_par)
            )
        result = _sde_descent(nets, train, val, config, lr)
        if result is not None:
            return result
        lr *= 0.5
    raise NumericalError("SDE training diverged repeatedly (NaN loss)")


def _sde_descent(nets: SdeNets, train, val, config: TrainConfig, lr):
    pd = get_params(nets.drift)
    pf = get_params(nets.diff)
    rms_d = np.zeros_like(pd)
    rms_f = np.zeros_like(pf)
    rng = np.random.default_rng(config.seed + 7)
    n = train.shape[0]
    steps_per_epoch = max(1, n // config.batch_size)
    best_val = np.inf
    best = (pd.copy(), pf.copy())
    stale = 0
    for _ in range(config.max_iters):
        order = rng.permutation(n)
        for k in range(steps_per_epoch):
            rows = train[order[k * config.batch_size:(k + 1) * config.batch_size]]
            if rows.shape[0] == 0:
                continue
            gd, gf = em_loss_grad(nets, rows)
            gd /= rows.shape[0]
            gf /= rows.shape[0]
            rms_d = 0.9 * rms_d + 0.1 * gd**2
            rms_f = 0.9 * rms_f + 0.1 * gf**2
            pd -= lr * gd / (np.sqrt(rms_d) + 1e-8)
            pf -= lr * gf / (np.sqrt(rms_f) + 1e-8)
            if not (np.isfinite(pd).all() and np.isfinite(pf).all()):
                return None
            set_params(nets.drift, pd)
            set_params(nets.diff, pf)
        check = val if val is not None else train
        score = em_loss(nets, check) / check.shape[0]
        if not np.isfinite(score):
            return None
        if score < best_val - 1e-12:
            best_val = score
            best = (pd.copy(), pf.copy())
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    set_params(nets.drift, best[0])
    set_params(nets.diff, best[1])
    return nets


# ---------------------------------------------------------------------------
# serialization (bit-exact npz round trip)


def save_dense(path, net: DenseNet):
    payload = {
        "sizes": np.array(net.sizes, dtype=np.int64),
        "activations": np.array(net.activations),
        "trainable": np.array(net.trainable, dtype=bool),
        "input_shift": net.input_shift,
        "input_scale": net.input_scale,
        "seed": np.array(net.meta.get("seed", -1), dtype=np.int64),
    }
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        payload["w%d" % l] = w
        payload["b%d" % l] = b
    np.savez(path, **payload)


def load_dense(path) -> DenseNet:
    with np.load(path, allow_pickle=False) as data:
        sizes = [int(s) for s in data["sizes"]]
        n_layers = len(sizes) - 1
        net = DenseNet(
            sizes=sizes,
            weights=[data["w%d" % l].copy() for l in range(n_layers)],
            biases=[data["b%d" % l].copy() for l in range(n_layers)],
            activations=[str(a) for a in data["activations"]],
            trainable=[bool(t) for t in data["trainable"]],
            input_shift=data["input_shift"].copy(),
            input_scale=data["input_scale"].copy(),
            meta={"seed": int(data["seed"])},
        )
    return net


def save_sde(path_drift, path_diff, nets: SdeNets):
    save_dense(path_drift, nets.drift)
    save_dense(path_diff, nets.diff)


def load_sde(path_drift, path_diff) -> SdeNets:
    return SdeNets(drift=load_dense(path_drift), diff=load_dense(path_diff))
