"""Learned surrogate models on top of the trader-simulation data.

Two flavors: a regression of the density tendency on local field features
(evaluated node-by-node to give a black-box PDE right-hand side, integrated
with Heun's method), and a one-dimensional SDE in a coarse variable whose
drift and diffusion come from Euler-Maruyama likelihood fits.  Also home to
the dataset builders and their CSV/manifest persistence.
"""

import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .abm import AbmTrajectory, bin_centers
from .errors import DataIntegrityError, NumericalError
from .ml import (
    DenseNet,
    SdeNets,
    TrainConfig,
    dense_init,
    forward,
    lm_train,
    rff_build,
    rff_solve,
)

FEATURE_NAMES = ("x", "rho", "rho_x", "rho_xx", "rho_xxx", "i_plus", "i_minus")
STRIP_WIDTH = 0.05  # outermost integral window: the last two bins


# ---------------------------------------------------------------------------
# field smoothing and feature assembly


def smooth(rho):
    """Weighted moving average (2, 1, 1)/4 on interior nodes; ends untouched."""
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape[-1] < 3:
        raise ValueError("need at least three nodes")
    out = rho.copy()
    out[..., 1:-1] = 0.25 * (2.0 * rho[..., 1:-1] + rho[..., :-2] + rho[..., 2:])
    return out


def _node_features(rho, g: float, x):
    """Feature rows for the interior nodes of one density snapshot."""
    dx = x[1] - x[0]
    rho_x = (rho[2:] - rho[:-2]) / (2.0 * dx)
    rho_xx = (rho[2:] - 2.0 * rho[1:-1] + rho[:-2]) / dx**2
    # third derivative needs i +- 2; nearest-interior copy at the two edge
    # interior nodes (column is used for relevance ranking only)
    rho_xxx = np.empty(rho.shape[0] - 2)
    rho_xxx[1:-1] = (rho[4:] - 2.0 * rho[3:-1] + 2.0 * rho[1:-3] - rho[:-4]) \
        / (2.0 * dx**3)
    rho_xxx[0] = rho_xxx[1]
    rho_xxx[-1] = rho_xxx[-2]
    n_strip = int(round(STRIP_WIDTH / dx))  # bins inside the strip
    i_plus = np.trapezoid(rho[-(n_strip + 1):], dx=dx)
    i_minus = np.trapezoid(rho[:n_strip + 1], dx=dx)
    n_int = rho.shape[0] - 2
    cols = np.empty((n_int, 8))
    cols[:, 0] = x[1:-1]
    cols[:, 1] = rho[1:-1]
    cols[:, 2] = rho_x
    cols[:, 3] = rho_xx
    cols[:, 4] = rho_xxx
    cols[:, 5] = i_plus
    cols[:, 6] = i_minus
    cols[:, 7] = g
    return cols


@dataclass
class FeatureTable:
    features: np.ndarray  # (n_rows, 8): FEATURE_NAMES columns then g
    targets: np.ndarray  # density tendency per row
    replica: np.ndarray  # source trajectory index
    frame: np.ndarray  # source time index

    def __post_init__(self):
        if not (self.features.shape[0] == self.targets.size
                == self.replica.size == self.frame.size):
            raise ValueError("ragged feature table")
        if not np.isfinite(self.features).all() or not np.isfinite(self.targets).all():
            raise ValueError("feature table contains non-finite entries")

    @property
    def n_rows(self):
        return self.targets.size

    def ard_matrix(self):
        """The seven ranked features (g excluded)."""
        return self.features[:, :7]


def build_feature_table(trajectories: Sequence[AbmTrajectory],
                        stop_threshold: float = 0.4,
                        n_drop: int = 2) -> FeatureTable:
    """Assemble regression rows from ensemble-averaged, smoothed trajectories.

    The first n_drop frames go (ensemble healing transient), frames from the
    first |mean| >= stop_threshold on are cut, and targets are forward
    differences in time, so a trajectory contributes (usable - n_drop - 1)
    frames x interior nodes rows.
    """
    feats, targs, reps, frames = [], [], [], []
    for r, traj in enumerate(trajectories):
        n_nodes = traj.densities.shape[1]
        x = bin_centers(n_nodes)
        bad = np.nonzero(np.abs(traj.means) >= stop_threshold)[0]
        last = bad[0] if bad.size else traj.n_frames
        if last - n_drop < 2:
            warnings.warn("trajectory %d too short after truncation; skipped" % r)
            continue
        for k in range(n_drop, last - 1):
            dt = traj.times[k + 1] - traj.times[k]
            rows = _node_features(traj.densities[k], traj.g, x)
            feats.append(rows)
            targs.append((traj.densities[k + 1, 1:-1]
                          - traj.densities[k, 1:-1]) / dt)
            reps.append(np.full(rows.shape[0], r, dtype=np.int64))
            frames.append(np.full(rows.shape[0], k, dtype=np.int64))
    if not feats:
        raise ValueError("no usable frames in any trajectory")
    return FeatureTable(
        features=np.vstack(feats),
        targets=np.concatenate(targs),
        replica=np.concatenate(reps),
        frame=np.concatenate(frames),
    )


def downsample_table(table: FeatureTable, n_max: int = 1_000_000,
                     seed: int = 0) -> FeatureTable:
    if table.n_rows <= n_max:
        return table
    idx = np.random.default_rng(seed).choice(table.n_rows, n_max, replace=False)
    idx.sort()
    return FeatureTable(features=table.features[idx], targets=table.targets[idx],
                        replica=table.replica[idx], frame=table.frame[idx])


# ---------------------------------------------------------------------------
# learned density-tendency surrogate


@dataclass
class IpdeSurrogate:
    net: DenseNet
    mask: np.ndarray  # boolean over FEATURE_NAMES; g is always appended
    n_nodes: int
    feature_center: np.ndarray  # per input column, for extrapolation checks
    feature_halfwidth: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.size != len(FEATURE_NAMES):
            raise ValueError("mask length must match the ranked feature count")
        if self.net.sizes[0] != int(self.mask.sum()) + 1:
            raise ValueError("net input width disagrees with mask")


def _masked_inputs(table_features, mask):
    return np.column_stack([table_features[:, :7][:, mask],
                            table_features[:, 7]])


def _training_box(rows):
    lo = rows.min(axis=0)
    hi = rows.max(axis=0)
    center = 0.5 * (lo + hi)
    halfwidth = np.maximum(0.5 * (hi - lo), 1e-12)
    return center, halfwidth


def fit_ipde_fnn(table: FeatureTable, mask, hidden=(16, 16),
                 config: TrainConfig = None, seed: int = 0) -> IpdeSurrogate:
    """Dense-net tendency regressor trained by Levenberg-Marquardt."""
    if config is None:
        config = TrainConfig(max_iters=60, seed=seed)
    mask = np.asarray(mask, dtype=bool)
    rows = _masked_inputs(table.features, mask)
    net = dense_init([rows.shape[1]] + list(hidden) + [1], seed=seed)
    net.input_shift = rows.mean(axis=0)
    net.input_scale = np.maximum(rows.std(axis=0), 1e-12)
    t0 = time.perf_counter()
    net = lm_train(net, rows, table.targets, config)
    wall = time.perf_counter() - t0
    center, halfwidth = _training_box(rows)
    n_nodes = np.unique(table.features[:, 0]).size + 2
    resid = forward(net, rows)[:, 0] - table.targets
    return IpdeSurrogate(net=net, mask=mask, n_nodes=n_nodes,
                         feature_center=center, feature_halfwidth=halfwidth,
                         meta={"kind": "fnn", "train_seconds": wall,
                               "train_mae": float(np.mean(np.abs(resid))),
                               "target_max": float(np.abs(table.targets).max())})


def fit_ipde_rff(table: FeatureTable, mask, n_neurons: int = 350,
                 seed: int = 0, reg_tol: float = 1e-6) -> IpdeSurrogate:
    """Random-feature tendency regressor solved in closed form."""
    mask = np.asarray(mask, dtype=bool)
    rows = _masked_inputs(table.features, mask)
    net = rff_build(rows.shape[1], n_neurons, seed=seed)
    net.input_shift = rows.mean(axis=0)
    net.input_scale = np.maximum(rows.std(axis=0), 1e-12)
    t0 = time.perf_counter()
    net = rff_solve(net, rows, table.targets, reg_tol=reg_tol)
    wall = time.perf_counter() - t0
    center, halfwidth = _training_box(rows)
    n_nodes = np.unique(table.features[:, 0]).size + 2
    resid = forward(net, rows)[:, 0] - table.targets
    return IpdeSurrogate(net=net, mask=mask, n_nodes=n_nodes,
                         feature_center=center, feature_halfwidth=halfwidth,
                         meta={"kind": "rff", "train_seconds": wall,
                               "train_mae": float(np.mean(np.abs(resid))),
                               "target_max": float(np.abs(table.targets).max())})


def r2_score(pred, truth) -> float:
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    ss_res = np.sum((truth - pred) ** 2)
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    return float(1.0 - ss_res / ss_tot)


def ipde_rhs(rho, g: float, surrogate: IpdeSurrogate):
    """Learned density tendency on the full grid (zeros on the boundary)."""
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape[0] != surrogate.n_nodes:
        raise ValueError("state length does not match the surrogate grid")
    x = bin_centers(surrogate.n_nodes)
    rows = _masked_inputs(_node_features(rho, g, x), surrogate.mask)
    # 5x the training box counts as extrapolation worth flagging
    overshoot = np.abs(rows - surrogate.feature_center) \
        / surrogate.feature_halfwidth
    if overshoot.max() > 5.0:
        warnings.warn("surrogate evaluated outside 5x its training range")
    out = np.zeros(surrogate.n_nodes)
    out[1:-1] = forward(surrogate.net, rows)[:, 0]
    return out


@dataclass
class HeunTrajectory:
    times: np.ndarray
    fields: np.ndarray  # (n_frames, n_nodes)
    masses: np.ndarray
    g: float


def heun_integrate(rho0, g: float,
                   surrogate: Union[IpdeSurrogate, Callable],
                   dt: float = 1e-2, t_end: float = 1.0,
                   record_every: int = 1) -> HeunTrajectory:
    """Explicit Heun stepping of a density-tendency model.

    Dirichlet zeros are re-imposed after every stage.  Mass is monitored but
    never constrained; drifting outside [0.9, 1.1] aborts.
    """
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    rho = np.asarray(rho0, dtype=np.float64).copy()
    rho[0] = rho[-1] = 0.0
    if callable(surrogate):
        rhs = lambda r: np.asarray(surrogate(r, g), dtype=np.float64)
    else:
        rhs = lambda r: ipde_rhs(r, g, surrogate)
    dx = 2.0 / (rho.shape[0] - 1)
    n_steps = int(round(t_end / dt))
    times = [0.0]
    fields = [rho.copy()]
    masses = [float(np.trapezoid(rho, dx=dx))]
    for k in range(n_steps):
        k1 = rhs(rho)
        pred = rho + dt * k1
        pred[0] = pred[-1] = 0.0
        k2 = rhs(pred)
        rho = rho + 0.5 * dt * (k1 + k2)
        rho[0] = rho[-1] = 0.0
        mass = float(np.trapezoid(rho, dx=dx))
        if not (0.9 <= mass <= 1.1) or not np.isfinite(rho).all():
            raise NumericalError(
                "surrogate mass drift: mass = %.4f at t = %.3f"
                % (mass, (k + 1) * dt)
            )
        if (k + 1) % record_every == 0 or k == n_steps - 1:
            times.append((k + 1) * dt)
            fields.append(rho.copy())
            masses.append(mass)
    return HeunTrajectory(times=np.array(times), fields=np.array(fields),
                          masses=np.array(masses), g=g)


# ---------------------------------------------------------------------------
# coarse SDE surrogate


@dataclass
class SdeSurrogate:
    nets: SdeNets
    coarse_tag: str  # which coarse variable the nets were fitted in
    x_range: Tuple[float, float]
    g_range: Tuple[float, float]
    meta: dict = field(default_factory=dict)


@dataclass
class SdePath:
    times: np.ndarray
    values: np.ndarray
    exploded: bool


def sde_simulate(surrogate: SdeSurrogate, x0: float, g: float, h: float,
                 t_end: float, seed) -> SdePath:
    """Euler-Maruyama path of the learned coarse SDE."""
    if h <= 0:
        raise ValueError("step must be positive")
    n_steps = int(round(t_end / h))
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(n_steps)
    xs = np.empty(n_steps + 1)
    xs[0] = x0
    warned = not _inside_box(surrogate, x0, g)
    if warned:
        warnings.warn("initial state outside the surrogate's training box")
    sqh = np.sqrt(h)
    drift, diff = surrogate.nets.drift, surrogate.nets.diff
    for k in range(n_steps):
        inp = np.array([xs[k], g])
        x_new = xs[k] + h * forward(drift, inp)[0] \
            + forward(diff, inp)[0] * sqh * xi[k]
        if not np.isfinite(x_new):
            return SdePath(times=np.arange(k + 1) * h, values=xs[:k + 1],
                           exploded=True)
        xs[k + 1] = x_new
        if not warned and not _inside_box(surrogate, x_new, g):
            warnings.warn("path left the surrogate's training box")
            warned = True
    return SdePath(times=np.arange(n_steps + 1) * h, values=xs, exploded=False)


def _inside_box(surrogate: SdeSurrogate, x, g):
    return (surrogate.x_range[0] <= x <= surrogate.x_range[1]
            and surrogate.g_range[0] <= g <= surrogate.g_range[1])


def build_sde_dataset(series, h: float):
    """Consecutive-pair extraction from uniformly sampled coarse series.

    series: iterable of (times, values, g) per trajectory.  Returns one
    (len-1, 4) array of (x0, x1, h, g) rows per trajectory, ready for
    ml.sde_train.
    """
    out = []
    for times, values, g in series:
        times = np.asarray(times, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if times.size != values.size or times.size < 2:
            raise ValueError("series needs matching times and at least 2 samples")
        steps = np.diff(times)
        if np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(h)):
            raise ValueError("series is not uniformly sampled at the stated h")
        n = values.size - 1
        out.append(np.column_stack([values[:-1], values[1:],
                                    np.full(n, h), np.full(n, g)]))
    return out


# ---------------------------------------------------------------------------
# persistence: column CSV + JSON manifest with content hashes


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _manifest_path(path):
    return str(path) + ".manifest.json"


def _write_manifest(path, columns, meta):
    manifest = {
        "columns": list(columns),
        "sha256": _sha256(path),
        "meta": meta or {},
    }
    with open(_manifest_path(path), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def _read_manifest(path):
    with open(_manifest_path(path)) as fh:
        manifest = json.load(fh)
    actual = _sha256(path)
    if actual != manifest["sha256"]:
        raise DataIntegrityError(
            "checksum mismatch for %s: manifest %s, file %s"
            % (path, manifest["sha256"][:12], actual[:12])
        )
    return manifest


def save_feature_table(path, table: FeatureTable, meta=None):
    cols = list(FEATURE_NAMES) + ["g", "target", "replica", "frame"]
    data = np.column_stack([table.features, table.targets,
                            table.replica.astype(np.float64),
                            table.frame.astype(np.float64)])
    np.savetxt(path, data, delimiter=",", header=",".join(cols),
               comments="", fmt="%.17g")
    return _write_manifest(path, cols, meta)


def load_feature_table(path) -> FeatureTable:
    manifest = _read_manifest(path)
    expected = list(FEATURE_NAMES) + ["g", "target", "replica", "frame"]
    if manifest["columns"] != expected:
        raise DataIntegrityError("unexpected column layout in %s" % path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return FeatureTable(features=data[:, :8], targets=data[:, 8],
                        replica=data[:, 9].astype(np.int64),
                        frame=data[:, 10].astype(np.int64))


def save_sde_dataset(path, trajs: List[np.ndarray], meta=None):
    cols = ["x0", "x1", "h", "g", "trajectory"]
    blocks = [np.column_stack([t, np.full(t.shape[0], i, dtype=np.float64)])
              for i, t in enumerate(trajs)]
    np.savetxt(path, np.vstack(blocks), delimiter=",",
               header=",".join(cols), comments="", fmt="%.17g")
    return _write_manifest(path, cols, meta)


def load_sde_dataset(path) -> List[np.ndarray]:
    manifest = _read_manifest(path)
    if manifest["columns"] != ["x0", "x1", "h", "g", "trajectory"]:
        raise DataIntegrityError("unexpected column layout in %s" % path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ids = data[:, 4].astype(np.int64)
    return [data[ids == i, :4] for i in np.unique(ids)]
