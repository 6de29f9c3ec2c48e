"""Pipeline orchestration: config file, stage graph, manifests, console entry.

Artifacts are flat files (CSV for numbers, JSON for everything else) grouped
in one directory per stage under the run's out_dir.  Every stage writes a
manifest.json with sha256 hashes of its numerical outputs; consumers verify
those hashes before reading, so a corrupted or half-written stage fails
loudly with the name of the stage to rerun.  All randomness is derived from
(master seed, stage tag), which makes stage reruns byte-identical.

Wall-clock measurements (timings.json, economics.json) are intentionally
left out of the manifests: they are the only outputs allowed to differ
between identical reruns.
"""

import argparse
import hashlib
import json
import os
import shutil
import sys
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from . import __version__
from .abm import (
    AbmParams,
    AbmTrajectory,
    InitialCondition,
    bin_centers,
    ensemble_average_density,
    simulate,
)
from .ard import ArdConfig
from .ard import fit as ard_fit
from .ard import relevance
from .bifurcation import (
    NewtonError,
    SteadyState,
    continue_branch,
    detect_fold,
    export_branch_csv,
    find_zeros_1d,
    newton_solve,
)
from .errors import DataIntegrityError, NumericalError
from .fokker_planck import Grid1D, gaussian_state, integrate, mean_preference, steady_residual
from .manifold import DmapsConfig, embed, epsilon_heuristic, harmonic_residuals
from .ml import TrainConfig, forward, load_dense, load_sde, save_dense, save_sde, sde_train
from .rare_events import (
    EscapeConfig,
    QuadConfig,
    constant_diffusivity,
    effective_potential,
    mc_escape,
    mean_escape_quadrature,
    save_escape_samples,
)
from .surrogates import (
    FEATURE_NAMES,
    FeatureTable,
    IpdeSurrogate,
    SdeSurrogate,
    build_feature_table,
    build_sde_dataset,
    downsample_table,
    fit_ipde_fnn,
    fit_ipde_rff,
    heun_integrate,
    ipde_rhs,
    load_feature_table,
    load_sde_dataset,
    r2_score,
    save_feature_table,
    save_sde_dataset,
    smooth,
)


class ConfigError(ValueError):
    """Bad or missing run configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# configuration schema


def _linspace(a, b, n):
    return [float(v) for v in np.linspace(a, b, n)]


@dataclass
class IpdeCorpusConfig:
    """Ensemble-averaged density trajectories that feed the feature table."""

    g_values: list = field(default_factory=lambda: _linspace(30.0, 50.0, 11))
    initial_means: list = field(default_factory=lambda: _linspace(-0.3, 0.3, 8))
    initial_spread: float = 0.3
    n_copies: int = 20
    t_end: float = 5.0
    stop_threshold: float = 0.4


@dataclass
class SdeCorpusConfig:
    """Short bursts from lifted snapshot microstates for the coarse SDE."""

    pilot_g: float = 47.0
    pilot_ic: list = field(default_factory=lambda: [-1.0, -0.6, 1.0])
    pilot_t_end: float = 15.0
    n_snapshots: int = 25
    snapshot_mean_cap: float = 0.35
    g_values: list = field(default_factory=lambda: _linspace(42.0, 47.0, 11))
    t_end: float = 5.0
    stop_threshold: float = 0.4


@dataclass
class FeatureBuildConfig:
    stop_threshold: float = 0.4
    n_drop: int = 2
    max_rows: int = 40000
    time_window: int = 10  # frames averaged before time-differencing
    smooth_passes: int = 4


@dataclass
class ArdSelectConfig:
    subsample: int = 600
    n_seeds: int = 10
    restarts: int = 1
    max_iters: int = 120


@dataclass
class DmapsStageConfig:
    n_eigen: int = 5
    knn: int = 0


@dataclass
class IpdeTrainConfig:
    rff_neurons: int = 600
    rff_reg_tol: float = 1e-6
    fnn_hidden: list = field(default_factory=lambda: [16, 16])
    fnn_rows: int = 4000
    fnn_max_iters: int = 60
    holdout_fraction: float = 0.1


@dataclass
class FpIntegrateConfig:
    g: float = 40.0
    t_end: float = 5.0
    record_every: float = 0.25
    initial_mean: float = 0.0
    initial_spread: float = 0.3


@dataclass
class IpdeIntegrateConfig:
    kind: str = "rff"
    g: float = 40.0
    t_end: float = 5.0
    dt: float = 2e-3
    record_steps: int = 50
    initial_mean: float = 0.0
    initial_spread: float = 0.3


@dataclass
class ContinuationStageConfig:
    g_start: float = 40.0
    ds: float = 0.05
    n_steps: int = 150


@dataclass
class SdeTrainConfig:
    hidden: list = field(default_factory=lambda: [16, 16])
    learning_rate: float = 3e-3
    epochs: int = 400
    batch_size: int = 256
    patience: int = 40


@dataclass
class EscapeStageConfig:
    g: float = 45.25
    threshold_mean: float = 0.3
    h: float = 1e-3
    n_trajectories: int = 2000
    max_steps: int = 10**8
    n_nodes: int = 512
    expand_step: float = 0.25
    expand_tol: float = 1e-3


@dataclass
class RunConfig:
    experiment: str = "desk"
    seed: int = 1234
    out_dir: str = "runs/desk"
    n_bins: int = 81
    jobs: int = 1
    abm: AbmParams = field(default_factory=lambda: AbmParams(n_agents=5000))
    ipde_corpus: IpdeCorpusConfig = field(default_factory=IpdeCorpusConfig)
    sde_corpus: SdeCorpusConfig = field(default_factory=SdeCorpusConfig)
    features: FeatureBuildConfig = field(default_factory=FeatureBuildConfig)
    ard: ArdSelectConfig = field(default_factory=ArdSelectConfig)
    dmaps: DmapsStageConfig = field(default_factory=DmapsStageConfig)
    ipde_train: IpdeTrainConfig = field(default_factory=IpdeTrainConfig)
    fp_integrate: FpIntegrateConfig = field(default_factory=FpIntegrateConfig)
    ipde_integrate: IpdeIntegrateConfig = field(default_factory=IpdeIntegrateConfig)
    fp_continue: ContinuationStageConfig = field(
        default_factory=lambda: ContinuationStageConfig(40.0, 0.05, 150))
    ipde_continue: ContinuationStageConfig = field(
        default_factory=lambda: ContinuationStageConfig(40.0, 0.05, 200))
    sde_continue: ContinuationStageConfig = field(
        default_factory=lambda: ContinuationStageConfig(43.0, 0.05, 120))
    sde_train: SdeTrainConfig = field(default_factory=SdeTrainConfig)
    escape: EscapeStageConfig = field(default_factory=EscapeStageConfig)


_SECTION_TYPES = {
    "abm": AbmParams,
    "ipde_corpus": IpdeCorpusConfig,
    "sde_corpus": SdeCorpusConfig,
    "features": FeatureBuildConfig,
    "ard": ArdSelectConfig,
    "dmaps": DmapsStageConfig,
    "ipde_train": IpdeTrainConfig,
    "fp_integrate": FpIntegrateConfig,
    "ipde_integrate": IpdeIntegrateConfig,
    "fp_continue": ContinuationStageConfig,
    "ipde_continue": ContinuationStageConfig,
    "sde_continue": ContinuationStageConfig,
    "escape": EscapeStageConfig,
    "sde_train": SdeTrainConfig,
}

_SCALAR_KEYS = ("experiment", "seed", "out_dir", "n_bins", "jobs")


def _build_section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError("section '%s' must be a mapping" % name)
    valid = {f.name for f in cls.__dataclass_fields__.values()}
    for key in data:
        if key not in valid:
            raise ConfigError(
                "unknown key '%s.%s'; valid keys: %s"
                % (name, key, ", ".join(sorted(valid)))
            )
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad section '%s': %s" % (name, exc))


def config_from_dict(raw) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping at top level")
    known = set(_SCALAR_KEYS) | set(_SECTION_TYPES)
    for key in raw:
        if key not in known:
            raise ConfigError(
                "unknown config key '%s'; valid keys: %s"
                % (key, ", ".join(sorted(known)))
            )
    cfg = RunConfig()
    for key in _SCALAR_KEYS:
        if key in raw:
            setattr(cfg, key, raw[key])
    if not isinstance(cfg.seed, int):
        raise ConfigError("seed must be an integer")
    if not isinstance(cfg.n_bins, int) or cfg.n_bins < 3:
        raise ConfigError("n_bins must be an integer >= 3")
    for key, cls in _SECTION_TYPES.items():
        if key in raw:
            setattr(cfg, key, _build_section(cls, raw[key], key))
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError("config file not found: %s" % path)
    except yaml.YAMLError as exc:
        raise ConfigError("config file is not valid YAML: %s" % exc)
    return config_from_dict(raw)


def config_hash(config: RunConfig) -> str:
    canon = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()


def stage_seed(master: int, tag: str) -> int:
    """Per-stage stream derivation: hash of (master seed, stage tag)."""
    digest = hashlib.sha256(("%d:%s" % (master, tag)).encode()).digest()
    return int.from_bytes(digest[:4], "little") % (2**31)


# ---------------------------------------------------------------------------
# manifests


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _fresh_stage_dir(config: RunConfig, stage: str) -> str:
    d = os.path.join(config.out_dir, stage)
    if os.path.isdir(d):
        shutil.rmtree(d)
    os.makedirs(d)
    return d


def _write_manifest(stage_dir, stage, config, files):
    manifest = {
        "stage": stage,
        "command": "tipping-lab " + stage,
        "code_version": __version__,
        "config_hash": config_hash(config),
        "files": {name: _sha256_file(os.path.join(stage_dir, name))
                  for name in sorted(files)},
    }
    with open(os.path.join(stage_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def stage_artifacts(config: RunConfig, stage: str) -> str:
    """Verify a producing stage's manifest and hashes; return its directory."""
    d = os.path.join(config.out_dir, stage)
    mpath = os.path.join(d, "manifest.json")
    if not os.path.isfile(mpath):
        raise DataIntegrityError(
            "no artifacts for stage '%s'; run `tipping-lab %s` first"
            % (stage, stage)
        )
    with open(mpath) as fh:
        manifest = json.load(fh)
    for name, digest in manifest["files"].items():
        fpath = os.path.join(d, name)
        if not os.path.isfile(fpath) or _sha256_file(fpath) != digest:
            raise DataIntegrityError(
                "artifact '%s' of stage '%s' is missing or corrupt; "
                "rerun stage '%s'" % (name, stage, stage)
            )
    return d


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_csv(path, header, columns):
    data = np.column_stack([np.asarray(c, dtype=np.float64) for c in columns])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def _read_csv(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


# ---------------------------------------------------------------------------
# trajectory persistence used by the two corpora


def _save_trajectory(path, traj: AbmTrajectory, with_density, with_coarse):
    cols = [traj.times, traj.means, traj.rates[:, 0], traj.rates[:, 1]]
    header = ["time", "mean", "buy", "sell"]
    if with_density:
        for j in range(traj.densities.shape[1]):
            header.append("rho_%03d" % j)
        cols.extend(traj.densities.T)
    if with_coarse:
        for j in range(traj.coarse.shape[1]):
            header.append("c_%02d" % j)
        cols.extend(traj.coarse.T)
    _write_csv(path, ",".join(header), cols)


def _load_trajectory(path, n_bins, g, n_agents, with_density, with_coarse):
    data = _read_csv(path)
    times, means = data[:, 0], data[:, 1]
    rates = data[:, 2:4]
    densities = np.zeros((times.size, n_bins))
    coarse = None
    col = 4
    if with_density:
        densities = data[:, col:col + n_bins]
        col += n_bins
    if with_coarse:
        coarse = data[:, col:]
    return AbmTrajectory(times=times, densities=densities, means=means,
                         rates=rates, coarse=coarse, g=g, n_agents=n_agents)


# ---------------------------------------------------------------------------
# stages


def _stage_abm_generate(config: RunConfig):
    out = _fresh_stage_dir(config, "abm-generate")
    os.makedirs(os.path.join(out, "ipde_corpus"))
    os.makedirs(os.path.join(out, "sde_corpus"))
    files = []
    cc = config.ipde_corpus
    ipde_index = []
    for gi, g in enumerate(cc.g_values):
        params = replace(config.abm, g=float(g))
        for mi, m0 in enumerate(cc.initial_means):
            copies = []
            for c in range(cc.n_copies):
                seed = stage_seed(config.seed, "abm:ipde:%d:%d:%d" % (gi, mi, c))
                copies.append(simulate(
                    params, InitialCondition.gaussian(float(m0), cc.initial_spread),
                    cc.t_end, seed, n_bins=config.n_bins,
                    stop_threshold=cc.stop_threshold, stop_mode="abs"))
            avg = ensemble_average_density(copies)
            name = "ipde_corpus/g%02d_m%d.csv" % (gi, mi)
            _save_trajectory(os.path.join(out, name), avg,
                             with_density=True, with_coarse=False)
            files.append(name)
            ipde_index.append({"file": name, "g": float(g), "m0": float(m0),
                               "n_frames": int(avg.n_frames)})

    sc = config.sde_corpus
    pilot_params = replace(config.abm, g=float(sc.pilot_g))
    pilot = simulate(
        pilot_params, InitialCondition.triangular(*sc.pilot_ic),
        sc.pilot_t_end, stage_seed(config.seed, "abm:sde:pilot"),
        n_bins=config.n_bins, stop_threshold=sc.stop_threshold,
        stop_mode="upper", keep_prefs=True)
    eligible = np.flatnonzero(pilot.means <= sc.snapshot_mean_cap)
    if eligible.size < sc.n_snapshots:
        raise NumericalError(
            "pilot run yielded %d snapshots below the mean cap, need %d; "
            "lengthen pilot_t_end" % (eligible.size, sc.n_snapshots)
        )
    # spread the snapshots across the visited mean-preference range
    order = eligible[np.argsort(pilot.means[eligible])]
    picks = order[np.unique(np.round(
        np.linspace(0, order.size - 1, sc.n_snapshots)).astype(int))]
    picks = np.sort(picks)
    np.savez(os.path.join(out, "microstates.npz"),
             prefs=pilot.prefs_history[picks],
             frames=picks.astype(np.int64),
             means=pilot.means[picks])
    files.append("microstates.npz")
    pilot_csv = "sde_pilot.csv"
    _save_trajectory(os.path.join(out, pilot_csv), pilot,
                     with_density=False, with_coarse=True)
    files.append(pilot_csv)

    sde_index = []
    microstates = pilot.prefs_history[picks]
    for gi, g in enumerate(sc.g_values):
        params = replace(config.abm, g=float(g))
        for si in range(picks.size):
            seed = stage_seed(config.seed, "abm:sde:%d:%d" % (gi, si))
            tr = simulate(
                params, InitialCondition.explicit(microstates[si]),
                sc.t_end, seed, n_bins=config.n_bins,
                stop_threshold=sc.stop_threshold, stop_mode="upper")
            name = "sde_corpus/g%02d_s%02d.csv" % (gi, si)
            _save_trajectory(os.path.join(out, name), tr,
                             with_density=False, with_coarse=True)
            files.append(name)
            sde_index.append({"file": name, "g": float(g), "snapshot": si,
                              "n_frames": int(tr.n_frames)})

    index = {
        "ipde": ipde_index,
        "sde": sde_index,
        "pilot": {"file": pilot_csv, "g": float(sc.pilot_g),
                  "n_frames": int(pilot.n_frames),
                  "snapshot_frames": [int(k) for k in picks],
                  "snapshot_means": [float(v) for v in pilot.means[picks]]},
        "n_bins": config.n_bins,
        "n_agents": config.abm.n_agents,
    }
    _write_json(os.path.join(out, "index.json"), index)
    files.append("index.json")
    _write_manifest(out, "abm-generate", config, files)


def _stage_fp_integrate(config: RunConfig):
    out = _fresh_stage_dir(config, "fp-integrate")
    fc = config.fp_integrate
    grid = Grid1D.uniform(config.n_bins)
    params = replace(config.abm, g=fc.g)
    state = gaussian_state(grid, fc.initial_mean, fc.initial_spread)
    _, records = integrate(state, params, fc.t_end, record_every=fc.record_every)
    times = np.array([t for t, _ in records])
    fields = np.array([rho for _, rho in records])
    masses = np.trapezoid(fields, grid.x, axis=1)
    means = np.array([mean_preference(rho, grid) for rho in fields])
    header = ["time"] + ["rho_%03d" % j for j in range(config.n_bins)]
    _write_csv(os.path.join(out, "fields.csv"), ",".join(header),
               [times] + list(fields.T))
    _write_csv(os.path.join(out, "series.csv"), "time,mass,mean",
               [times, masses, means])
    _write_manifest(out, "fp-integrate", config, ["fields.csv", "series.csv"])


def _analytic_steady_profile(config: RunConfig, g: float):
    grid = Grid1D.uniform(config.n_bins)
    params = replace(config.abm, g=g)
    u0 = gaussian_state(grid, 0.0, 0.3).rho[1:-1]
    u = newton_solve(lambda v: steady_residual(v, g, params), u0, tol=1e-10)
    return grid, params, u


def _interior_mean_summary(grid):
    def summary(u):
        rho = np.zeros(grid.n_points)
        rho[1:-1] = u
        return mean_preference(rho, grid)
    return summary


def _fold_summary(branch, residual, grid=None):
    """Fold location plus state summary, or None if the branch has no fold.

    A branch that runs out of arclength before turning is a data-quality
    outcome, not a broken stage; the branch itself is still the artifact.
    """
    try:
        fold = detect_fold(branch, residual=residual)
    except NumericalError:
        return None
    payload = {"g": float(fold.g), "n_branch_points": len(branch)}
    if grid is not None:
        rho = np.zeros(grid.n_points)
        rho[1:-1] = fold.state
        payload["mean"] = float(mean_preference(rho, grid))
    else:
        payload["state"] = [float(v) for v in np.atleast_1d(fold.state)]
    return payload


def _stage_fp_continue(config: RunConfig):
    out = _fresh_stage_dir(config, "fp-continue")
    sc = config.fp_continue
    grid, params, u = _analytic_steady_profile(config, sc.g_start)
    resid = lambda v, g: steady_residual(v, g, params)
    branch = continue_branch(resid, SteadyState(state=u, g=sc.g_start),
                             ds=sc.ds, n_steps=sc.n_steps, direction=1)
    export_branch_csv(branch, os.path.join(out, "branch.csv"),
                      summary=_interior_mean_summary(grid))
    _write_json(os.path.join(out, "fold.json"),
                _fold_summary(branch, resid, grid))
    _write_manifest(out, "fp-continue", config, ["branch.csv", "fold.json"])


def _load_ipde_corpus(config: RunConfig):
    d = stage_artifacts(config, "abm-generate")
    index = _read_json(os.path.join(d, "index.json"))
    trajs = []
    for entry in index["ipde"]:
        trajs.append(_load_trajectory(
            os.path.join(d, entry["file"]), index["n_bins"], entry["g"],
            index["n_agents"], with_density=True, with_coarse=False))
    return trajs


def _condition_trajectories(trajs, window: int, passes: int):
    """Moving-average frames in time, then smooth in x, before differencing.

    Histogram noise is independent across report frames, so the forward
    differences that become regression targets are noise-dominated unless
    neighbouring frames are pooled first.  The window is clamped so runs that
    tripped the stop threshold early still keep at least four frames; frame
    spacing is unchanged, so the downstream differencing needs no adjustment.
    """
    for tr in trajs:
        rho = np.asarray(tr.densities, dtype=np.float64)
        w = min(int(window), rho.shape[0] - 3)
        if w > 1:
            c = np.cumsum(rho, axis=0)
            rho = np.vstack([c[w - 1:w] / w, (c[w:] - c[:-w]) / w])
        for _ in range(max(0, int(passes))):
            rho = smooth(rho)
        x = bin_centers(rho.shape[1])
        tr.densities = rho
        tr.times = tr.times[:rho.shape[0]]
        tr.means = np.trapezoid(rho * x, x, axis=1)
    return trajs


def _stage_features_build(config: RunConfig):
    out = _fresh_stage_dir(config, "features-build")
    fc = config.features
    trajs = _load_ipde_corpus(config)
    _condition_trajectories(trajs, fc.time_window, fc.smooth_passes)
    table = build_feature_table(trajs, stop_threshold=fc.stop_threshold,
                                n_drop=fc.n_drop)
    n_raw = table.n_rows
    table = downsample_table(table, fc.max_rows,
                             seed=stage_seed(config.seed, "features:downsample"))
    save_feature_table(os.path.join(out, "table.csv"), table,
                       meta={"n_raw_rows": int(n_raw),
                             "n_trajectories": len(trajs)})
    _write_manifest(out, "features-build", config,
                    ["table.csv", "table.csv.manifest.json"])


def _stage_ard_select(config: RunConfig):
    out = _fresh_stage_dir(config, "ard-select")
    d = stage_artifacts(config, "features-build")
    table = load_feature_table(os.path.join(d, "table.csv"))
    ac = config.ard
    z = table.ard_matrix()
    weights = np.empty((ac.n_seeds, len(FEATURE_NAMES)))
    for si in range(ac.n_seeds):
        cfg = ArdConfig(subsample=ac.subsample, restarts=ac.restarts,
                        max_iters=ac.max_iters,
                        seed=stage_seed(config.seed, "ard:%d" % si))
        model = ard_fit(z, table.targets, cfg)
        weights[si] = relevance(model).weights
    argmin = np.argmin(weights, axis=1)
    argmax = np.argmax(weights, axis=1)
    count_min = np.bincount(argmin, minlength=len(FEATURE_NAMES))
    count_max = np.bincount(argmax, minlength=len(FEATURE_NAMES))
    _write_csv(os.path.join(out, "relevance.csv"),
               "seed," + ",".join(FEATURE_NAMES),
               [np.arange(ac.n_seeds)] + list(weights.T))
    _write_json(os.path.join(out, "ranking.json"), {
        "feature_names": list(FEATURE_NAMES),
        "smallest_majority": FEATURE_NAMES[int(np.argmax(count_min))],
        "largest_majority": FEATURE_NAMES[int(np.argmax(count_max))],
        "smallest_counts": [int(c) for c in count_min],
        "largest_counts": [int(c) for c in count_max],
        "mean_weights": [float(w) for w in weights.mean(axis=0)],
    })
    _write_manifest(out, "ard-select", config, ["relevance.csv", "ranking.json"])


def _slice_table(table: FeatureTable, idx):
    return FeatureTable(features=table.features[idx], targets=table.targets[idx],
                        replica=table.replica[idx], frame=table.frame[idx])


def _save_surrogate(out, tag, surrogate: IpdeSurrogate):
    save_dense(os.path.join(out, tag + ".npz"), surrogate.net)
    meta = dict(surrogate.meta)
    wall = meta.pop("train_seconds", None)  # keep hashed artifacts rerun-stable
    _write_json(os.path.join(out, tag + ".json"), {
        "mask": [bool(b) for b in surrogate.mask],
        "n_nodes": int(surrogate.n_nodes),
        "feature_center": [float(v) for v in surrogate.feature_center],
        "feature_halfwidth": [float(v) for v in surrogate.feature_halfwidth],
        "meta": meta,
    })
    return wall


def _load_surrogate(d, tag) -> IpdeSurrogate:
    net = load_dense(os.path.join(d, tag + ".npz"))
    side = _read_json(os.path.join(d, tag + ".json"))
    return IpdeSurrogate(net=net, mask=np.array(side["mask"], dtype=bool),
                         n_nodes=side["n_nodes"],
                         feature_center=np.array(side["feature_center"]),
                         feature_halfwidth=np.array(side["feature_halfwidth"]),
                         meta=side["meta"])


def _stage_ipde_train(config: RunConfig):
    out = _fresh_stage_dir(config, "ipde-train")
    d = stage_artifacts(config, "features-build")
    table = load_feature_table(os.path.join(d, "table.csv"))
    tc = config.ipde_train
    rng = np.random.default_rng(stage_seed(config.seed, "ipde:holdout"))
    perm = rng.permutation(table.n_rows)
    n_hold = max(1, int(round(tc.holdout_fraction * table.n_rows)))
    hold = _slice_table(table, np.sort(perm[:n_hold]))
    train = _slice_table(table, np.sort(perm[n_hold:]))

    mask = np.ones(len(FEATURE_NAMES), dtype=bool)
    rff = fit_ipde_rff(train, mask, n_neurons=tc.rff_neurons,
                       seed=stage_seed(config.seed, "ipde:rff"),
                       reg_tol=tc.rff_reg_tol)
    fnn_table = downsample_table(train, tc.fnn_rows,
                                 seed=stage_seed(config.seed, "ipde:fnnrows"))
    fnn_seed = stage_seed(config.seed, "ipde:fnn")
    fnn = fit_ipde_fnn(fnn_table, mask, hidden=tuple(tc.fnn_hidden),
                       config=TrainConfig(max_iters=tc.fnn_max_iters,
                                          seed=fnn_seed),
                       seed=fnn_seed)

    hold_inputs = np.column_stack([hold.features[:, :7], hold.features[:, 7]])
    metrics = {}
    timings = {}
    for tag, surr in (("rff", rff), ("fnn", fnn)):
        pred = forward(surr.net, hold_inputs)[:, 0]
        metrics[tag] = {
            "holdout_r": float(np.corrcoef(pred, hold.targets)[0, 1]),
            "holdout_r2": float(r2_score(pred, hold.targets)),
            "train_rows": int(train.n_rows if tag == "rff" else fnn_table.n_rows),
            "holdout_rows": int(hold.n_rows),
        }
        timings[tag + "_train_seconds"] = _save_surrogate(out, tag, surr)
    _write_json(os.path.join(out, "metrics.json"), metrics)
    _write_json(os.path.join(out, "timings.json"), timings)
    _write_manifest(out, "ipde-train", config,
                    ["rff.npz", "rff.json", "fnn.npz", "fnn.json",
                     "metrics.json"])


def _stage_ipde_integrate(config: RunConfig):
    ic = config.ipde_integrate
    if ic.kind not in ("rff", "fnn"):
        raise ConfigError("ipde_integrate.kind must be 'rff' or 'fnn'")
    out = _fresh_stage_dir(config, "ipde-integrate")
    d = stage_artifacts(config, "ipde-train")
    surrogate = _load_surrogate(d, ic.kind)
    grid = Grid1D.uniform(config.n_bins)
    rho0 = gaussian_state(grid, ic.initial_mean, ic.initial_spread).rho
    traj = heun_integrate(rho0, ic.g, surrogate, dt=ic.dt, t_end=ic.t_end,
                          record_every=ic.record_steps)
    header = ["time"] + ["rho_%03d" % j for j in range(config.n_bins)]
    _write_csv(os.path.join(out, "fields.csv"), ",".join(header),
               [traj.times] + list(traj.fields.T))
    means = np.array([mean_preference(rho, grid) for rho in traj.fields])
    _write_csv(os.path.join(out, "series.csv"), "time,mass,mean",
               [traj.times, traj.masses, means])
    _write_json(os.path.join(out, "mass.json"), {
        "kind": ic.kind, "g": ic.g,
        "mass_min": float(traj.masses.min()),
        "mass_max": float(traj.masses.max()),
    })
    _write_manifest(out, "ipde-integrate", config,
                    ["fields.csv", "series.csv", "mass.json"])


def _surrogate_steady_residual(surrogate: IpdeSurrogate, grid: Grid1D):
    center_row = grid.center_index - 1

    def resid(u, g):
        rho = np.zeros(grid.n_points)
        rho[1:-1] = u
        out = np.array(ipde_rhs(rho, g, surrogate)[1:-1])
        out[center_row] = grid.dx * u.sum() - 1.0
        return out

    return resid


def _stage_ipde_continue(config: RunConfig):
    out = _fresh_stage_dir(config, "ipde-continue")
    d = stage_artifacts(config, "ipde-train")
    sc = config.ipde_continue
    grid, _, u_analytic = _analytic_steady_profile(config, sc.g_start)
    folds = {}
    files = []
    for tag in ("rff", "fnn"):
        surrogate = _load_surrogate(d, tag)
        resid = _surrogate_steady_residual(surrogate, grid)
        # relax the learned field onto its own attractor before polishing;
        # the analytic profile alone can sit outside Newton's basin.  Short
        # pulses with a mass reset in between keep the drift guard quiet.
        rho = np.zeros(grid.n_points)
        rho[1:-1] = u_analytic
        for _ in range(8):
            try:
                pulse = heun_integrate(rho, sc.g_start, surrogate,
                                       dt=2e-3, t_end=1.0, record_every=10**9)
            except NumericalError:
                break
            rho = pulse.fields[-1].copy()
            rho /= grid.dx * rho[1:-1].sum()
        u = newton_solve(lambda v: resid(v, sc.g_start),
                         rho[1:-1].copy(), tol=1e-8)
        branch = continue_branch(resid, SteadyState(state=u, g=sc.g_start),
                                 ds=sc.ds, n_steps=sc.n_steps, direction=1)
        name = "branch_%s.csv" % tag
        export_branch_csv(branch, os.path.join(out, name),
                          summary=_interior_mean_summary(grid))
        files.append(name)
        folds[tag] = _fold_summary(branch, resid, grid)
    _write_json(os.path.join(out, "folds.json"), folds)
    files.append("folds.json")
    _write_manifest(out, "ipde-continue", config, files)


def _load_sde_corpus(config: RunConfig):
    d = stage_artifacts(config, "abm-generate")
    index = _read_json(os.path.join(d, "index.json"))
    out = []
    for entry in index["sde"]:
        tr = _load_trajectory(os.path.join(d, entry["file"]), index["n_bins"],
                              entry["g"], index["n_agents"],
                              with_density=False, with_coarse=True)
        out.append(tr)
    return out


def _stage_dmaps_embed(config: RunConfig):
    out = _fresh_stage_dir(config, "dmaps-embed")
    trajs = _load_sde_corpus(config)
    coarse = np.vstack([tr.coarse for tr in trajs])
    means = np.concatenate([tr.means for tr in trajs])
    times = np.concatenate([tr.times for tr in trajs])
    gs = np.concatenate([np.full(tr.n_frames, tr.g) for tr in trajs])
    traj_ids = np.concatenate([np.full(tr.n_frames, i, dtype=np.int64)
                               for i, tr in enumerate(trajs)])
    frames = np.concatenate([np.arange(tr.n_frames, dtype=np.int64)
                             for tr in trajs])
    # equalize column scales before the kernel: quantiles and rates live on
    # different units
    col_mu = coarse.mean(axis=0)
    col_sd = np.maximum(coarse.std(axis=0), 1e-12)
    z = (coarse - col_mu) / col_sd
    dc = DmapsConfig(epsilon=epsilon_heuristic(z),
                     n_eigen=config.dmaps.n_eigen, knn=config.dmaps.knn)
    embedding = embed(z, dc)
    residuals = harmonic_residuals(embedding, dc)
    psi = embedding.eigenvectors.copy()
    sign = 1.0 if np.corrcoef(psi[:, 0], means)[0, 1] >= 0 else -1.0
    psi[:, 0] *= sign
    alpha, beta = np.polyfit(means, psi[:, 0], 1)
    header = ["traj", "frame", "time", "g", "mean"] + \
        ["psi_%d" % (k + 1) for k in range(psi.shape[1])]
    _write_csv(os.path.join(out, "psi.csv"), ",".join(header),
               [traj_ids, frames, times, gs, means] + list(psi.T))
    _write_json(os.path.join(out, "embedding.json"), {
        "eigenvalues": [float(v) for v in embedding.eigenvalues],
        "residuals": [float(v) for v in residuals],
        "epsilon": float(embedding.epsilon_used),
        "sign": sign,
        "mean_to_psi": {"alpha": float(alpha), "beta": float(beta)},
        "psi_correlation_with_mean": float(np.corrcoef(psi[:, 0], means)[0, 1]),
        "n_frames": int(psi.shape[0]),
        "column_center": [float(v) for v in col_mu],
        "column_scale": [float(v) for v in col_sd],
    })
    _write_manifest(out, "dmaps-embed", config, ["psi.csv", "embedding.json"])


def _stage_sde_dataset(config: RunConfig):
    out = _fresh_stage_dir(config, "sde-dataset")
    d = stage_artifacts(config, "dmaps-embed")
    data = _read_csv(os.path.join(d, "psi.csv"))
    traj_ids = data[:, 0].astype(int)
    series = []
    for tid in np.unique(traj_ids):
        rows = data[traj_ids == tid]
        if rows.shape[0] < 2:
            continue
        series.append((rows[:, 2], rows[:, 5], float(rows[0, 3])))
    if not series:
        raise NumericalError("no usable coarse series; rerun dmaps-embed")
    h = config.abm.dt_report
    pairs = build_sde_dataset(series, h)
    psi_all = data[:, 5]
    save_sde_dataset(os.path.join(out, "pairs.csv"), pairs,
                     meta={"h": h, "coarse_tag": "psi1"})
    _write_json(os.path.join(out, "box.json"), {
        "coarse_tag": "psi1",
        "h": h,
        "x_range": [float(psi_all.min()), float(psi_all.max())],
        "g_range": [float(data[:, 3].min()), float(data[:, 3].max())],
        "n_pairs": int(sum(p.shape[0] for p in pairs)),
    })
    _write_manifest(out, "sde-dataset", config,
                    ["pairs.csv", "pairs.csv.manifest.json", "box.json"])


def _stage_sde_train(config: RunConfig):
    out = _fresh_stage_dir(config, "sde-train")
    d = stage_artifacts(config, "sde-dataset")
    pairs = load_sde_dataset(os.path.join(d, "pairs.csv"))
    box = _read_json(os.path.join(d, "box.json"))
    tc = config.sde_train
    nets = sde_train(pairs, TrainConfig(
        max_iters=tc.epochs, learning_rate=tc.learning_rate,
        batch_size=tc.batch_size, patience=tc.patience,
        seed=stage_seed(config.seed, "sde:train")),
        hidden=tuple(tc.hidden))
    save_sde(os.path.join(out, "drift.npz"), os.path.join(out, "diff.npz"), nets)
    _write_json(os.path.join(out, "surrogate.json"), {
        "coarse_tag": box["coarse_tag"],
        "x_range": box["x_range"],
        "g_range": box["g_range"],
        "hidden": list(tc.hidden),
    })
    _write_manifest(out, "sde-train", config,
                    ["drift.npz", "diff.npz", "surrogate.json"])


def _load_sde_surrogate(config: RunConfig):
    d = stage_artifacts(config, "sde-train")
    nets = load_sde(os.path.join(d, "drift.npz"), os.path.join(d, "diff.npz"))
    side = _read_json(os.path.join(d, "surrogate.json"))
    return SdeSurrogate(nets=nets, coarse_tag=side["coarse_tag"],
                        x_range=tuple(side["x_range"]),
                        g_range=tuple(side["g_range"]))


def _net_of_x(net, g: float):
    """Freeze g and expose the net as a vectorized function of the state."""

    def f(x):
        x = np.asarray(x, dtype=np.float64)
        flat = np.atleast_1d(x).ravel()
        out = forward(net, np.column_stack([flat, np.full(flat.size, g)]))[:, 0]
        return out.reshape(x.shape) if x.shape else float(out[0])

    return f


def _stable_roots(drift_fn, x_range):
    roots = find_zeros_1d(drift_fn, x_range, n_scan=400)
    stable = []
    for r in roots:
        h = 1e-6 * max(1.0, abs(r))
        slope = (drift_fn(r + h) - drift_fn(r - h)) / (2 * h)
        if slope < 0:
            stable.append(r)
    if not stable:
        raise NumericalError(
            "no stable root of the learned drift inside [%g, %g]"
            % (x_range[0], x_range[1])
        )
    return stable


def _stage_sde_continue(config: RunConfig):
    out = _fresh_stage_dir(config, "sde-continue")
    surrogate = _load_sde_surrogate(config)
    sc = config.sde_continue
    drift = surrogate.nets.drift

    def resid(state, g):
        return np.atleast_1d(
            forward(drift, np.array([state[0], g], dtype=np.float64))[0])

    drift_at_start = _net_of_x(drift, sc.g_start)
    root = min(_stable_roots(drift_at_start, surrogate.x_range))
    branch = continue_branch(resid, SteadyState(state=np.array([root]),
                                                g=sc.g_start),
                             ds=sc.ds, n_steps=sc.n_steps, direction=1)
    export_branch_csv(branch, os.path.join(out, "branch.csv"))
    fold = _fold_summary(branch, resid)
    if fold is not None:
        fold["psi"] = fold.pop("state")[0]
    _write_json(os.path.join(out, "fold.json"), fold)
    _write_manifest(out, "sde-continue", config, ["branch.csv", "fold.json"])


def _escape_problem(config: RunConfig):
    """Shared setup of the escape interval in the coarse variable."""
    surrogate = _load_sde_surrogate(config)
    d = stage_artifacts(config, "dmaps-embed")
    emb = _read_json(os.path.join(d, "embedding.json"))
    ec = config.escape
    alpha = emb["mean_to_psi"]["alpha"]
    beta = emb["mean_to_psi"]["beta"]
    b = alpha * ec.threshold_mean + beta
    drift_fn = _net_of_x(surrogate.nets.drift, ec.g)
    sigma_fn = _net_of_x(surrogate.nets.diff, ec.g)
    roots = _stable_roots(drift_fn, surrogate.x_range)
    wells = [r for r in roots if r < b]
    if not wells:
        raise NumericalError(
            "all stable roots of the drift sit beyond the escape threshold"
        )
    x0 = min(wells)
    a = x0 - (b - x0)  # symmetric span below the well
    return surrogate, drift_fn, sigma_fn, float(a), float(b), float(x0)


def _stage_escape_mc(config: RunConfig):
    out = _fresh_stage_dir(config, "escape-mc")
    _, drift_fn, sigma_fn, a, b, x0 = _escape_problem(config)
    ec = config.escape
    cfg = EscapeConfig(a=a, b=b, x0=x0, h=ec.h, max_steps=ec.max_steps,
                       n_trajectories=ec.n_trajectories,
                       seed=stage_seed(config.seed, "escape:mc"))
    stats = mc_escape(drift_fn, sigma_fn, cfg)
    save_escape_samples(os.path.join(out, "samples.txt"), stats, cfg)
    _write_json(os.path.join(out, "escape.json"), {
        "g": ec.g, "a": a, "b": b, "x0": x0,
        "threshold_mean": ec.threshold_mean,
        "mean": stats.mean, "std": stats.std,
        "std_over_mean": stats.std / stats.mean,
        "n_censored": stats.n_censored,
        "exit_right_fraction": stats.exit_right_fraction,
    })
    _write_manifest(out, "escape-mc", config,
                    ["samples.txt", "samples.txt.summary.json", "escape.json"])


def _stage_escape_quad(config: RunConfig):
    out = _fresh_stage_dir(config, "escape-quad")
    surrogate, drift_fn, sigma_fn, a, b, x0 = _escape_problem(config)
    ec = config.escape
    # the quadrature assumes near-constant diffusivity; when the learned
    # noise amplitude varies too much we record the advisory instead of
    # computing a number the formula does not cover
    try:
        sigma = constant_diffusivity(sigma_fn, a, b)
    except NumericalError as exc:
        sigma, tau, note = None, None, str(exc)
    else:
        qc = QuadConfig(z=x0, a=a, b=b, beta=2.0, n_nodes=ec.n_nodes,
                        expand_step=ec.expand_step, expand_tol=ec.expand_tol)
        tau, note = float(mean_escape_quadrature(drift_fn, sigma, qc)), ""
    _write_json(os.path.join(out, "quad.json"), {
        "g": ec.g, "a": a, "b": b, "x0": x0,
        "sigma_used": None if sigma is None else float(sigma),
        "tau": tau, "note": note,
    })
    files = ["quad.json"]
    # effective-potential curves for the figure analogs
    lo, hi = surrogate.g_range
    for g in sorted({42.0, 45.0, 47.0, ec.g}):
        if not (lo - 1e-9 <= g <= hi + 1e-9):
            continue
        fn = _net_of_x(surrogate.nets.drift, g)
        sg = _net_of_x(surrogate.nets.diff, g)
        try:
            sig_g = constant_diffusivity(sg, a, b)
        except NumericalError:
            continue
        grid = np.linspace(a, b, 401)
        u = effective_potential(fn, sig_g, grid, x0)
        name = "potential_g%.2f.csv" % g
        _write_csv(os.path.join(out, name), "psi,U_e", [grid, u])
        files.append(name)
    _write_manifest(out, "escape-quad", config, files)


def _stage_report(config: RunConfig):
    out = _fresh_stage_dir(config, "report")
    files = []

    # bifurcation branches from all four routes
    rows = []
    sources = [("analytic", "fp-continue", "branch.csv"),
               ("rff", "ipde-continue", "branch_rff.csv"),
               ("fnn", "ipde-continue", "branch_fnn.csv"),
               ("sde", "sde-continue", "branch.csv")]
    for label, stage, name in sources:
        d = stage_artifacts(config, stage)
        data = _read_csv(os.path.join(d, name))
        for g, summ in data[:, :2]:
            rows.append((label, g, summ))
    with open(os.path.join(out, "bifurcation_branches.csv"), "w") as fh:
        fh.write("source,g,summary\n")
        for label, g, summ in rows:
            fh.write("%s,%.17g,%.17g\n" % (label, g, summ))
    files.append("bifurcation_branches.csv")

    # escape histogram
    d = stage_artifacts(config, "escape-mc")
    samples = np.loadtxt(os.path.join(d, "samples.txt"), ndmin=1)
    counts, edges = np.histogram(samples, bins=40)
    _write_csv(os.path.join(out, "escape_histogram.csv"),
               "bin_left,bin_right,count",
               [edges[:-1], edges[1:], counts])
    files.append("escape_histogram.csv")
    escape_mc = _read_json(os.path.join(d, "escape.json"))
    d = stage_artifacts(config, "escape-quad")
    escape_quad = _read_json(os.path.join(d, "quad.json"))

    # density snapshots: analytic solver next to the learned field
    snap_rows = []
    d = stage_artifacts(config, "fp-integrate")
    fp_fields = _read_csv(os.path.join(d, "fields.csv"))
    d = stage_artifacts(config, "ipde-integrate")
    learned_fields = _read_csv(os.path.join(d, "fields.csv"))
    x = np.linspace(-1.0, 1.0, config.n_bins)
    for label, fields in (("analytic", fp_fields), ("learned", learned_fields)):
        t_max = fields[-1, 0]
        for target in np.linspace(0.0, t_max, 5)[1:]:
            k = int(np.argmin(np.abs(fields[:, 0] - target)))
            for j in range(config.n_bins):
                snap_rows.append((label, fields[k, 0], x[j], fields[k, 1 + j]))
    with open(os.path.join(out, "density_snapshots.csv"), "w") as fh:
        fh.write("source,time,x,rho\n")
        for label, t, xv, rho in snap_rows:
            fh.write("%s,%.17g,%.17g,%.17g\n" % (label, t, xv, rho))
    files.append("density_snapshots.csv")

    # headline numbers
    folds = {"analytic": _read_json(os.path.join(
        stage_artifacts(config, "fp-continue"), "fold.json"))}
    folds.update(_read_json(os.path.join(
        stage_artifacts(config, "ipde-continue"), "folds.json")))
    folds["sde"] = _read_json(os.path.join(
        stage_artifacts(config, "sde-continue"), "fold.json"))
    summary = {
        "experiment": config.experiment,
        "folds": folds,
        "regression": _read_json(os.path.join(
            stage_artifacts(config, "ipde-train"), "metrics.json")),
        "ard": _read_json(os.path.join(
            stage_artifacts(config, "ard-select"), "ranking.json")),
        "escape": {"mc": escape_mc, "quadrature": escape_quad},
    }
    _write_json(os.path.join(out, "summary.json"), summary)
    files.append("summary.json")

    economics = _measure_economics(config)
    _write_json(os.path.join(out, "economics.json"), economics)

    _write_manifest(out, "report", config, files)


def _measure_economics(config: RunConfig):
    """Per-window cost of the agent model vs per-step cost of the SDE."""
    params = config.abm
    init = InitialCondition.gaussian(0.0, 0.3)
    simulate(params, init, 4 * params.dt_report, 0)  # jit warm-up
    n_windows = 40
    t0 = time.perf_counter()
    simulate(params, init, n_windows * params.dt_report, 1)
    abm_per_window = (time.perf_counter() - t0) / n_windows

    surrogate, drift_fn, sigma_fn, a, b, x0 = _escape_problem(config)
    ec = config.escape
    warm = EscapeConfig(a=a, b=b, x0=x0, h=ec.h, max_steps=1000,
                        n_trajectories=2, seed=0)
    try:
        mc_escape(drift_fn, sigma_fn, warm)
    except NumericalError:
        pass
    bench = EscapeConfig(a=a, b=b, x0=x0, h=ec.h, max_steps=500_000,
                         n_trajectories=100,
                         seed=stage_seed(config.seed, "economics"))
    t0 = time.perf_counter()
    stats = mc_escape(drift_fn, sigma_fn, bench)
    kernel_wall = time.perf_counter() - t0
    n_steps = stats.samples.sum() / ec.h + stats.n_censored * 500_000
    kernel_per_step = kernel_wall / n_steps

    # batch-1 network evaluations, the un-tabulated alternative
    t0 = time.perf_counter()
    reps = 2000
    for _ in range(reps):
        drift_fn(x0)
        sigma_fn(x0)
    forward_per_step = (time.perf_counter() - t0) / reps

    return {
        "n_agents": params.n_agents,
        "abm_seconds_per_window": abm_per_window,
        "sde_kernel_seconds_per_step": kernel_per_step,
        "sde_forward_seconds_per_step": forward_per_step,
        "ratio_kernel": abm_per_window / kernel_per_step,
        "ratio_forward": abm_per_window / forward_per_step,
    }


STAGES = {
    "abm-generate": _stage_abm_generate,
    "fp-integrate": _stage_fp_integrate,
    "fp-continue": _stage_fp_continue,
    "features-build": _stage_features_build,
    "ard-select": _stage_ard_select,
    "ipde-train": _stage_ipde_train,
    "ipde-integrate": _stage_ipde_integrate,
    "ipde-continue": _stage_ipde_continue,
    "dmaps-embed": _stage_dmaps_embed,
    "sde-dataset": _stage_sde_dataset,
    "sde-train": _stage_sde_train,
    "sde-continue": _stage_sde_continue,
    "escape-mc": _stage_escape_mc,
    "escape-quad": _stage_escape_quad,
    "report": _stage_report,
}


def run_stage(stage: str, config: RunConfig):
    if stage not in STAGES:
        raise ConfigError("unknown stage '%s'; stages: %s"
                          % (stage, ", ".join(STAGES)))
    os.makedirs(config.out_dir, exist_ok=True)
    STAGES[stage](config)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tipping-lab",
        description="Staged tipping-point pipeline over flat-file artifacts.")
    parser.add_argument("stage", choices=sorted(STAGES))
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the master seed")
    parser.add_argument("--jobs", type=int, default=None,
                        help="worker cap (stages here are single-threaded)")
    parser.add_argument("--out", default=None, help="override out_dir")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.out is not None:
            config.out_dir = args.out
        if args.jobs is not None:
            if args.jobs < 1:
                raise ConfigError("--jobs must be at least 1")
            config.jobs = args.jobs
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    try:
        run_stage(args.stage, config)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except DataIntegrityError as exc:
        print("input error: %s" % exc, file=sys.stderr)
        return 2
    except (NumericalError, NewtonError) as exc:
        print("numerical failure in stage '%s': %s" % (args.stage, exc),
              file=sys.stderr)
        return 3
    print("stage '%s' complete -> %s" % (args.stage,
                                         os.path.join(config.out_dir, args.stage)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
