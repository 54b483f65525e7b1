"""Experiment configuration and the simulate, fit, rollout and score pipeline.

Configs are INI files. A milling run is preprocessed the same way every
time: discard the warm-up, shift the window into the periodic box,
interpolate to a finer time step and subsample agents.
"""

from __future__ import annotations

import configparser
import json
import math
import os
import platform
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from swarmdmd import __version__
from swarmdmd import metrics as M
from swarmdmd.dmd import DEFAULT_RANK, InteractionModel, estimate_K, training_residual
from swarmdmd.io import load_trajectory, save_model, save_rollouts, save_trajectory
from swarmdmd.observables import DEFAULT_LAYOUTS, FeatureLayout, SnapshotMatrices, assemble_matrices
from swarmdmd.rollout import RolloutConfig, RolloutResult, elapsed_average, run_rollout
from swarmdmd.sim import MILLING, STANDARD, SimDomain, rewrap_window, simulate
from swarmdmd.trajectory import (
    SwarmParams,
    SwarmTrajectory,
    interpolate_trajectory,
    subsample_agents,
    validate_trajectory,
)

SCENARIOS = (STANDARD, MILLING)


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    """Failure inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class DensityConfig:
    bins: int = 21
    half_width_factor: float = 2.0
    width: float | None = None

    def spec(self, radius: float) -> M.GridSpec:
        return M.GridSpec.for_radius(radius, self.bins, self.half_width_factor, self.width)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    params: SwarmParams
    domain: SimDomain
    dynamics: str = "standard"
    layout: tuple[str, ...] | None = None
    rank: int | float | None = DEFAULT_RANK
    train_duration: float = 5.0
    predict_duration: float = 5.0
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    output_dir: str = "out"
    threshold: float = 1e-1
    name: str = ""
    warm_up: float = 0.0
    velocity_scheme: str = "forward"
    interp_dt: float | None = None
    subsample_n: int | None = None
    subsample_seed: int | None = None
    trajectory: str | None = None
    density: DensityConfig = field(default_factory=DensityConfig)
    centered_angular_momentum: bool = False
    save_model: bool = False

    def __post_init__(self):
        problems = []
        if self.scenario not in SCENARIOS:
            problems.append(f"unknown scenario {self.scenario!r}")
        if self.dynamics not in DEFAULT_LAYOUTS:
            problems.append(f"unknown dynamics {self.dynamics!r}")
        if self.layout is not None:
            try:
                FeatureLayout.parse(self.layout, 1)
            except ValueError as exc:
                problems.append(str(exc))
        if not self.train_duration > 0:
            problems.append("train_duration must be > 0")
        if self.predict_duration < 0:
            problems.append("predict_duration must be >= 0")
        if self.warm_up < 0:
            problems.append("warm_up must be >= 0")
        if not self.threshold > 0:
            problems.append("threshold must be > 0")
        if self.velocity_scheme not in ("forward", "backward"):
            problems.append(f"unknown velocity_scheme {self.velocity_scheme!r}")
        if self.interp_dt is not None and not self.interp_dt > 0:
            problems.append("interp_dt must be > 0")
        if self.subsample_n is not None and not 1 <= self.subsample_n <= self.params.n_agents:
            problems.append("subsample_n must lie in [1, n_agents]")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.scenario == MILLING:
            return "milling"
        return f"r={self.params.radius:g} eta={self.params.noise:.4g}"

    @property
    def seed(self) -> int:
        return self.params.seed

    @property
    def sample_dt(self) -> float:
        return self.interp_dt or self.params.dt

    def layout_for(self, n_agents: int) -> FeatureLayout:
        names = self.layout if self.layout is not None else DEFAULT_LAYOUTS[self.dynamics]
        return FeatureLayout.parse(names, n_agents)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, params=replace(self.params, seed=seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layout"] = list(self.layout_for(1).names)
        d["rank"] = "full" if self.rank is None else self.rank
        return d


def default_config(scenario: str = STANDARD, **kw) -> ExperimentConfig:
    """Scenario preset; keyword arguments override any field."""
    if scenario == STANDARD:
        params = kw.pop("params", None) or SwarmParams.standard()
        base = dict(domain=SimDomain.for_params(params), warm_up=2.0)
    elif scenario == MILLING:
        params = kw.pop("params", None) or SwarmParams.milling()
        base = dict(
            domain=SimDomain.for_params(params, boundary="periodic"),
            warm_up=300.0,
            interp_dt=0.1,
            subsample_n=200,
        )
    else:
        raise ConfigError(f"unknown scenario {scenario!r}")
    base.update(kw)
    return ExperimentConfig(scenario=scenario, params=params, **base)


# -- INI parsing ---------------------------------------------------------

_PARAM_KEYS = {
    "n_agents": int,
    "dt": float,
    "density": float,
    "radius": float,
    "noise": float,
    "speed": float,
    "fov": float,
    "max_turn_rate": float,
    "seed": int,
}


def _num(text: str) -> float:
    """Float, also accepting ``pi`` expressions such as ``pi/12`` or ``0.5*pi``."""
    t = text.strip().lower().replace(" ", "")
    if "pi" not in t:
        return float(t)
    num, _, den = t.partition("/")
    coef = num.replace("*pi", "").replace("pi*", "").replace("pi", "") or "1"
    val = float(coef) * math.pi
    return val / float(den) if den else val


def _opt(text: str | None, conv):
    if text is None or text.strip().lower() in ("", "none"):
        return None
    return conv(text)


def _rank(text: str):
    t = text.strip().lower()
    if t in ("full", "none"):
        return None
    if "." in t or "e" in t:
        v = float(t)
        return int(v) if v >= 1 and v.is_integer() else v
    return int(t)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t not in ("1", "true", "yes", "on", "0", "false", "no", "off"):
        raise ValueError(f"not a boolean: {text!r}")
    return t in ("1", "true", "yes", "on")


def _int_num(text: str) -> int:
    return int(text.strip())


def config_from_parser(cp: configparser.ConfigParser, base_dir: Path | None = None) -> ExperimentConfig:
    exp = cp["experiment"] if cp.has_section("experiment") else {}
    scenario = exp.get("scenario", STANDARD).strip()
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")

    kw = {}
    if cp.has_section("params"):
        for key, val in cp["params"].items():
            if key not in _PARAM_KEYS:
                raise ConfigError(f"[params] unknown key {key!r}")
            conv = _PARAM_KEYS[key]
            kw[key] = _opt(val, _int_num if conv is int else _num)
    preset = SwarmParams.milling if scenario == MILLING else SwarmParams.standard
    seed = kw.pop("seed", None) or 0
    try:
        if scenario == MILLING:
            params = preset(seed=seed, **kw)
        else:
            params = preset(
                radius=kw.pop("radius", 0.05), noise=kw.pop("noise", 0.0), seed=seed, **kw
            )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[params] {exc}") from None

    fields = {}
    if cp.has_section("domain"):
        dom = cp["domain"]
        for key in dom:
            if key not in ("init_width", "sim_width", "boundary"):
                raise ConfigError(f"[domain] unknown key {key!r}")
        boundary = dom.get("boundary", "periodic" if scenario == MILLING else "open").strip()
        try:
            d = SimDomain.for_params(params, _opt(dom.get("sim_width"), _num), boundary)
            init = _opt(dom.get("init_width"), _num)
            fields["domain"] = d if init is None else replace(d, init_width=init)
        except ValueError as exc:
            raise ConfigError(f"[domain] {exc}") from None

    conv = {
        "dynamics": str.strip,
        "layout": lambda s: tuple(x for x in s.replace(",", " ").split() if x) or None,
        "rank": _rank,
        "train_duration": _num,
        "predict_duration": _num,
        "output_dir": str.strip,
        "threshold": _num,
        "name": str.strip,
        "warm_up": _num,
        "velocity_scheme": str.strip,
        "trajectory": str.strip,
        "centered_angular_momentum": _bool,
        "save_model": _bool,
    }
    for key, val in exp.items():
        if key == "scenario":
            continue
        if key not in conv:
            raise ConfigError(f"[experiment] unknown key {key!r}")
        try:
            fields[key] = conv[key](val) if val.strip() else None
        except ValueError as exc:
            raise ConfigError(f"[experiment] {key}: {exc}") from None
    if fields.get("trajectory") and base_dir is not None:
        fields["trajectory"] = str((base_dir / fields["trajectory"]).resolve())

    if cp.has_section("preprocess"):
        pre = cp["preprocess"]
        for key in pre:
            if key not in ("interp_dt", "subsample_n", "subsample_seed"):
                raise ConfigError(f"[preprocess] unknown key {key!r}")
        if "interp_dt" in pre:
            fields["interp_dt"] = _opt(pre["interp_dt"], _num)
        if "subsample_n" in pre:
            fields["subsample_n"] = _opt(pre["subsample_n"], _int_num)
        if "subsample_seed" in pre:
            fields["subsample_seed"] = _opt(pre["subsample_seed"], _int_num)

    if cp.has_section("rollout"):
        ro = cp["rollout"]
        try:
            fields["rollout"] = RolloutConfig(
                mode=ro.get("mode", "basic").strip(),
                reinit_period=_num(ro.get("reinit_period", "0.5")),
                reinit_horizon=_num(ro.get("reinit_horizon", "10")),
            )
        except ValueError as exc:
            raise ConfigError(f"[rollout] {exc}") from None

    if cp.has_section("density"):
        den = cp["density"]
        fields["density"] = DensityConfig(
            bins=int(den.get("bins", "21")),
            half_width_factor=_num(den.get("half_width_factor", "2")),
            width=_opt(den.get("width"), _num),
        )

    fields = {k: v for k, v in fields.items() if v is not None or k in ("layout", "rank", "trajectory")}
    try:
        return default_config(scenario, params=params, **fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    """Read an experiment INI file, or the ``config`` block of a run manifest."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if path.suffix == ".json":
        try:
            return config_from_dict(json.loads(text)["config"])
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: not a run manifest ({exc})") from None
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return config_from_parser(cp, path.parent)


def config_from_dict(d: dict) -> ExperimentConfig:
    try:
        params = SwarmParams(**d["params"])
        domain = SimDomain(**d["domain"])
        rollout = RolloutConfig(**d["rollout"])
        density = DensityConfig(**d["density"])
        rank = None if d["rank"] == "full" else d["rank"]
        rest = {
            k: v
            for k, v in d.items()
            if k not in ("params", "domain", "rollout", "density", "rank", "layout", "scenario")
        }
        return ExperimentConfig(
            scenario=d["scenario"],
            params=params,
            domain=domain,
            rollout=rollout,
            density=density,
            rank=rank,
            layout=tuple(d["layout"]),
            **rest,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config block: {exc}") from None


# -- pipeline --------------------------------------------------------------


def ground_truth(config: ExperimentConfig) -> SwarmTrajectory:
    """Simulated (or loaded) and preprocessed trajectory, re-timed to start at 0."""
    horizon = config.train_duration + config.predict_duration
    if config.rollout.mode == "reinit":
        # the last restarts propagate past the scored horizon
        horizon += config.rollout.reinit_horizon
    if config.trajectory:
        raw = load_trajectory(config.trajectory)
        validate_trajectory(raw).raise_if_invalid()
    else:
        raw = simulate(config.params, config.domain, config.scenario, config.warm_up + horizon)
    start = raw.index_of(raw.snapshots[0].time + config.warm_up)
    stop = raw.index_of(raw.snapshots[0].time + config.warm_up + horizon)
    traj = raw.window(start, stop + 1).shifted(0.0)
    if config.domain.box is not None and not config.trajectory:
        traj = rewrap_window(traj, config.domain.box)
    if config.interp_dt is not None and not math.isclose(config.interp_dt, traj.dt, rel_tol=1e-9):
        traj = interpolate_trajectory(traj, config.interp_dt)
    if config.subsample_n is not None and config.subsample_n < traj.agent_count:
        seed = config.seed if config.subsample_seed is None else config.subsample_seed
        traj = subsample_agents(traj, config.subsample_n, seed)
    return traj


def fit_model(config: ExperimentConfig, train: SwarmTrajectory) -> tuple[InteractionModel, SnapshotMatrices]:
    layout = config.layout_for(train.agent_count)
    mats = assemble_matrices(train, layout, config.velocity_scheme)
    return estimate_K(mats, config.rank, config.dynamics), mats


def error_series(truth: SwarmTrajectory, pred: SwarmTrajectory, centered: bool = False) -> dict[str, M.MetricSeries]:
    """The four error series of ``pred`` against the matching part of ``truth``.

    A prediction running past the end of ``truth`` is scored on the overlap.
    """
    start = truth.index_of(pred.snapshots[0].time)
    n = min(pred.n_steps, truth.n_steps - start)
    gt = truth.window(start, start + n)
    if n < pred.n_steps:
        pred = pred.window(0, n)
    return {
        "x": M.position_error(gt, pred),
        "theta": M.heading_error(gt, pred),
        "P": M.common_error_series(M.polarisation_series(gt), M.polarisation_series(pred)),
        "M": M.common_error_series(
            M.angular_momentum_series(gt, centered), M.angular_momentum_series(pred, centered)
        ),
    }


def summarize_basic(series: M.MetricSeries, train_end: float, threshold: float, diverged_at: float | None) -> M.Summary:
    s = M.summarize(series, train_end, threshold)
    if diverged_at is not None and math.isinf(s.time_below):
        # a non-finite prediction counts as exceeding every threshold
        s = M.Summary(s.train_mean, max(diverged_at - train_end, 0.0))
    return s


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    truth: SwarmTrajectory
    model: InteractionModel
    rollouts: RolloutResult
    series: dict
    summaries: dict
    grids: dict
    residual: float
    files: list = field(default_factory=list)

    @property
    def row(self) -> M.SummaryRow:
        return M.SummaryRow(self.config.label, self.summaries)


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ExperimentError:
        raise
    except Exception as exc:  # attribute any failure to its stage
        raise ExperimentError(name, exc) from exc


def score(config: ExperimentConfig, truth: SwarmTrajectory, result: RolloutResult) -> tuple[dict, dict]:
    """Error series and summaries for a rollout result."""
    centered = config.centered_angular_momentum
    if result.mode == "basic":
        pred = result.trajectories[0]
        series = error_series(truth, pred, centered)
        summaries = {
            k: summarize_basic(s, config.train_duration, config.threshold, pred.diverged_at)
            for k, s in series.items()
        }
        return series, summaries
    per = [error_series(truth, p, centered) for p in result.trajectories]
    series = {}
    summaries = {}
    for k in M.METRICS:
        vals = elapsed_average([s[k].values for s in per])
        elapsed = np.arange(vals.size) * truth.dt
        series[k] = M.MetricSeries(elapsed, vals, k)
        # reinit: mean over the horizon, time below measured from each restart
        summaries[k] = M.Summary(
            float(np.mean(vals)) if vals.size else math.nan,
            M.summarize(series[k], 0.0, config.threshold).time_below,
        )
    return series, summaries


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """Simulate, preprocess, fit, roll out and score one configuration."""
    truth = _stage("simulate", ground_truth, config)
    n_train = _stage("preprocess", truth.index_of, config.train_duration)
    train = truth.window(0, n_train + 1)
    model, mats = _stage("fit", fit_model, config, train)
    residual = training_residual(model, mats)
    ro = replace(config.rollout, duration=config.train_duration + config.predict_duration)
    result = _stage("rollout", run_rollout, model, truth, ro, train, config.velocity_scheme)
    series, summaries = _stage("score", score, config, truth, result)
    grids = _stage("score", density_grids, config, train, result)
    report = ExperimentReport(config, truth, model, result, series, summaries, grids, residual)
    if write:
        _stage("write", write_outputs, report)
    return report


def density_grids(config: ExperimentConfig, train: SwarmTrajectory, result: RolloutResult) -> dict:
    spec = config.density.spec(config.params.radius)
    window = (0.0, config.train_duration)
    box = config.domain.box
    out = {}
    for frame in ("world", "heading"):
        out[f"truth_{frame}"] = M.neighbor_density(train, window, spec, frame, box)
        if result.mode == "basic":
            out[f"pred_{frame}"] = M.neighbor_density(result.trajectories[0], window, spec, frame, box)
    return out


def write_outputs(report: ExperimentReport) -> list[Path]:
    cfg = report.config
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []

    def add(name):
        files.append(out / name)
        return out / name

    save_trajectory(report.truth, add("truth.csv"))
    if cfg.save_model:
        # K for 200 milling agents is ~400 MB of text, so this is opt-in
        save_model(report.model, add("model.txt"))
    files.extend(save_rollouts(report.rollouts.trajectories, out / "rollouts"))
    files.append(out / "rollouts" / "index.csv")
    for k, s in report.series.items():
        M.write_series_csv(s, add(f"series_{k}.csv"))
    for k, g in report.grids.items():
        M.write_grid_csv(g, add(f"density_{k}.csv"))
    rows = [report.row]
    add("summary.txt").write_text(M.format_table(rows), encoding="utf-8")
    M.write_table_csv(rows, add("summary.csv"))
    plot_series(report.series, add("errors.svg"), cfg.train_duration if cfg.rollout.mode == "basic" else None)
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": versions(),
        "training_residual": report.residual,
        "model_rank": report.model.rank,
        "outputs": sorted([str(p.relative_to(out)) for p in files] + ["manifest.json"]),
    }
    add("manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    report.files = files
    return files


def versions() -> dict:
    import matplotlib
    import scipy

    return {
        "swarmdmd": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


_PLOT_LOCK = threading.Lock()


def plot_series(series: dict, path, train_end: float | None = None) -> None:
    """Error against time on a log scale, one panel per metric."""
    import matplotlib
    from matplotlib.figure import Figure

    titles = {"x": "position", "theta": "heading", "P": "polarisation", "M": "angular momentum"}
    # rc_context touches global state, so suite threads plot one at a time
    with _PLOT_LOCK, matplotlib.rc_context({"svg.hashsalt": "swarmdmd", "svg.fonttype": "none"}):
        fig = Figure(figsize=(9, 6))
        axes = fig.subplots(2, 2, sharex=True)
        for ax, (k, s) in zip(axes.flat, series.items()):
            v = np.where(s.values > 0, s.values, np.nan)
            ax.semilogy(s.times, v, lw=1.2)
            if train_end is not None:
                ax.axvline(train_end, color="0.5", ls="--", lw=0.8)
            ax.set_title(f"{titles.get(k, k)} error")
        for ax in axes[-1]:
            ax.set_xlabel("time [s]")
        fig.subplots_adjust(left=0.08, right=0.98, bottom=0.09, top=0.94, hspace=0.3, wspace=0.25)
        fig.savefig(path, format="svg", metadata={"Date": None})


# -- suites ----------------------------------------------------------------


@dataclass
class SuiteResult:
    rows: list
    reports: list
    failures: int

    @property
    def table(self) -> str:
        return M.format_table(self.rows)


def load_suite(path) -> tuple[list[ExperimentConfig], Path | None]:
    """``[suite]`` section with ``experiments`` (paths, relative to the file) and optional ``output_dir``."""
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except (OSError, configparser.Error) as exc:
        raise ConfigError(str(exc)) from None
    if not cp.has_section("suite") or "experiments" not in cp["suite"]:
        raise ConfigError(f"{path}: needs a [suite] section with an 'experiments' key")
    names = cp["suite"]["experiments"].split()
    if not names:
        raise ConfigError(f"{path}: suite lists no experiments")
    configs = [load_config(path.parent / n) for n in names]
    out = cp["suite"].get("output_dir")
    return configs, (path.parent / out.strip()) if out else None


def suite_threads() -> int:
    try:
        n = int(os.environ.get("SWARMDMD_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def run_suite(configs: list[ExperimentConfig], output_dir=None, threads: int | None = None) -> SuiteResult:
    """Run experiments (concurrently) and merge their summary rows in input order.

    Each experiment writes into its own subdirectory of ``output_dir`` when
    one is given. Failures become annotated rows; the suite carries on.
    """
    if not configs:
        raise ConfigError("a suite needs at least one experiment")
    if output_dir is not None:
        out = Path(output_dir)
        configs = [replace(c, output_dir=str(out / _slug(c.label, i))) for i, c in enumerate(configs)]

    def one(cfg):
        try:
            return run_experiment(cfg)
        except Exception as exc:
            return exc

    with ThreadPoolExecutor(max_workers=threads or suite_threads()) as pool:
        results = list(pool.map(one, configs))
    rows, reports, failures = [], [], 0
    for cfg, res in zip(configs, results):
        if isinstance(res, Exception):
            rows.append(M.SummaryRow(cfg.label, {}, failure=str(res)))
            failures += 1
        else:
            rows.append(res.row)
            reports.append(res)
    if output_dir is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.txt").write_text(M.format_table(rows), encoding="utf-8")
        M.write_table_csv(rows, out / "table.csv")
    return SuiteResult(rows, reports, failures)


def _slug(label: str, index: int) -> str:
    keep = "".join(c if c.isalnum() or c in ".-" else "_" for c in label)
    return f"{index:02d}_{keep}"
