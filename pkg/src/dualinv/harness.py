"""Experiment orchestration: dataset synthesis with known ideal noise,
method execution, ablation sweeps, persistence, and plot emission.

The default experiment separates two roles that a single network plays
at full scale. A Gaussian-mixture oracle defines the generative process:
it synthesizes every instance (ideal noise -> source latent under a
class label) and replays that process when reconstruction quality is
scored. A small trained network is the practical noise predictor the
inversion methods must work with; its prediction error plays the role
of the coarsely grounded estimate that the reference correction is
designed to compensate. Scoring reconstructions under the generative
process keeps the reconstruction gap informative: replaying an
inversion's own predictor rewards self-consistency alone, and any
converged fixed-point method then reconstructs exactly regardless of
how far its recovered noise is from the ideal one.

All outputs are deterministic in (seed, config): per-instance random
streams are derived from (seed, instance index), floats are written
with explicit formats, and wall-times stay out of persisted artifacts
(they go to an uncovered sidecar file).
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .denoiser import (GaussianMixtureDenoiser, MlpDenoiser, NULL,
                       Conditioning, label_cond, load_mlp_denoiser,
                       train_mlp_denoiser)
from .errors import ParameterError, DualinvError
from .inversion import (InversionConfig, InversionReport, dci_invert,
                        ddim_invert, extract_reference, picard_invert,
                        reconstruct)
from .latent import Latent
from .metrics import noise_gap, psnr, recon_error, ssim
from .schedule import (DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T,
                       NoiseSchedule, ddim_invert_step_naive, ddim_step,
                       make_linear_schedule)

METHODS = ("ddim", "picard", "spd", "dci")
SWEEP_PARAMS = ("eta", "lam", "K")
SEED_ENV_VAR = "DUALINV_SEED"
CSV_COLUMNS = ("instance", "method", "config_hash", "d_noi", "d_rec",
               "psnr", "ssim", "iterations", "seed")
FLOAT_FMT = ".12g"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    """Mixture definition and instance count for synthesis.

    ``image_shape`` set means latents are single-channel patches and the
    structural-similarity score is reported; otherwise latents are flat
    vectors of length ``dim``.
    """
    instances: int = 100
    dim: int = 64
    image_shape: tuple = (8, 8)
    components: int = 4
    n_labels: int = 2
    means_norm: float = 6.0
    sigma0: float = 0.8
    mixture_seed: int = 7

    def __post_init__(self):
        if self.instances < 1:
            raise ParameterError(f"instances must be >= 1, got {self.instances}")
        if self.components < 1 or self.n_labels < 1:
            raise ParameterError("components and n_labels must be >= 1")
        if self.components % self.n_labels != 0:
            raise ParameterError("components must divide evenly across labels")
        if self.sigma0 <= 0.0 or self.means_norm < 0.0:
            raise ParameterError("sigma0 must be > 0 and means_norm >= 0")
        if self.image_shape is not None:
            object.__setattr__(self, "image_shape", tuple(self.image_shape))
            if int(np.prod(self.image_shape)) != self.dim:
                raise ParameterError(
                    f"image_shape {self.image_shape} inconsistent with dim {self.dim}")

    @property
    def latent_shape(self) -> tuple:
        return self.image_shape if self.image_shape is not None else (self.dim,)


@dataclass(frozen=True)
class TrainSpec:
    """How the small network predictor is fitted before inversion."""
    samples: int = 200
    data_seed: int = 21
    epochs: int = 10
    learning_rate: float = 5e-3
    train_seed: int = 3
    hidden: tuple = (32,)

    def __post_init__(self):
        if self.samples < 1 or self.epochs < 1:
            raise ParameterError("samples and epochs must be >= 1")
        if self.learning_rate <= 0.0:
            raise ParameterError("learning_rate must be > 0")
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 11
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    denoiser: str = "mlp:train"  # "gm-oracle" | "mlp:train" | "mlp:<path>"
    methods: tuple = METHODS
    inversion: InversionConfig = field(default_factory=InversionConfig)
    train: TrainSpec = field(default_factory=TrainSpec)
    picard_K: int = 10
    picard_delta: float = 1e-10
    sweep_param: str = None
    sweep_values: tuple = ()
    output_dir: str = "results"

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        for m in self.methods:
            if m not in METHODS:
                raise ParameterError(f"unknown method '{m}'")
        if not (self.denoiser == "gm-oracle" or self.denoiser.startswith("mlp:")):
            raise ParameterError(f"unknown denoiser choice '{self.denoiser}'")
        if self.sweep_param is not None:
            if self.sweep_param not in SWEEP_PARAMS:
                raise ParameterError(f"sweep parameter must be one of {SWEEP_PARAMS}")
            if not self.sweep_values:
                raise ParameterError("sweep_values must be nonempty when sweeping")
        if self.picard_K < 1 or self.picard_delta <= 0.0:
            raise ParameterError("picard_K must be >= 1 and picard_delta > 0")

    def config_hash(self) -> str:
        """Stable digest of everything that affects the numbers.

        The output directory is deliberately excluded; two runs of the
        same science into different directories share a hash.
        """
        payload = _config_to_mapping(self)
        payload.pop("output_dir", None)
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _config_to_mapping(config: ExperimentConfig) -> dict:
    d = config.dataset
    t = config.train
    inv = config.inversion
    return {
        "seed": config.seed,
        "dataset.instances": d.instances,
        "dataset.dim": d.dim,
        "dataset.image_shape": list(d.image_shape) if d.image_shape else None,
        "dataset.components": d.components,
        "dataset.n_labels": d.n_labels,
        "dataset.means_norm": d.means_norm,
        "dataset.sigma0": d.sigma0,
        "dataset.mixture_seed": d.mixture_seed,
        "schedule.T": config.T,
        "schedule.beta_start": config.beta_start,
        "schedule.beta_end": config.beta_end,
        "denoiser": config.denoiser,
        "methods": list(config.methods),
        "inversion.K": inv.K,
        "inversion.lam": inv.lam,
        "inversion.eta": inv.eta,
        "inversion.delta": inv.delta,
        "inversion.cfg_scale": inv.cfg_scale,
        "inversion.carry_forward": inv.carry_forward,
        "inversion.corrected_fix": inv.corrected_fix,
        "inversion.reference_mode": inv.reference_mode,
        "train.samples": t.samples,
        "train.data_seed": t.data_seed,
        "train.epochs": t.epochs,
        "train.learning_rate": t.learning_rate,
        "train.train_seed": t.train_seed,
        "train.hidden": list(t.hidden),
        "picard.K": config.picard_K,
        "picard.delta": config.picard_delta,
        "sweep.param": config.sweep_param,
        "sweep.values": list(config.sweep_values),
        "output_dir": config.output_dir,
    }


# -- flat dotted-key config files -------------------------------------------

def parse_config_file(path) -> dict:
    """Flat ``section.key = value`` text; '#' starts a comment."""
    mapping = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
    return mapping


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ParameterError(f"expected a boolean, got '{s}'")


def _parse_tuple(s: str, cast):
    return tuple(cast(part) for part in s.split(",") if part.strip() != "")


# every recognized key with its parser and its (section, field) target
_CONFIG_KEYS = {
    "seed": ("seed", int),
    "denoiser": ("denoiser", str),
    "methods": ("methods", lambda s: _parse_tuple(s, str)),
    "output_dir": ("output_dir", str),
    "schedule.T": ("T", int),
    "schedule.beta_start": ("beta_start", float),
    "schedule.beta_end": ("beta_end", float),
    "picard.K": ("picard_K", int),
    "picard.delta": ("picard_delta", float),
    "sweep.param": ("sweep_param", str),
    "sweep.values": ("sweep_values", lambda s: _parse_tuple(s, float)),
}
_DATASET_KEYS = {
    "dataset.instances": ("instances", int),
    "dataset.dim": ("dim", int),
    "dataset.image_shape": ("image_shape",
                            lambda s: None if s == "none" else _parse_tuple(s, int)),
    "dataset.components": ("components", int),
    "dataset.n_labels": ("n_labels", int),
    "dataset.means_norm": ("means_norm", float),
    "dataset.sigma0": ("sigma0", float),
    "dataset.mixture_seed": ("mixture_seed", int),
}
_INVERSION_KEYS = {
    "inversion.K": ("K", int),
    "inversion.lam": ("lam", float),
    "inversion.eta": ("eta", float),
    "inversion.delta": ("delta", float),
    "inversion.cfg_scale": ("cfg_scale", float),
    "inversion.carry_forward": ("carry_forward", _parse_bool),
    "inversion.corrected_fix": ("corrected_fix", _parse_bool),
    "inversion.reference_mode": ("reference_mode", str),
}
_TRAIN_KEYS = {
    "train.samples": ("samples", int),
    "train.data_seed": ("data_seed", int),
    "train.epochs": ("epochs", int),
    "train.learning_rate": ("learning_rate", float),
    "train.train_seed": ("train_seed", int),
    "train.hidden": ("hidden", lambda s: _parse_tuple(s, int)),
}


def config_from_mapping(mapping: dict, env: dict = None) -> ExperimentConfig:
    """Build a config from flat dotted keys.

    Precedence: explicit keys beat the environment base seed, which
    beats the built-in default.
    """
    env = os.environ if env is None else env
    top, ds, inv, tr = {}, {}, {}, {}
    for key, raw in mapping.items():
        value = raw if not isinstance(raw, str) else raw
        if key in _CONFIG_KEYS:
            name, cast = _CONFIG_KEYS[key]
            top[name] = cast(value) if isinstance(value, str) else value
        elif key in _DATASET_KEYS:
            name, cast = _DATASET_KEYS[key]
            ds[name] = cast(value) if isinstance(value, str) else value
        elif key in _INVERSION_KEYS:
            name, cast = _INVERSION_KEYS[key]
            inv[name] = cast(value) if isinstance(value, str) else value
        elif key in _TRAIN_KEYS:
            name, cast = _TRAIN_KEYS[key]
            tr[name] = cast(value) if isinstance(value, str) else value
        else:
            raise ParameterError(f"unknown config key '{key}'")
    if "seed" not in top and SEED_ENV_VAR in env:
        top["seed"] = int(env[SEED_ENV_VAR])
    return ExperimentConfig(dataset=DatasetSpec(**ds),
                            inversion=InversionConfig(**inv),
                            train=TrainSpec(**tr), **top)


def load_config(path=None, overrides: dict = None, env: dict = None) -> ExperimentConfig:
    """Config file plus CLI overrides (override keys win)."""
    mapping = parse_config_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            mapping[key] = value
    return config_from_mapping(mapping, env=env)


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Instance:
    """One synthesized problem: ideal noise, source latent, conditioning,
    and the exact per-step noise predictions used during generation
    (indexed so eps_trace[T - t] is the prediction consumed at step t)."""
    index: int
    z_T_star: Latent
    z_0: Latent
    c: Conditioning
    eps_trace: tuple


def make_mixture(spec: DatasetSpec, schedule: NoiseSchedule) -> GaussianMixtureDenoiser:
    """The generative oracle: seeded component means on a sphere of the
    configured radius, labels assigned in contiguous blocks."""
    rng = np.random.default_rng(spec.mixture_seed)
    raw = rng.standard_normal((spec.components, spec.dim))
    means = spec.means_norm * raw / np.linalg.norm(raw, axis=1, keepdims=True)
    per_label = spec.components // spec.n_labels
    labels = np.repeat(np.arange(spec.n_labels), per_label)
    weights = np.full(spec.components, 1.0 / spec.components)
    return GaussianMixtureDenoiser(schedule, weights, means, spec.sigma0,
                                   labels=labels)


def _generate(z_T: Latent, schedule: NoiseSchedule, denoiser,
              c: Conditioning):
    """Deterministic sampling that also records every noise prediction."""
    z = z_T
    trace = []
    for t in range(schedule.T, 0, -1):
        eps = denoiser.predict(z, t, c)
        trace.append(eps)
        z = ddim_step(z, eps, schedule, t)
    return z, tuple(trace)


def renoise_with_trace(z_0: Latent, schedule: NoiseSchedule,
                       eps_trace) -> Latent:
    """Exact inversion replaying recorded noise; the shared-noise
    round-trip oracle used by the synthesis self-check."""
    z = z_0
    for t in range(1, schedule.T + 1):
        z = ddim_invert_step_naive(z, eps_trace[schedule.T - t], schedule, t)
    return z


def synth_dataset(spec: DatasetSpec, schedule: NoiseSchedule, denoiser,
                  seed: int):
    """Instances with known ideal noise, deterministic per seed.

    Each instance draws its ideal noise from a stream derived from
    (seed, index), so instance i is the same regardless of how many
    instances are requested or in what order they are consumed.
    """
    instances = []
    for idx in range(spec.instances):
        rng = np.random.default_rng([seed, idx])
        z_T_star = Latent(rng.standard_normal(spec.dim).reshape(spec.latent_shape))
        c = label_cond(idx % spec.n_labels)
        z_0, trace = _generate(z_T_star, schedule, denoiser, c)
        instances.append(Instance(index=idx, z_T_star=z_T_star, z_0=z_0,
                                  c=c, eps_trace=trace))
    return instances


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    instance: int
    method: str
    config_hash: str
    d_noi: float
    d_rec: float
    psnr: float
    ssim: float  # None for flat (non-image) latents
    iterations: int
    seed: int


def resolve_denoiser(config: ExperimentConfig, schedule: NoiseSchedule,
                     oracle: GaussianMixtureDenoiser):
    """The predictor the inversion methods see."""
    if config.denoiser == "gm-oracle":
        return oracle
    path = config.denoiser[len("mlp:"):]
    if path == "train":
        return train_predictor(config, schedule, oracle)
    return load_mlp_denoiser(path)


def train_predictor(config: ExperimentConfig, schedule: NoiseSchedule,
                    oracle: GaussianMixtureDenoiser) -> MlpDenoiser:
    """Fit the small network on oracle samples; deterministic."""
    spec = config.train
    n_labels = config.dataset.n_labels
    rng = np.random.default_rng(spec.data_seed)
    dataset = [(Latent(oracle.sample(rng, label=i % n_labels)
                       .reshape(config.dataset.latent_shape)),
                label_cond(i % n_labels))
               for i in range(spec.samples)]
    trained, _ = train_mlp_denoiser(dataset, schedule, epochs=spec.epochs,
                                    learning_rate=spec.learning_rate,
                                    seed=spec.train_seed, hidden=spec.hidden)
    return trained


def run_method(method: str, instance: Instance, schedule: NoiseSchedule,
               predictor, config: ExperimentConfig):
    """One inversion run; returns (z_T, report)."""
    inv = config.inversion
    if method == "ddim":
        return ddim_invert(instance.z_0, schedule, predictor, instance.c,
                           inv.cfg_scale)
    if method == "picard":
        return picard_invert(instance.z_0, schedule, predictor, instance.c,
                             K=config.picard_K, delta=config.picard_delta,
                             cfg_scale=inv.cfg_scale)
    if method in ("spd", "dci"):
        cfg = replace(inv, lam=0.0) if method == "spd" else inv
        ground_truth = instance.z_T_star if cfg.reference_mode == "oracle" else None
        ref = extract_reference(instance.z_0, cfg.reference_mode, ground_truth)
        z_T, report = dci_invert(instance.z_0, schedule, predictor,
                                 instance.c, cfg, ref)
        report.method = method
        return z_T, report
    raise ParameterError(f"unknown method '{method}'")


def score_run(instance: Instance, z_T: Latent, schedule: NoiseSchedule,
              oracle, config: ExperimentConfig, report: InversionReport) -> ResultRow:
    """Metrics for one run; reconstruction replays the generative process."""
    z_hat = reconstruct(z_T, schedule, oracle, instance.c,
                        config.inversion.cfg_scale)
    s = None
    if config.dataset.image_shape is not None:
        s = ssim(instance.z_0, z_hat)
    return ResultRow(instance=instance.index, method=report.method,
                     config_hash=config.config_hash(),
                     d_noi=noise_gap(z_T, instance.z_T_star),
                     d_rec=recon_error(instance.z_0, z_hat),
                     psnr=psnr(instance.z_0, z_hat),
                     ssim=s, iterations=report.total_iterations(),
                     seed=config.seed)


def run_experiment(config: ExperimentConfig, write: bool = True):
    """Every configured method on every instance.

    Returns (rows, summary, errors). When ``write`` is set, persists
    results.csv, summary.json, per-run reports, an errors file, and a
    wall-time sidecar under the output directory. Per-run failures are
    recorded without aborting the remaining runs.
    """
    schedule = make_linear_schedule(config.T, config.beta_start, config.beta_end)
    oracle = make_mixture(config.dataset, schedule)
    predictor = resolve_denoiser(config, schedule, oracle)
    instances = synth_dataset(config.dataset, schedule, oracle, config.seed)

    rows, reports, errors, timings = [], [], [], []
    for instance in instances:
        for method in config.methods:
            start = time.perf_counter()
            try:
                z_T, report = run_method(method, instance, schedule,
                                         predictor, config)
                rows.append(score_run(instance, z_T, schedule, oracle,
                                      config, report))
                reports.append((instance.index, report))
            except DualinvError as exc:
                errors.append(f"{instance.index},{method},{exc}")
            timings.append((instance.index, method,
                            time.perf_counter() - start))
    summary = summarize(rows, config)
    if write:
        _persist(config, rows, summary, reports, errors, timings)
    return rows, summary, errors


def _quartiles(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"median": float(np.median(arr)),
            "q1": float(np.percentile(arr, 25)),
            "q3": float(np.percentile(arr, 75))}


def summarize(rows, config: ExperimentConfig) -> dict:
    """Medians and quartiles per method, with stable key names."""
    per_method = {}
    for method in config.methods:
        sub = [r for r in rows if r.method == method]
        if not sub:
            continue
        entry = {
            "runs": len(sub),
            "d_noi": _quartiles([r.d_noi for r in sub]),
            "d_noi_rms_per_dim": float(np.median(
                [r.d_noi / np.sqrt(config.dataset.dim) for r in sub])),
            "d_rec": _quartiles([r.d_rec for r in sub]),
            "psnr": _quartiles([r.psnr for r in sub]),
            "iterations": _quartiles([r.iterations for r in sub]),
        }
        if config.dataset.image_shape is not None:
            entry["ssim"] = _quartiles([r.ssim for r in sub])
        per_method[method] = entry
    return {"config_hash": config.config_hash(), "seed": config.seed,
            "instances": config.dataset.instances, "methods": per_method}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, FLOAT_FMT)
    return str(value)


def rows_to_csv(rows) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(getattr(r, col)) for col in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def _persist(config, rows, summary, reports, errors, timings):
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "results.csv"), "w", encoding="utf-8") as fh:
        fh.write(rows_to_csv(rows))
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    with open(os.path.join(out, "errors.txt"), "w", encoding="utf-8") as fh:
        fh.write("".join(line + "\n" for line in errors))
    report_dir = os.path.join(out, "reports")
    os.makedirs(report_dir, exist_ok=True)
    for idx, report in reports:
        name = f"{report.method}-{idx:04d}.json"
        with open(os.path.join(report_dir, name), "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    # wall-times are observational, not part of the deterministic contract
    with open(os.path.join(out, "timings.txt"), "w", encoding="utf-8") as fh:
        for idx, method, dt in timings:
            fh.write(f"{idx},{method},{dt:.6f}\n")


# ---------------------------------------------------------------------------
# ablation sweeps
# ---------------------------------------------------------------------------

def run_sweep(config: ExperimentConfig, write: bool = True):
    """One summary row per sweep value; everything else at defaults.

    Sweeps exercise the dual-guided method only: a swept lam of 0 then
    reproduces the fixed-point-only baseline numbers by construction.
    """
    if config.sweep_param is None:
        raise ParameterError("run_sweep requires a sweep parameter")
    table = []
    for value in sorted(config.sweep_values):
        if config.sweep_param == "K":
            inv = replace(config.inversion, K=int(value))
        elif config.sweep_param == "lam":
            inv = replace(config.inversion, lam=float(value))
        else:
            inv = replace(config.inversion, eta=float(value))
        sub = replace(config, inversion=inv, methods=("dci",),
                      sweep_param=None, sweep_values=())
        _, summary, errors = run_experiment(sub, write=False)
        entry = summary["methods"]["dci"]
        table.append({"value": float(value),
                      "median_d_noi": entry["d_noi"]["median"],
                      "median_d_rec": entry["d_rec"]["median"],
                      "median_psnr": entry["psnr"]["median"],
                      "errors": len(errors)})
    if write:
        os.makedirs(config.output_dir, exist_ok=True)
        path = os.path.join(config.output_dir,
                            f"sweep_{config.sweep_param}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("value,median_d_noi,median_d_rec,median_psnr,errors\n")
            for row in table:
                fh.write(",".join(_fmt(row[k]) for k in
                                  ("value", "median_d_noi", "median_d_rec",
                                   "median_psnr", "errors")) + "\n")
    return table


# ---------------------------------------------------------------------------
# editing demo
# ---------------------------------------------------------------------------

def run_edit_demo(trials: int = 100, seed: int = 23,
                  config: InversionConfig = None, dim: int = 16,
                  means_norm: float = 8.0, sigma0: float = 0.5):
    """Condition-swap editing on a two-component labeled mixture.

    Each trial generates under label 0, inverts under label 0, resamples
    under label 1, and checks which component mean the edit landed
    nearer. Returns the success fraction.
    """
    from .inversion import edit_condition_swap

    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    config = config or InversionConfig()
    schedule = make_linear_schedule()
    spec = DatasetSpec(instances=1, dim=dim, image_shape=None, components=2,
                       n_labels=2, means_norm=means_norm, sigma0=sigma0)
    oracle = make_mixture(spec, schedule)
    hits = 0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        z_T_star = Latent(rng.standard_normal(dim))
        z_0, _ = _generate(z_T_star, schedule, oracle, label_cond(0))
        ref = extract_reference(z_0, config.reference_mode,
                                z_T_star if config.reference_mode == "oracle"
                                else None)
        edited, _ = edit_condition_swap(z_0, schedule, oracle, label_cond(0),
                                        label_cond(1), config, ref)
        d_src = float(np.linalg.norm(edited.flat - oracle.means[0]))
        d_tgt = float(np.linalg.norm(edited.flat - oracle.means[1]))
        hits += int(d_tgt < d_src)
    return hits / trials


# ---------------------------------------------------------------------------
# plots (hand-rolled SVG so regeneration is byte-identical)
# ---------------------------------------------------------------------------

_SVG_W, _SVG_H, _SVG_PAD = 640, 400, 50


def _svg_header(title: str) -> list:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" '
            f'height="{_SVG_H}" viewBox="0 0 {_SVG_W} {_SVG_H}">',
            f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
            f'<text x="{_SVG_W // 2}" y="20" text-anchor="middle" '
            f'font-family="monospace" font-size="13">{title}</text>']


def _svg_axes(lines: list, x_label: str, y_label: str):
    x0, y0 = _SVG_PAD, _SVG_H - _SVG_PAD
    x1, y1 = _SVG_W - _SVG_PAD, _SVG_PAD
    lines.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
    lines.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
    lines.append(f'<text x="{(x0 + x1) // 2}" y="{_SVG_H - 12}" '
                 f'text-anchor="middle" font-family="monospace" '
                 f'font-size="11">{x_label}</text>')
    lines.append(f'<text x="14" y="{(y0 + y1) // 2}" text-anchor="middle" '
                 f'font-family="monospace" font-size="11" '
                 f'transform="rotate(-90 14 {(y0 + y1) // 2})">{y_label}</text>')


def _scale(v, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return out_lo + (v - lo) / span * (out_hi - out_lo)


_PLOT_COLORS = ("#1b6ca8", "#c23b22", "#2e8540", "#8e6bbf", "#b8860b")


def trace_plot_svg(title: str, traces: dict) -> str:
    """Line plot of per-timestep final self-consistency losses (log10)."""
    lines = _svg_header(title)
    _svg_axes(lines, "timestep t", "log10 final L_fix")
    points = [np.log10(max(v, 1e-16)) for vs in traces.values() for v in vs]
    lo, hi = (min(points), max(points)) if points else (0.0, 1.0)
    t_max = max((len(vs) for vs in traces.values()), default=1)
    for i, (name, vs) in enumerate(sorted(traces.items())):
        color = _PLOT_COLORS[i % len(_PLOT_COLORS)]
        coords = []
        for t, v in enumerate(vs, 1):
            x = _scale(t, 1, t_max, _SVG_PAD, _SVG_W - _SVG_PAD)
            y = _scale(np.log10(max(v, 1e-16)), lo, hi,
                       _SVG_H - _SVG_PAD, _SVG_PAD)
            coords.append(f"{x:.2f},{y:.2f}")
        lines.append(f'<polyline fill="none" stroke="{color}" '
                     f'points="{" ".join(coords)}"/>')
        lines.append(f'<text x="{_SVG_W - _SVG_PAD + 4}" '
                     f'y="{_SVG_PAD + 16 * (i + 1)}" font-family="monospace" '
                     f'font-size="11" fill="{color}">{name}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def strip_plot_svg(title: str, groups: dict) -> str:
    """Per-method noise-gap distribution as a strip plot; horizontal
    offsets are a deterministic function of the sample index."""
    lines = _svg_header(title)
    _svg_axes(lines, "method", "d_noi")
    all_vals = [v for vs in groups.values() for v in vs]
    lo, hi = (min(all_vals), max(all_vals)) if all_vals else (0.0, 1.0)
    names = sorted(groups)
    for i, name in enumerate(names):
        color = _PLOT_COLORS[i % len(_PLOT_COLORS)]
        cx = _scale(i + 0.5, 0, len(names), _SVG_PAD, _SVG_W - _SVG_PAD)
        for j, v in enumerate(groups[name]):
            jitter = ((j * 37) % 21 - 10)  # fixed pseudo-jitter, no RNG
            y = _scale(v, lo, hi, _SVG_H - _SVG_PAD, _SVG_PAD)
            lines.append(f'<circle cx="{cx + jitter:.2f}" cy="{y:.2f}" '
                         f'r="2" fill="{color}" fill-opacity="0.6"/>')
        lines.append(f'<text x="{cx:.2f}" y="{_SVG_H - _SVG_PAD + 16}" '
                     f'text-anchor="middle" font-family="monospace" '
                     f'font-size="11">{name}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_plots(results_dir) -> list:
    """Vector plots from persisted results; byte-identical on re-run.

    Writes one self-consistency trace plot per method that records the
    loss (taken from instance 0's report) and one noise-gap strip plot
    across methods. Returns the written paths.
    """
    csv_path = os.path.join(results_dir, "results.csv")
    if not os.path.exists(csv_path):
        raise FileNotFoundError(f"no results.csv under {results_dir}")
    with open(csv_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [dict(zip(header, line.strip().split(",")))
                for line in fh if line.strip()]
    written = []
    groups = {}
    config_hash = rows[0]["config_hash"] if rows else "empty"
    for row in rows:
        groups.setdefault(row["method"], []).append(float(row["d_noi"]))
    if groups:
        path = os.path.join(results_dir, "d_noi_strip.svg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(strip_plot_svg(f"noise gap by method [{config_hash}]",
                                    groups))
        written.append(path)
    report_dir = os.path.join(results_dir, "reports")
    if os.path.isdir(report_dir):
        for name in sorted(os.listdir(report_dir)):
            if not name.endswith("-0000.json"):
                continue
            with open(os.path.join(report_dir, name), encoding="utf-8") as fh:
                payload = json.load(fh)
            trace = [rec["l_fix_trace"][-1] for rec in payload["records"]
                     if rec["l_fix_trace"]]
            if not trace:
                continue
            method = payload["method"]
            path = os.path.join(results_dir, f"l_fix_trace_{method}.svg")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(trace_plot_svg(
                    f"final L_fix per timestep, {method} [{config_hash}]",
                    {method: trace}))
            written.append(path)
    return written
