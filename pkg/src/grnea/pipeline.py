"""End-to-end stages: sample, train, calibrate, optimize.

Every stage reads and writes files under the run directory only, so stages
can be run one at a time from the CLI and every reported number traces back
to a persisted artifact::

    <out>/config.json
    <out>/dataset/{manifest.csv, images/case_%05d.png}
    <out>/models/{generator,reducer,surrogates,filter}.ckpt
    <out>/reports/{train_metrics,calibration,run_report}.json, trace.csv
    <out>/reports/timings.json          (wall clock; excluded from determinism)
    <out>/optimum/{generated,verified}.png
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from . import case_filter, lssvr, resvae
from .arpso import INFEASIBLE, ArpsoConfig, Problem, optimize
from .config import ConfigError, PipelineConfig, derive_seed
from .fieldbench import get_benchmark, lhs_sample
from .fieldbench.dataset import check_writable, quantize, read_dataset, save_png, write_dataset
from .metrics import cdr, evaluate_regression, image_metrics

log = logging.getLogger(__name__)

FLOORS = {"generator_psnr": 20.0, "generator_ssim": 0.90, "objective_r2": 0.90, "param_r2_mean": 0.85}
MAX_INFEASIBLE = 0.9


class PipelineError(RuntimeError):
    """A stage ran but its result fails a validation rule (CLI exit code 1)."""


class MissingArtifacts(FileNotFoundError):
    """Inputs of a stage are absent (CLI exit code 2)."""

    def __init__(self, missing):
        self.missing = [str(m) for m in missing]
        super().__init__("missing artifacts:\n" + "\n".join(f"  - {m}" for m in self.missing))


# -- paths and small io helpers ------------------------------------------------------------

class RunPaths:
    def __init__(self, out):
        self.root = Path(out)
        self.config = self.root / "config.json"
        self.dataset = self.root / "dataset"
        self.manifest = self.dataset / "manifest.csv"
        self.models = self.root / "models"
        self.generator = self.models / "generator.ckpt"
        self.reducer = self.models / "reducer.ckpt"
        self.surrogates = self.models / "surrogates.ckpt"
        self.filter = self.models / "filter.ckpt"
        self.reports = self.root / "reports"
        self.train_metrics = self.reports / "train_metrics.json"
        self.calibration = self.reports / "calibration.json"
        self.run_report = self.reports / "run_report.json"
        self.trace = self.reports / "trace.csv"
        self.timings = self.reports / "timings.json"
        self.optimum = self.root / "optimum"

    def require(self, *paths) -> None:
        missing = [p for p in paths if not Path(p).exists()]
        if missing:
            raise MissingArtifacts(missing)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _record_time(paths: RunPaths, stage: str, seconds: float) -> None:
    t = read_json(paths.timings) if paths.timings.exists() else {}
    t[stage] = round(seconds, 3)
    write_json(paths.timings, t)


def _split(cfg: PipelineConfig, n: int):
    tr = np.arange(cfg["n_train"])
    te = np.arange(cfg["n_train"], min(n, cfg["n_train"] + cfg["n_test"]))
    return tr, te


def response_targets(bench) -> list[str]:
    """Responses the objective surrogate models; the objective itself for fiber."""
    return list(bench.response_names)


def objective_from_predictions(bench, preds: dict[str, np.ndarray]) -> np.ndarray:
    keys = list(preds)
    n = len(next(iter(preds.values())))
    return np.array([bench.objective_from_responses({k: preds[k][i] for k in keys}) for i in range(n)])


# -- stages ----------------------------------------------------------------------------------

def cmd_sample(cfg: PipelineConfig) -> Path:
    t0 = time.perf_counter()
    out = check_writable(cfg.out)
    paths = RunPaths(out)
    cfg.save(paths.config)
    bench = get_benchmark(cfg.benchmark)
    params = lhs_sample(bench.bounds, cfg["n_samples"], derive_seed(cfg.seed, "sample"))
    manifest = write_dataset(bench, params, paths.dataset, cfg.resolution)
    _record_time(paths, "sample", time.perf_counter() - t0)
    log.info("wrote %d cases to %s", len(params), paths.dataset)
    return manifest


def _load_split(cfg: PipelineConfig, paths: RunPaths):
    paths.require(paths.manifest)
    bench = get_benchmark(cfg.benchmark)
    ds = read_dataset(paths.dataset, bench.param_names)
    if ds.images.shape[1] != cfg.resolution:
        raise ConfigError(f"dataset images are {ds.images.shape[1]} px, config says {cfg.resolution}")
    tr, te = _split(cfg, len(ds))
    return bench, ds.subset(tr), ds.subset(te)


def _fit_surrogate(features, y, cfg: PipelineConfig, seed: int) -> lssvr.LssvrModel:
    lc = cfg["lssvr"]
    sigmas = lssvr.median_distance(features) * np.asarray(lc["sigma_factors"], dtype=np.float64)
    s, g = lssvr.grid_search(features, y, sigmas, lc["gamma_grid"], lc["k_folds"], seed)
    return lssvr.fit(features, y, s, g)


def cmd_train(cfg: PipelineConfig) -> dict:
    """Train both ResVAEs and all LSSVRs; returns the metric block (also persisted)."""
    t0 = time.perf_counter()
    paths = RunPaths(cfg.out)
    bench, train, test = _load_split(cfg, paths)
    if len(test) < 2:
        raise ConfigError("training metrics need at least two held-out cases (n_test >= 2)")
    paths.models.mkdir(parents=True, exist_ok=True)

    gen = resvae.train(cfg.generator_config(), train.images)
    resvae.save_checkpoint(gen, paths.generator, kind="resvae")
    gen_metrics = image_metrics(test.images, resvae.reconstruct(gen, test.images))

    red = resvae.train(cfg.reducer_config(), train.images)
    resvae.save_checkpoint(red, paths.reducer, kind="resvae")
    red_metrics = image_metrics(test.images, resvae.reconstruct(red, test.images))

    f_train = resvae.extract_features(red, train.images)
    f_test = resvae.extract_features(red, test.images)
    models, surrogate_metrics, preds = {}, {}, {}
    targets = [("response", k, train.responses[k], test.responses[k]) for k in response_targets(bench)]
    targets += [("param", p, train.params[:, j], test.params[:, j]) for j, p in enumerate(bench.param_names)]
    for kind, name, y_tr, y_te in targets:
        key = f"{kind}:{name}"
        m = _fit_surrogate(f_train, y_tr, cfg, derive_seed(cfg.seed, "cv:" + key))
        models[key] = m
        p = m.predict(f_test)
        if kind == "response":
            preds[name] = p
        surrogate_metrics[key] = {**evaluate_regression(y_te, p).as_dict(), "sigma": m.sigma, "gamma": m.gamma}
    lssvr.save_models(paths.surrogates, models)

    obj_pred = objective_from_predictions(bench, preds)
    objective = evaluate_regression(test.responses["objective"], obj_pred).as_dict()
    param_r2 = [surrogate_metrics[f"param:{p}"]["r2"] for p in bench.param_names]
    metrics = {
        "generator": gen_metrics,
        "reducer": red_metrics,
        "generator_history": gen.history,
        "reducer_history": red.history,
        "surrogates": surrogate_metrics,
        "objective": objective,
        "param_r2_mean": float(np.mean(param_r2)),
        "n_train": len(train),
        "n_test": len(test),
    }
    checks = {
        "generator_psnr": gen_metrics["psnr"] >= FLOORS["generator_psnr"],
        "generator_ssim": gen_metrics["ssim"] >= FLOORS["generator_ssim"],
        "objective_r2": objective["r2"] >= FLOORS["objective_r2"],
        "param_r2_mean": metrics["param_r2_mean"] >= FLOORS["param_r2_mean"],
        "reducer_mse_below_generator": red_metrics["mse"] < gen_metrics["mse"],
    }
    metrics["checks"] = checks
    metrics["passed"] = all(checks.values())
    write_json(paths.train_metrics, metrics)
    _record_time(paths, "train", time.perf_counter() - t0)
    if not metrics["passed"]:
        failed = [k for k, ok in checks.items() if not ok]
        raise PipelineError(f"trained models miss their floors: {', '.join(failed)} (see {paths.train_metrics})")
    return metrics


def reference_case(bench, resolution: int) -> np.ndarray:
    """The box-midpoint case, quantized exactly as dataset images are."""
    return quantize(bench.render(bench.midpoint(), resolution)) / 255.0


def cmd_calibrate(cfg: PipelineConfig) -> dict:
    t0 = time.perf_counter()
    paths = RunPaths(cfg.out)
    paths.require(paths.manifest, paths.generator)
    bench, train, test = _load_split(cfg, paths)
    gen = resvae.load_checkpoint(paths.generator, cfg.generator_config())
    fc = cfg["filter"]
    pixels = cfg.resolution ** 2
    base = case_filter.FilterConfig.from_reference_image(
        reference_case(bench, cfg.resolution), threshold=1, s_max=fc["s_max"], v_min=fc["v_min"])
    if fc["threshold"] is None:
        # calibrate on training reconstructions, judge on held-out ones
        c = case_filter.calibrate_threshold(resvae.reconstruct(gen, train.images), base,
                                            fc["quantile"], fc["safety"])
        source = "calibrated"
    else:
        c, source = int(fc["threshold"]), "configured"
    if c > 0.5 * pixels:
        raise PipelineError(f"threshold C = {c} exceeds half the pixel count ({pixels}); the filter would be vacuous")
    filt = case_filter.FilterConfig(base.reference, c, fc["s_max"], fc["v_min"])
    filt.save(paths.filter)

    result = {"threshold": c, "source": source, "pixels": pixels,
              "default_threshold": case_filter.default_threshold(bench.name, cfg.resolution)}
    if len(test):
        rec_noise = case_filter.noise_counts(resvae.reconstruct(gen, test.images), filt)
        rng = np.random.default_rng(derive_seed(cfg.seed, "occlusion"))
        probes = np.stack([case_filter.occlude(im, rng) for im in test.images])
        probe_noise = case_filter.noise_counts(probes, filt)
        result.update(
            heldout_acceptance=float(np.mean(rec_noise <= c)),
            corrupted_rejection=float(np.mean(probe_noise > c)),
            heldout_noise=rec_noise, corrupted_noise=probe_noise,
        )
    write_json(paths.calibration, result)
    _record_time(paths, "calibrate", time.perf_counter() - t0)
    return result


class SurrogateFitness:
    """decode -> filter -> features -> predicted objective, for a batch of latent vectors."""

    def __init__(self, bench, gen, red, filt, models: dict):
        self.bench, self.gen, self.red, self.filt = bench, gen, red, filt
        self.response_models = {k.split(":", 1)[1]: m for k, m in models.items() if k.startswith("response:")}
        self.param_models = [models[f"param:{p}"] for p in bench.param_names]
        self.n_calls = 0
        self.n_infeasible = 0
        self.feasible_objectives: list[float] = []
        self.noise: list[int] = []

    def predict(self, z: np.ndarray):
        """(feasible mask, noise counts, predicted objectives, features) for latent rows."""
        imgs = resvae.decode(self.gen, z)
        if imgs.ndim == 3:
            imgs = imgs[None]
        noise = case_filter.noise_counts(imgs, self.filt)
        ok = noise <= self.filt.threshold
        obj = np.full(len(imgs), np.nan)
        feats = np.full((len(imgs), resvae.FEATURE_DIM), np.nan)
        if ok.any():
            f = resvae.extract_features(self.red, imgs[ok])
            feats[ok] = f
            preds = {k: m.predict(f) for k, m in self.response_models.items()}
            obj[ok] = objective_from_predictions(self.bench, preds)
        return ok, noise, obj, feats

    def __call__(self, z: np.ndarray):
        ok, noise, obj, _ = self.predict(np.atleast_2d(z))
        self.n_calls += len(ok)
        self.n_infeasible += int((~ok).sum())
        self.noise.extend(int(n) for n in noise)
        self.feasible_objectives.extend(float(v) for v in obj[ok])
        return [float(v) if k else INFEASIBLE for v, k in zip(obj, ok)]

    def recover_design(self, feature: np.ndarray) -> np.ndarray:
        alpha = np.array([m.predict(feature) for m in self.param_models])
        return np.clip(alpha, self.bench.bounds[:, 0], self.bench.bounds[:, 1])


def _objective_range(cfg: PipelineConfig, paths: RunPaths):
    bench, train, _ = _load_split(cfg, paths)
    y = train.responses["objective"]
    return bench, float(y.min()), float(y.max())


def cmd_optimize(cfg: PipelineConfig) -> dict:
    t0 = time.perf_counter()
    paths = RunPaths(cfg.out)
    paths.require(paths.manifest, paths.generator, paths.reducer, paths.surrogates, paths.filter)
    bench, lo, hi = _objective_range(cfg, paths)
    gen = resvae.load_checkpoint(paths.generator, cfg.generator_config())
    red = resvae.load_checkpoint(paths.reducer, cfg.reducer_config())
    models = lssvr.load_models(paths.surrogates)
    filt = case_filter.FilterConfig.load(paths.filter)
    fitness = SurrogateFitness(bench, gen, red, filt, models)

    d = cfg.generator_config().latent_dim
    bound = float(cfg["arpso"]["latent_bound"])
    problem = Problem(-bound * np.ones(d), bound * np.ones(d), fitness, sense=bench.sense, vectorized=True)
    acfg: ArpsoConfig = cfg.arpso_config()
    try:
        z_best, predicted, history = optimize(problem, int(cfg["arpso"]["iterations"]), acfg)
    except RuntimeError as exc:
        raise PipelineError(f"{exc}; filter threshold {filt.threshold}, "
                            f"median noise {np.median(fitness.noise):.0f}") from exc
    infeasible_share = fitness.n_infeasible / max(fitness.n_calls, 1)
    if infeasible_share > MAX_INFEASIBLE:
        raise PipelineError(
            f"{100 * infeasible_share:.1f}% of {fitness.n_calls} fitness evaluations were rejected by the "
            f"filter (threshold {filt.threshold}, noise median {np.median(fitness.noise):.0f}, "
            f"min {min(fitness.noise)}); recalibrate or retrain the generator")
    history.to_csv(paths.trace)

    ok, noise, obj, feats = fitness.predict(z_best[None])
    alpha = fitness.recover_design(feats[0])
    truth = bench.evaluate(alpha)
    oracle_alpha, oracle_value = bench.dense_grid_oracle()

    visited = cdr(fitness.feasible_objectives, lo, hi, cfg["cdr"]["tau_mean"], cfg["cdr"]["tau_var"],
                  min_samples=1)
    prior = _prior_cdr(cfg, fitness, d, lo, hi)

    paths.optimum.mkdir(parents=True, exist_ok=True)
    save_png(paths.optimum / "generated.png", resvae.decode(gen, z_best))
    save_png(paths.optimum / "verified.png", bench.render(alpha, cfg.resolution))

    gap = abs(truth["objective"] - oracle_value) / max(abs(oracle_value), 1e-12)
    report = {
        "benchmark": bench.name,
        "sense": bench.sense,
        "iterations": int(cfg["arpso"]["iterations"]),
        "latent_optimum": z_best,
        "predicted_objective": predicted,
        "recovered_design": dict(zip(bench.param_names, alpha)),
        "true_objective": truth["objective"],
        "true_responses": truth,
        "oracle_design": dict(zip(bench.param_names, oracle_alpha)),
        "oracle_objective": oracle_value,
        "relative_gap": gap,
        "within_5pct": gap <= 0.05,
        "fitness_evaluations": fitness.n_calls,
        "infeasible_share": infeasible_share,
        "cdr_visited": {**visited.__dict__, "norm_min": lo, "norm_max": hi},
        "cdr_prior": {**prior.__dict__, "norm_min": lo, "norm_max": hi},
        "gbest_trace": history.gbest,
    }
    write_json(paths.run_report, report)
    _record_time(paths, "optimize", time.perf_counter() - t0)
    return report


def _prior_cdr(cfg: PipelineConfig, fitness: SurrogateFitness, d: int, lo: float, hi: float):
    """CDR over cases decoded from prior draws z ~ N(0, I) that pass the filter."""
    rng = np.random.default_rng(derive_seed(cfg.seed, "prior"))
    want = int(cfg["cdr"]["prior_samples"])
    got: list[float] = []
    drawn = 0
    while len(got) < want and drawn < 20 * want:
        z = rng.standard_normal((256, d))
        drawn += len(z)
        ok, _, obj, _ = fitness.predict(z)
        got.extend(obj[ok].tolist())
    return cdr(got[:want], lo, hi, cfg["cdr"]["tau_mean"], cfg["cdr"]["tau_var"], min_samples=1)


def run_all(cfg: PipelineConfig) -> dict:
    cmd_sample(cfg)
    train = None
    try:
        train = cmd_train(cfg)
    except PipelineError as exc:
        log.error("%s", exc)
    calib = cmd_calibrate(cfg)
    report = cmd_optimize(cfg)
    return {"train": train, "calibration": calib, "run": report}
