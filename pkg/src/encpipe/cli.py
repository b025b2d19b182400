"""Command-line front end.

Each subcommand reads a JSON config (see :mod:`encpipe.config`), writes its
artifacts under ``--out`` and records an execution manifest in
``<out>/manifests/<command>.json`` listing input and output SHA-256 hashes
plus the resolved config. ``encpipe replay <manifest>`` re-runs the command
into a scratch directory and diffs the outputs.

Exit codes: 0 success, 2 configuration or missing file, 3 bad data,
4 numerical failure (or a replay mismatch).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, PipelineConfig, load_config, parse_config
from .core import (ClipIndex, MatrixFormatError, TimeSeriesMatrix, ensure_dir, load_clip_index,
                   load_matrix, save_matrix)
from .decoder import BrainDecoder, BTLPipeline, PipelineStageError, TransferLearning, Vox2Lab
from .encoder import EncoderEnsemble
from .eval import (accuracy_report, bootstrap_compare, sample_size_sweep, spearman,
                   variability_correlation, variability_series)
from .preprocess import (ZScorer, ZScoreStats, apply_zscore, detrend_median, fit_zscore, log_transform,
                         oversample_labels)
from .regress import apply_pca, fit_pca
from .serialize import (bundle_stats, load_bundle, load_ensemble, load_pca, load_vox2vox,
                        save_bundle, save_ensemble, save_pca, save_vox2vox, write_json)
from .synth import SynthConfig, generate
from .voxnet import Vox2Vox, select_top_voxels

logger = logging.getLogger("encpipe")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
RUN_FORMAT = "encpipe-run/1"


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _files_under(path: Path) -> list[Path]:
    return sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]


class Run:
    """Bookkeeping for one subcommand invocation."""

    def __init__(self, command: str, cfg: PipelineConfig, out: Path, threads: int, args: dict):
        self.command = command
        self.cfg = cfg
        self.out = ensure_dir(out)
        self.threads = threads
        self.args = args
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []

    # -- inputs
    def track(self, path: Path) -> Path:
        for f in _files_under(Path(path)):
            self.inputs[str(f)] = _sha256(f)
        return Path(path)

    def matrix(self, path: Path, what: str) -> np.ndarray:
        if not Path(path).exists():
            raise ConfigError(f"{what}: file not found: {path}")
        self.track(path)
        return np.asarray(load_matrix(path))

    def clips(self, path: Path | None, n_rows: int) -> ClipIndex | None:
        if path is None:
            return None
        if not Path(path).exists():
            raise ConfigError(f"clip index not found: {path}")
        idx = load_clip_index(self.track(path))
        if len(idx) != n_rows:
            raise DataError(f"{path}: clip index covers {len(idx)} rows, data has {n_rows}")
        return idx

    def layers(self, manifest: Path, what: str) -> dict[str, np.ndarray]:
        entries = read_layer_manifest(manifest, what)
        self.track(manifest)
        feats = {}
        for name, p in entries:
            feats[name] = self.matrix(p, f"{what} layer {name!r}")
        rows = {x.shape[0] for x in feats.values()}
        if len(rows) != 1:
            raise DataError(f"{manifest}: layers disagree on row count: {sorted(rows)}")
        return feats

    def artifact(self, field: str, default: str) -> Path:
        p = getattr(self.cfg.artifacts, field) or self.out / default
        if not Path(p).exists():
            raise ConfigError(f"artifacts.{field}: not found: {p}")
        self.track(p)
        return Path(p)

    # -- outputs
    def _register(self, path: Path):
        self.outputs.extend(_files_under(Path(path)))

    def save_matrix(self, name: str, arr) -> Path:
        arr = np.asarray(arr, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite values in {name}")
        p = self.out / name
        save_matrix(TimeSeriesMatrix(arr), p)
        self._register(p)
        return p

    def save_csv(self, name: str, header: list[str], rows) -> Path:
        p = self.out / name
        with open(p, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        self._register(p)
        return p

    def save_json(self, name: str, obj) -> Path:
        p = self.out / name
        write_json(p, obj)
        self._register(p)
        return p

    def save_dir(self, path: Path) -> Path:
        self._register(path)
        return path

    def manifest(self) -> dict:
        outs = {}
        for p in sorted(set(self.outputs)):
            outs[str(p.relative_to(self.out))] = _sha256(p)
        return {"format": RUN_FORMAT, "command": self.command, "args": self.args,
                "toolkit_version": __version__, "threads": self.threads,
                "config": self.cfg.snapshot(), "inputs": dict(sorted(self.inputs.items())),
                "outputs": outs}

    def finish(self) -> Path:
        p = ensure_dir(self.out / "manifests") / f"{self.command}.json"
        write_json(p, self.manifest())
        return p


def read_layer_manifest(path: Path, what: str = "layers") -> list[tuple[str, Path]]:
    """``[(layer_name, feature_path)]`` from a layer manifest; every file must exist."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{what}: layer manifest not found: {path}")
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{path}: expected a non-empty JSON list of layers")
    out, seen = [], set()
    for i, e in enumerate(entries):
        if not isinstance(e, dict) or set(e) - {"layer_name", "feature_path", "modality_tag"} \
                or not {"layer_name", "feature_path"} <= set(e):
            raise ConfigError(f"{path}[{i}]: entries need layer_name and feature_path "
                              "(optional modality_tag) and nothing else")
        name = str(e["layer_name"])
        if name in seen:
            raise ConfigError(f"{path}[{i}]: duplicate layer_name {name!r}")
        seen.add(name)
        fp = Path(e["feature_path"])
        fp = fp if fp.is_absolute() else (path.parent / fp).resolve()
        if not fp.exists():
            raise ConfigError(f"{path}[{i}]: feature file not found: {fp}")
        out.append((name, fp))
    return out


# -- shared helpers ------------------------------------------------------------


def _cv(run: Run) -> dict:
    m = run.cfg.model
    return dict(alphas=tuple(m.lambda_grid), n_folds=m.n_folds, tie_tolerance=m.tie_tolerance,
                n_jobs=run.threads)


def _responses(run: Run, path: Path, what: str, stats: ZScoreStats | None = None):
    r = run.matrix(path, what)
    pre = run.cfg.preprocess
    if pre.detrend_window is not None:
        r = detrend_median(r, pre.detrend_window)
    if pre.zscore_responses:
        stats = stats or fit_zscore(r)
        r = apply_zscore(r, stats)
    return r, stats


def _train_response_stats(run: Run) -> ZScoreStats | None:
    if run.cfg.data.train_responses is None or not run.cfg.preprocess.zscore_responses:
        return None
    return _responses(run, run.cfg.data.train_responses, "data.train_responses")[1]


def _labels(run: Run, path: Path, what: str) -> np.ndarray:
    """Label conditioning applied before any model sees the labels."""
    y = run.matrix(path, what)
    pre = run.cfg.preprocess
    if pre.log_labels:
        y = log_transform(y)
    if pre.label_oversample > 1:
        if pre.label_order == "zscore_then_oversample":
            y = apply_zscore(y, fit_zscore(y))
        y = oversample_labels(y, pre.label_oversample)
    return y


def _brain(run: Run, use_vox2vox: bool) -> BTLPipeline:
    """Assemble a pipeline from the encoder / vox2vox / voxel-PCA artifacts."""
    m = run.cfg.model
    pipe = BTLPipeline(m.n_components, tuple(m.encoder_delays), use_vox2vox, m.n_select,
                       tuple(m.vox2vox_delays), tuple(m.leads), m.voxel_pca, m.voxel_pca_select,
                       **_cv(run))
    pipe.encoder_ = load_ensemble(run.artifact("encoder", "encoder"))
    pipe.voxel_pca_ = load_pca(run.artifact("voxel_pca", "voxel_pca")) if m.voxel_pca else None
    pipe.vox2vox_ = None
    if use_vox2vox:
        try:
            pipe.vox2vox_ = load_vox2vox(run.artifact("vox2vox", "vox2vox"))
        except ConfigError as e:
            raise ConfigError(f"{e} (run train-vox2vox first or pass --no-vox2vox)") from None
    return pipe


def _label_inputs(run: Run):
    d = run.cfg.data
    layers = d.label_layers or d.train_layers
    if layers is None:
        raise ConfigError("data.label_layers or data.train_layers: required for this command")
    run.cfg.require("data.train_labels")
    feats = run.layers(layers, "label-stage features")
    y = _labels(run, d.train_labels, "data.train_labels")
    n = next(iter(feats.values())).shape[0]
    if y.shape[0] != n:
        raise DataError(f"{y.shape[0]} label rows vs {n} feature rows")
    return feats, y, run.clips(d.label_clips if d.label_layers else d.train_clips, n)


# -- subcommands -----------------------------------------------------------------


def cmd_synth(run: Run):
    params = dict(run.cfg.synth)
    if run.args.get("seed") is not None or "seed" not in params:
        params["seed"] = run.cfg.seed
    try:
        sc = SynthConfig.from_dict(params)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"synth: {e}") from None
    world = generate(sc)
    world.write(run.out)
    cfg = {"data": {"train_layers": "train_layers.json", "train_responses": "train_responses.emx",
                    "train_clips": "train_clips.csv", "train_labels": "train_labels.emx",
                    "test_layers": "test_layers.json", "test_responses": "test_responses.emx",
                    "test_labels": "test_labels.emx", "test_clips": "test_clips.csv"}}
    write_json(run.out / "pipeline.json", cfg)
    for p in sorted(run.out.iterdir()):
        if p.name != "manifests":
            run.save_dir(p)
    return f"synthetic world written to {run.out}"


def cmd_train_encoder(run: Run):
    d, m = run.cfg.data, run.cfg.model
    run.cfg.require("data.train_layers", "data.train_responses")
    feats = run.layers(d.train_layers, "data.train_layers")
    r, _ = _responses(run, d.train_responses, "data.train_responses")
    n = next(iter(feats.values())).shape[0]
    if r.shape[0] != n:
        raise DataError(f"{r.shape[0]} response rows vs {n} feature rows")
    clips = run.clips(d.train_clips, n)
    if m.voxel_pca:
        pca = fit_pca(r, min(m.voxel_pca, *r.shape))
        run.save_dir(save_pca(pca, run.out / "voxel_pca"))
        r = apply_pca(r, pca)
    ens = EncoderEnsemble(m.n_components, tuple(m.encoder_delays), **_cv(run))
    try:
        ens.fit(feats, r, clips)
    except Exception as e:
        raise PipelineStageError("cnn2vox", e) from e
    run.save_dir(save_ensemble(ens, run.out / "encoder"))
    names = ens.layer_names
    run.save_csv("encoder_accuracy.csv", ["target", *names, "ensemble"],
                 ([j, *ens.layer_accuracy_[j], ens.cv_accuracy_[j]] for j in range(r.shape[1])))
    run.save_json("encoder_summary.json", {
        "layers": names, "n_targets": r.shape[1],
        "mean_cv_r": {n_: float(np.mean(ens.layer_accuracy_[:, i])) for i, n_ in enumerate(names)},
        "ensemble_mean_cv_r": float(np.mean(ens.cv_accuracy_)),
        "lambda": {n_: float(e.ridge_.lambdas[0]) for n_, e in ens.layers_.items()}})
    return f"encoder: {len(names)} layer(s), ensemble mean CV r = {np.mean(ens.cv_accuracy_):.4f}"


def cmd_train_vox2vox(run: Run):
    d, m = run.cfg.data, run.cfg.model
    run.cfg.require("data.train_responses")
    ens = load_ensemble(run.artifact("encoder", "encoder"))
    r, _ = _responses(run, d.train_responses, "data.train_responses")
    if m.voxel_pca:
        r = apply_pca(r, load_pca(run.artifact("voxel_pca", "voxel_pca")))
    if r.shape[1] != ens.n_voxels_:
        raise DataError(f"encoder predicts {ens.n_voxels_} targets, responses have {r.shape[1]}")
    k = m.voxel_pca_select if m.voxel_pca else m.n_select
    sel = select_top_voxels(ens.cv_accuracy_, min(k, r.shape[1]))
    model = Vox2Vox(k, tuple(m.vox2vox_delays), **_cv(run))
    try:
        model.fit(r, clips=run.clips(d.train_clips, r.shape[0]), selected=sel)
    except Exception as e:
        raise PipelineStageError("vox2vox", e) from e
    run.save_dir(save_vox2vox(model, run.out / "vox2vox"))
    run.save_csv("vox2vox_accuracy.csv", ["target", "r"],
                 ([j, model.cv_accuracy_[j]] for j in range(r.shape[1])))
    return f"vox2vox: {len(sel)} sources, mean CV r = {np.mean(model.cv_accuracy_):.4f}"


def cmd_predict_responses(run: Run):
    d, m = run.cfg.data, run.cfg.model
    run.cfg.require("data.test_layers")
    pipe = _brain(run, m.use_vox2vox)
    feats = run.layers(d.test_layers, "data.test_layers")
    pred = pipe.predict_responses(feats)
    run.save_matrix("predicted_responses.emx", pred)
    msg = f"predicted {pred.shape[0]}x{pred.shape[1]} responses"
    if d.test_responses is not None:
        r, _ = _responses(run, d.test_responses, "data.test_responses", _train_response_stats(run))
        truth = pipe.target_responses(r)
        rep = accuracy_report(truth, pred)
        run.save_csv("response_accuracy.csv", ["target", "r"], _report_rows(rep))
        summary = rep.summary()
        if pipe.vox2vox_ is not None:
            summary["encoder_only_mean_r"] = accuracy_report(truth, pipe.encoder_.predict(feats)).mean_r
        run.save_json("response_accuracy.json", summary)
        msg += f", mean r = {rep.mean_r:.4f}"
    return msg


def cmd_train_decoder(run: Run):
    d, m = run.cfg.data, run.cfg.model
    feats, y, clips = _label_inputs(run)
    rstats = None
    if m.method == "btl":
        model = _brain(run, m.use_vox2vox)
        model.fit_labels(feats, y, clips)
        if m.decoder_pca:
            logger.warning("model.decoder_pca is ignored for btl; use --voxel-pca")
    else:
        scaler = ZScorer().fit(y)
        yz = scaler.transform(y)
        if m.method == "bd":
            run.cfg.require("data.train_responses")
            r, rstats = _responses(run, d.train_responses, "data.train_responses")
            if r.shape[0] != yz.shape[0]:
                raise DataError(f"{r.shape[0]} response rows vs {yz.shape[0]} label rows")
            model = BrainDecoder(tuple(m.leads), m.decoder_pca, **_cv(run))
            stage = "bd"
        else:
            model = TransferLearning(m.method.split("-")[1], m.n_components, **_cv(run))
            stage = m.method
        try:
            model.fit(r if m.method == "bd" else feats, yz, clips)
        except Exception as e:
            raise PipelineStageError(stage, e) from e
        run.save_dir(save_bundle(model, run.out / "bundle", rstats, scaler.stats_))
        return f"{m.method} bundle written"
    run.save_dir(save_bundle(model, run.out / "bundle", _train_response_stats(run)))
    return "btl bundle written"


def cmd_estimate(run: Run):
    d = run.cfg.data
    model = load_bundle(run.artifact("bundle", "bundle"))
    method = model.manifest_["method"]
    if method == "bd":
        run.cfg.require("data.test_responses")
        r, _ = _responses(run, d.test_responses, "data.test_responses",
                          bundle_stats(model.manifest_, "responses"))
        est = model.predict(r)
    else:
        run.cfg.require("data.test_layers")
        est = model.predict(run.layers(d.test_layers, "data.test_layers"))
    run.save_matrix("estimate.emx", est)
    return f"{method} estimate: {est.shape[0]}x{est.shape[1]}"


def _report_rows(rep):
    # undefined correlations become empty cells
    return ([row["target"], "" if row["r"] is None else row["r"]] for row in rep.rows())


def _excluded(run: Run, n: int):
    if not run.cfg.eval.trim_boundary:
        return None
    k = max(run.cfg.model.leads)
    return np.arange(max(0, n - k), n)


def cmd_evaluate(run: Run):
    d, ev = run.cfg.data, run.cfg.eval
    run.cfg.require("data.test_labels")
    truth = _labels(run, d.test_labels, "data.test_labels")
    compare = run.args.get("compare")
    if compare:
        a = run.matrix(Path(compare[0]), "--compare a")
        b = run.matrix(Path(compare[1]), "--compare b")
        for name, e in (("a", a), ("b", b)):
            if e.shape != truth.shape:
                raise DataError(f"estimate {name} has shape {e.shape}, truth {truth.shape}")
        keep = np.ones(truth.shape[0], bool)
        ex = _excluded(run, truth.shape[0])
        if ex is not None:
            keep[ex] = False
        clips = run.clips(d.test_clips, truth.shape[0])
        if ev.unit == "clip" and clips is None:
            raise ConfigError("data.test_clips: required for --unit clip")
        if clips is not None:
            clips = clips.subset(np.flatnonzero(keep))
        p = bootstrap_compare(truth[keep], a[keep], b[keep], ev.n_boot, run.cfg.seed, ev.unit, clips)
        ra, rb = accuracy_report(truth[keep], a[keep]), accuracy_report(truth[keep], b[keep])
        run.save_csv("compare.csv", ["target", "r_a", "r_b"],
                     ([j, ra.per_target_r[j], rb.per_target_r[j]] for j in range(truth.shape[1])))
        run.save_json("compare.json", {"a": str(compare[0]), "b": str(compare[1]),
                                       "mean_r_a": ra.mean_r, "mean_r_b": rb.mean_r,
                                       "p_value": p, "n_boot": ev.n_boot, "unit": ev.unit,
                                       "seed": run.cfg.seed})
        return f"mean r a = {ra.mean_r:.4f}, b = {rb.mean_r:.4f}, bootstrap p(a > b) = {p:.4g}"
    est = run.matrix(run.artifact("estimate", "estimate.emx"), "artifacts.estimate")
    if est.shape != truth.shape:
        raise DataError(f"estimate has shape {est.shape}, truth {truth.shape}")
    rep = accuracy_report(truth, est, _excluded(run, truth.shape[0]))
    run.save_csv("accuracy.csv", ["target", "r"], _report_rows(rep))
    run.save_json("accuracy.json", rep.summary())
    return f"mean r = {rep.mean_r:.4f} over {truth.shape[1]} target(s)"


def cmd_variability(run: Run):
    v = run.cfg.variability
    if len(v.sources_a) < 2 or len(v.sources_b) < 2:
        raise ConfigError("variability.sources_a / sources_b: need at least two matrices each")
    a = [run.matrix(p, "variability.sources_a") for p in v.sources_a]
    b = [run.matrix(p, "variability.sources_b") for p in v.sources_b]
    va = variability_series(a, v.window, v.step)
    vb = variability_series(b, v.window, v.step)
    if va.shape != vb.shape:
        raise DataError(f"variability series lengths differ: {va.shape[0]} vs {vb.shape[0]}")
    res = variability_correlation(va, vb)
    run.save_csv("variability.csv", ["start", "variability_a", "variability_b"],
                 ([i * v.step, va[i], vb[i]] for i in range(va.shape[0])))
    run.save_json("variability.json", {"pearson_r": res.pearson_r, "spearman_rho": res.spearman_rho,
                                       "t_stat": res.t_stat, "p_value": res.p_value, "n": res.n,
                                       "window": v.window, "step": v.step})
    return f"variability r = {res.pearson_r:.4f} (p = {res.p_value:.3g}, n = {res.n})"


def cmd_sweep(run: Run):
    d, m, sw = run.cfg.data, run.cfg.model, run.cfg.sweep
    if not sw.sizes:
        raise ConfigError("sweep.sizes: required for this command")
    run.cfg.require("data.test_layers", "data.test_labels")
    feats, y, clips = _label_inputs(run)
    test_feats = run.layers(d.test_layers, "data.test_layers")
    test_y = _labels(run, d.test_labels, "data.test_labels")
    y = ZScorer().fit(y).transform(y)
    if sw.trainer == "vox2lab":
        pipe = _brain(run, m.use_vox2vox)
        train_x = pipe.predict_responses(feats)
        test_x = pipe.predict_responses(test_feats)

        def trainer(x, yy, c):
            return Vox2Lab(tuple(m.leads), m.decoder_pca, **_cv(run)).fit(x, yy, c)
    else:
        names = list(feats)
        train_x = [feats[n] for n in names]
        test_x = {n: test_feats[n] for n in names}

        def trainer(x, yy, c):
            return TransferLearning(sw.trainer.split("-")[1], m.n_components, **_cv(run)).fit(
                dict(zip(names, x)), yy, c)
    rows = sample_size_sweep(train_x, y, test_x, test_y, sw.sizes, sw.n_seeds, trainer,
                             clips=clips, seed=run.cfg.seed)
    run.save_csv("sweep.csv", ["size", "seed", "r"],
                 ([row.size, k, s] for row in rows for k, s in enumerate(row.scores)))
    sizes = [row.size for row in rows for _ in row.scores]
    scores = [s for row in rows for s in row.scores]
    rho = spearman(sizes, scores) if len(set(sizes)) > 1 else float("nan")
    run.save_json("sweep.json", {
        "trainer": sw.trainer, "n_seeds": sw.n_seeds, "seed": run.cfg.seed,
        "table": [{"size": r.size, "mean_r": r.mean_r, "sd_r": r.sd_r} for r in rows],
        "spearman_size_vs_r": rho})
    return "sweep: " + ", ".join(f"{r.size}: {r.mean_r:.3f}" for r in rows)


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def cmd_plot_data(run: Run):
    fig = run.args["figure"]
    if fig == "sweep":
        path = run.artifact("sweep", "sweep.csv")
        header, rows = _read_csv(path)
        if header != ["size", "seed", "r"]:
            raise DataError(f"{path}: not a sweep table")
        by = {}
        for s, _, r in rows:
            by.setdefault(int(s), []).append(float(r))
        out = []
        for s in sorted(by):
            v = np.array(by[s])
            out.append([s, float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0, v.size])
        run.save_csv("fig_sweep.csv", ["size", "mean_r", "sd_r", "n_seeds"], out)
        return f"fig_sweep.csv: {len(out)} sizes"
    path = run.artifact("variability", "variability.csv")
    header, rows = _read_csv(path)
    if header != ["start", "variability_a", "variability_b"]:
        raise DataError(f"{path}: not a variability table")
    arr = np.array([[float(x) for x in row] for row in rows])
    z = apply_zscore(arr[:, 1:], fit_zscore(arr[:, 1:]))
    w = run.cfg.variability.window
    run.save_csv("fig_variability.csv", ["time", "variability_a_z", "variability_b_z"],
                 ([arr[i, 0] + (w - 1) / 2, z[i, 0], z[i, 1]] for i in range(arr.shape[0])))
    return f"fig_variability.csv: {arr.shape[0]} windows"


COMMANDS = {
    "synth": cmd_synth,
    "train-encoder": cmd_train_encoder,
    "train-vox2vox": cmd_train_vox2vox,
    "predict-responses": cmd_predict_responses,
    "train-decoder": cmd_train_decoder,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "variability": cmd_variability,
    "sweep": cmd_sweep,
    "plot-data": cmd_plot_data,
}


# -- driver ----------------------------------------------------------------------


def default_threads() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover
        return os.cpu_count() or 1


def _apply_overrides(cfg: PipelineConfig, ns: argparse.Namespace) -> PipelineConfig:
    cfg = cfg.model_copy(deep=True)
    if ns.out is not None:
        cfg.output_dir = Path(ns.out).resolve()
    if ns.seed is not None:
        cfg.seed = ns.seed
    if ns.no_vox2vox:
        cfg.model.use_vox2vox = False
    if ns.voxel_pca is not None:
        cfg.model.voxel_pca = ns.voxel_pca
    if ns.unit is not None:
        cfg.eval.unit = ns.unit
    return cfg


def _resolve_artifacts(cfg: PipelineConfig, out: Path) -> None:
    defaults = {"encoder": "encoder", "vox2vox": "vox2vox", "voxel_pca": "voxel_pca",
                "bundle": "bundle", "estimate": "estimate.emx", "sweep": "sweep.csv",
                "variability": "variability.csv"}
    for k, v in defaults.items():
        if getattr(cfg.artifacts, k) is None:
            setattr(cfg.artifacts, k, out / v)


def execute(command: str, cfg: PipelineConfig, threads: int, args: dict) -> tuple[str, Path]:
    if cfg.output_dir is None:
        raise ConfigError("output_dir: required (set it in the config or pass --out)")
    out = Path(cfg.output_dir)
    _resolve_artifacts(cfg, out)
    run = Run(command, cfg, out, threads, args)
    # BLAS reductions split differently per thread count, so BLAS stays
    # single-threaded and --threads only sizes the CV worker pool
    with threadpool_limits(limits=1):
        msg = COMMANDS[command](run)
    return msg, run.finish()


def replay(manifest_path: Path, threads: int | None) -> dict:
    if not manifest_path.exists():
        raise ConfigError(f"manifest not found: {manifest_path}")
    man = json.loads(manifest_path.read_text(encoding="utf-8"))
    if man.get("format") != RUN_FORMAT:
        raise ConfigError(f"{manifest_path}: not an execution manifest")
    inputs = {}
    for p, h in man["inputs"].items():
        inputs[p] = "missing" if not Path(p).exists() else ("ok" if _sha256(Path(p)) == h else "changed")
    cfg = parse_config(man["config"])
    scratch = Path(tempfile.mkdtemp(prefix="encpipe-replay-"))
    try:
        cfg.output_dir = scratch
        execute(man["command"], cfg, threads or man["threads"], man["args"])
        outputs = {}
        for rel, h in man["outputs"].items():
            p = scratch / rel
            outputs[rel] = "missing" if not p.exists() else ("identical" if _sha256(p) == h else "differs")
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    ok = all(v == "ok" for v in inputs.values()) and all(v == "identical" for v in outputs.values())
    return {"command": man["command"], "identical": ok, "inputs": inputs, "outputs": outputs}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    common.add_argument("--threads", type=int, default=None,
                        help="CV worker threads (default: available cores)")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--no-vox2vox", action="store_true", help="skip the vox2vox stage")
    common.add_argument("--voxel-pca", type=int, default=None, metavar="N",
                        help="project responses onto N principal components")
    common.add_argument("--unit", choices=("timepoint", "clip"), default=None,
                        help="bootstrap resampling unit")
    p = argparse.ArgumentParser(prog="encpipe", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"encpipe {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "evaluate":
            sp.add_argument("--compare", nargs=2, metavar=("A", "B"), type=Path,
                            help="bootstrap test that estimate A beats estimate B")
        if name == "plot-data":
            sp.add_argument("--figure", choices=("sweep", "variability"), required=True)
    rp = sub.add_parser("replay", help="re-run a recorded command and diff its outputs")
    rp.add_argument("manifest", type=Path)
    rp.add_argument("--threads", type=int, default=None)
    return p


def _setup_logging():
    level = os.environ.get("ENCPIPE_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _exit_code(e: BaseException) -> int:
    if isinstance(e, PipelineStageError):
        return _exit_code(e.cause)
    if isinstance(e, ConfigError):
        return EXIT_CONFIG
    if isinstance(e, (NumericalError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(e, (DataError, MatrixFormatError, ValueError, KeyError)):
        return EXIT_DATA
    raise e


def main(argv=None) -> int:
    _setup_logging()
    ns = build_parser().parse_args(argv)
    if ns.threads is not None and ns.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if ns.command == "replay":
            res = replay(ns.manifest, ns.threads)
            print(json.dumps(res, indent=2, sort_keys=True))
            return EXIT_OK if res["identical"] else EXIT_NUMERIC
        cfg = _apply_overrides(load_config(ns.config), ns)
        args = {"seed": ns.seed}
        if ns.command == "evaluate" and ns.compare:
            args["compare"] = [str(Path(x).resolve()) for x in ns.compare]
        if ns.command == "plot-data":
            args["figure"] = ns.figure
        msg, man = execute(ns.command, cfg, ns.threads or default_threads(), args)
    except Exception as e:  # noqa: BLE001 - mapped to the exit-code contract
        code = _exit_code(e)
        print(f"error: {e}", file=sys.stderr)
        return code
    print(msg)
    logger.info("manifest: %s", man)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
