"""Synthetic worlds with known linear ground truth.

A world has L feature layers, N voxels and a label space. Each voxel is
driven by exactly one layer through lagged weights. Optionally a subset
of voxels is instead driven autoregressively by the recent past of a set of
source voxels. Labels are a lead-lagged linear readout of the measured
responses, or a same-time readout of one layer's features.

Train and test segments are generated independently with the same
weights and the same zero-padding convention as the models. Every series
is z-scored with training-segment statistics.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import ClipIndex, DelaySpec, TimeSeriesMatrix, ensure_dir, save_clip_index, save_matrix
from .decoder import lead_delays
from .preprocess import ZScoreStats, apply_zscore, fit_zscore
from .regress import make_lagged


@dataclass
class SynthConfig:
    seed: int = 0
    n_train: int = 2000
    n_test: int = 400
    n_layers: int = 3
    layer_dims: int | list = 50
    n_voxels: int = 200
    n_labels: int = 5
    clip_length: int = 15
    encoder_delays: tuple = (3, 4, 5, 6)
    ar_delays: tuple = (1, 2, 3)
    label_leads: tuple = (3, 4, 5)
    ar_fraction: float = 0.0  # share of voxels driven autoregressively
    n_ar_sources: int = 20
    response_noise: float = 0.0  # noise sd relative to unit signal sd
    label_noise: float = 0.0
    label_source: str = "voxels"  # or "layer"
    label_layer: int = 0
    label_voxels: str = "all"  # or "ar": read labels only from AR-driven voxels
    feature_smoothing: float = 0.0  # AR(1) coefficient applied to features over time

    def __post_init__(self):
        if self.n_train < 50 or self.n_test < 1:
            raise ValueError("need n_train >= 50 and n_test >= 1")
        dims = self.dims
        if len(dims) != self.n_layers or any(d < 1 for d in dims):
            raise ValueError(f"layer_dims {self.layer_dims!r} inconsistent with n_layers={self.n_layers}")
        if self.n_voxels < 1 or self.n_labels < 1:
            raise ValueError("n_voxels and n_labels must be >= 1")
        if self.response_noise < 0 or self.label_noise < 0:
            raise ValueError("noise sd must be >= 0")
        if not 0.0 <= self.ar_fraction < 1.0:
            raise ValueError("ar_fraction must be in [0, 1)")
        if self.label_source not in ("voxels", "layer"):
            raise ValueError(f"unknown label_source {self.label_source!r}")
        if self.label_voxels not in ("all", "ar"):
            raise ValueError(f"unknown label_voxels {self.label_voxels!r}")
        if not 0.0 <= self.feature_smoothing < 1.0:
            raise ValueError("feature_smoothing must be in [0, 1)")
        if not 0 <= self.label_layer < self.n_layers:
            raise ValueError("label_layer out of range")
        n_ar = self.n_ar_targets
        if n_ar and self.n_ar_sources + n_ar > self.n_voxels:
            raise ValueError("n_ar_sources + AR-driven voxels exceed n_voxels")

    @property
    def dims(self) -> list[int]:
        if isinstance(self.layer_dims, int):
            return [self.layer_dims] * self.n_layers
        return [int(d) for d in self.layer_dims]

    @property
    def n_ar_targets(self) -> int:
        return int(round(self.ar_fraction * self.n_voxels))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown synth config key(s): {sorted(extra)}")
        d = dict(d)
        for k in ("encoder_delays", "ar_delays", "label_leads"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("encoder_delays", "ar_delays", "label_leads"):
            out[k] = list(out[k])
        return out


@dataclass
class Segment:
    features: dict[str, np.ndarray]
    responses: np.ndarray
    labels: np.ndarray
    clips: ClipIndex
    clean_responses: np.ndarray = field(repr=False, default=None)


@dataclass
class SynthWorld:
    config: SynthConfig
    train: Segment
    test: Segment
    truth: dict

    @property
    def layer_names(self) -> list[str]:
        return list(self.train.features)

    def reproduce_responses(self, features) -> np.ndarray:
        """Noiseless z-scored responses implied by the stored ground truth."""
        return _responses(self.config, self.truth, features, noise=None)

    def reproduce_labels(self, responses, features=None) -> np.ndarray:
        return _labels(self.config, self.truth, responses, features, noise=None)

    def write(self, out_dir, fmt: str = "emx") -> dict:
        """Write matrices, clip indices, layer manifests and the truth manifest."""
        out = ensure_dir(out_dir)
        files = {}
        for split, seg in (("train", self.train), ("test", self.test)):
            layer_manifest = []
            for name, x in seg.features.items():
                p = out / f"{split}_features_{name}.{fmt}"
                save_matrix(TimeSeriesMatrix(x), p)
                layer_manifest.append({"layer_name": name, "feature_path": p.name,
                                       "modality_tag": "synthetic"})
            (out / f"{split}_layers.json").write_text(json.dumps(layer_manifest, indent=2) + "\n")
            save_matrix(TimeSeriesMatrix(seg.responses), out / f"{split}_responses.{fmt}")
            save_matrix(TimeSeriesMatrix(seg.labels), out / f"{split}_labels.{fmt}")
            save_clip_index(seg.clips, out / f"{split}_clips.csv")
            files[split] = {"layers": f"{split}_layers.json",
                            "responses": f"{split}_responses.{fmt}",
                            "labels": f"{split}_labels.{fmt}",
                            "clips": f"{split}_clips.csv"}
        truth_dir = ensure_dir(out / "truth")
        arrays = {}
        for key, val in self.truth.items():
            if isinstance(val, np.ndarray):
                save_matrix(TimeSeriesMatrix(val if val.size else np.zeros((1, 1))),
                            truth_dir / f"{key}.emx")
                arrays[key] = {"path": f"truth/{key}.emx", "shape": list(val.shape)}
        manifest = {"format": "encpipe-synth/1", "config": self.config.to_dict(),
                    "files": files, "truth": arrays,
                    "voxel_layer": self.truth["voxel_layer"].tolist(),
                    "ar_sources": self.truth["ar_sources"].tolist(),
                    "ar_targets": self.truth["ar_targets"].tolist()}
        (out / "world.json").write_text(json.dumps(manifest, indent=2) + "\n")
        return manifest


def _smooth(x, a):
    if a == 0:
        return x
    out = np.empty_like(x)
    out[0] = x[0]
    scale = np.sqrt(1 - a * a)
    for t in range(1, x.shape[0]):
        out[t] = a * out[t - 1] + scale * x[t]
    return out


def _exogenous(cfg, truth, features):
    names = list(features)
    n = next(iter(features.values())).shape[0]
    s = np.zeros((n, cfg.n_voxels))
    for li, name in enumerate(names):
        s += make_lagged(features[name], cfg.encoder_delays) @ truth[f"enc_w{li}"]
    return s


def _responses(cfg, truth, features, noise):
    """Raw responses -> z-score with stored stats. ``noise`` None means noiseless."""
    s = _exogenous(cfg, truth, features)
    n = s.shape[0]
    eps = np.zeros_like(s) if noise is None else noise
    raw = s + eps
    tg = truth["ar_targets"].astype(int)
    if tg.size:
        src = truth["ar_sources"].astype(int)
        drive = make_lagged(raw[:, src], cfg.ar_delays) @ truth["ar_w"]
        raw[:, tg] = drive + eps[:, tg]
    stats = ZScoreStats(truth["resp_mean"].ravel(), truth["resp_std"].ravel())
    return apply_zscore(raw, stats)


def _labels(cfg, truth, responses, features, noise):
    if cfg.label_source == "voxels":
        cols = truth["label_voxels"].astype(int)
        raw = make_lagged(responses[:, cols], lead_delays(cfg.label_leads)) @ truth["label_w"]
    else:
        name = list(features)[cfg.label_layer]
        raw = features[name] @ truth["label_w"]
    if noise is not None:
        raw = raw + noise
    stats = ZScoreStats(truth["label_mean"].ravel(), truth["label_std"].ravel())
    return apply_zscore(raw, stats)


def generate(config: SynthConfig | None = None, **overrides) -> SynthWorld:
    """Build a deterministic world from ``config`` (fields may be overridden)."""
    if config is None:
        config = SynthConfig(**overrides)
    elif overrides:
        config = SynthConfig(**{**asdict(config), **overrides})
    cfg = config
    DelaySpec.coerce(cfg.encoder_delays)
    root = np.random.SeedSequence(cfg.seed)
    # fixed child streams: weights, train data, test data
    rng_w, rng_tr, rng_te = (np.random.default_rng(s) for s in root.spawn(3))
    dims = cfg.dims
    names = [f"layer{i}" for i in range(cfg.n_layers)]
    n_lag = len(cfg.encoder_delays)
    truth: dict = {}

    voxel_layer = np.arange(cfg.n_voxels) % cfg.n_layers
    truth["voxel_layer"] = voxel_layer
    for li, d in enumerate(dims):
        w = rng_w.standard_normal((d * n_lag, cfg.n_voxels)) / np.sqrt(d * n_lag)
        w[:, voxel_layer != li] = 0.0
        truth[f"enc_w{li}"] = w

    n_ar = cfg.n_ar_targets
    perm = rng_w.permutation(cfg.n_voxels)
    if n_ar:
        src = np.sort(perm[:cfg.n_ar_sources])
        tg = np.sort(perm[cfg.n_ar_sources:cfg.n_ar_sources + n_ar])
        ar_w = rng_w.standard_normal((src.size * len(cfg.ar_delays), n_ar))
    else:
        src = np.zeros(0, dtype=int)
        tg = np.zeros(0, dtype=int)
        ar_w = np.zeros((0, 0))
    truth["ar_sources"] = src
    truth["ar_targets"] = tg
    truth["ar_w"] = ar_w

    if cfg.label_source == "voxels":
        pool = tg if (cfg.label_voxels == "ar" and tg.size) else np.arange(cfg.n_voxels)
        truth["label_voxels"] = pool
        label_w = rng_w.standard_normal((pool.size * len(cfg.label_leads), cfg.n_labels))
    else:
        truth["label_voxels"] = np.zeros(0, dtype=int)
        label_w = rng_w.standard_normal((dims[cfg.label_layer], cfg.n_labels))
    truth["label_w"] = label_w

    def draw(rng, n):
        feats = {}
        for name, d in zip(names, dims):
            feats[name] = _smooth(rng.standard_normal((n, d)), cfg.feature_smoothing)
        noise_r = rng.standard_normal((n, cfg.n_voxels))
        noise_l = rng.standard_normal((n, cfg.n_labels))
        return feats, noise_r, noise_l

    f_tr, nr_tr, nl_tr = draw(rng_tr, cfg.n_train)
    f_te, nr_te, nl_te = draw(rng_te, cfg.n_test)

    # feature z-scoring with train stats
    fstats = {k: fit_zscore(v) for k, v in f_tr.items()}
    f_tr = {k: apply_zscore(v, fstats[k]) for k, v in f_tr.items()}
    f_te = {k: apply_zscore(v, fstats[k]) for k, v in f_te.items()}

    # rescale weights so each drive term has unit sd on the training segment
    s = _exogenous(cfg, truth, f_tr)
    sd = s.std(axis=0)
    sd[sd == 0] = 1.0
    for li in range(cfg.n_layers):
        truth[f"enc_w{li}"] = truth[f"enc_w{li}"] / sd
    if n_ar:
        s = _exogenous(cfg, truth, f_tr) + cfg.response_noise * nr_tr
        drive = make_lagged(s[:, src], cfg.ar_delays) @ truth["ar_w"]
        dsd = drive.std(axis=0)
        dsd[dsd == 0] = 1.0
        truth["ar_w"] = truth["ar_w"] / dsd

    eps_tr = cfg.response_noise * nr_tr
    eps_te = cfg.response_noise * nr_te
    truth["resp_mean"] = np.zeros(cfg.n_voxels)
    truth["resp_std"] = np.ones(cfg.n_voxels)
    raw_tr = _responses(cfg, truth, f_tr, eps_tr)
    rstats = fit_zscore(raw_tr)
    truth["resp_mean"], truth["resp_std"] = rstats.means, rstats.stds
    r_tr = _responses(cfg, truth, f_tr, eps_tr)
    r_te = _responses(cfg, truth, f_te, eps_te)

    # unit-sd label signal, then noise, then z-score
    truth["label_mean"] = np.zeros(cfg.n_labels)
    truth["label_std"] = np.ones(cfg.n_labels)
    sig = _labels(cfg, truth, r_tr, f_tr, None)
    lsd = sig.std(axis=0)
    lsd[lsd == 0] = 1.0
    truth["label_w"] = truth["label_w"] / lsd
    raw_l = _labels(cfg, truth, r_tr, f_tr, cfg.label_noise * nl_tr)
    lstats = fit_zscore(raw_l)
    truth["label_mean"], truth["label_std"] = lstats.means, lstats.stds
    l_tr = _labels(cfg, truth, r_tr, f_tr, cfg.label_noise * nl_tr)
    l_te = _labels(cfg, truth, r_te, f_te, cfg.label_noise * nl_te)

    train = Segment(f_tr, r_tr, l_tr, ClipIndex.uniform(cfg.n_train, cfg.clip_length),
                    _responses(cfg, truth, f_tr, None))
    test = Segment(f_te, r_te, l_te, ClipIndex.uniform(cfg.n_test, cfg.clip_length),
                   _responses(cfg, truth, f_te, None))
    return SynthWorld(cfg, train, test, truth)


def load_world_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
