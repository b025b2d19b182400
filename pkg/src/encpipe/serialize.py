"""Model containers: a directory of EMX arrays plus a ``meta.json`` sidecar.

Layout of a container directory::

    meta.json        {"kind": ..., "format": "encpipe-container/1", "arrays": [...], ...}
    <name>.emx       one file per array listed in "arrays"

Trained ensembles and pipeline bundles are directories of containers with
their own manifest.
"""

from __future__ import annotations

import json
import shutil
from pathlib import Path

import numpy as np

from .core import MatrixFormatError, decode_emx, encode_emx, ensure_dir
from .decoder import BTLPipeline, TransferLearning, Vox2Lab
from .encoder import EncoderEnsemble, LayerEncoder
from .preprocess import ZScorer, ZScoreStats
from .regress import PCAModel, RidgeModel
from .voxnet import Vox2Vox

CONTAINER_FORMAT = "encpipe-container/1"
BUNDLE_FORMAT = "encpipe-bundle/1"
ENSEMBLE_FORMAT = "encpipe-ensemble/1"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return v


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    if not Path(path).is_file():
        raise MatrixFormatError(f"{path}: missing")
    return json.loads(Path(path).read_text(encoding="utf-8"))


def save_container(path, kind: str, arrays: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    if path.exists():
        shutil.rmtree(path)
    ensure_dir(path)
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype=np.float64)
        a = a.reshape(-1, 1) if a.ndim <= 1 else a
        (path / f"{name}.emx").write_bytes(encode_emx(a))
    write_json(path / "meta.json", {"format": CONTAINER_FORMAT, "kind": kind,
                                    "arrays": sorted(arrays), **(meta or {})})
    return path


def load_container(path, kind: str | None = None) -> tuple[dict, dict]:
    path = Path(path)
    meta = read_json(path / "meta.json")
    if meta.get("format") != CONTAINER_FORMAT:
        raise MatrixFormatError(f"{path}: unsupported container format {meta.get('format')!r}")
    if kind is not None and meta.get("kind") != kind:
        raise MatrixFormatError(f"{path}: expected a {kind!r} container, found {meta.get('kind')!r}")
    arrays = {n: decode_emx((path / f"{n}.emx").read_bytes(), str(path / f"{n}.emx"))
              for n in meta["arrays"]}
    return arrays, meta


def _params(est) -> dict:
    # n_jobs is a runtime setting; keeping it out makes saved files thread-count-invariant
    return {k: v for k, v in est.get_params().items() if k != "n_jobs"}


# -- ridge / PCA ------------------------------------------------------------


def _ridge_parts(model: RidgeModel, prefix=""):
    arrays = {f"{prefix}weights": model.weights, f"{prefix}lambdas": model.lambdas}
    if model.cv_scores is not None:
        arrays[f"{prefix}cv_scores"] = model.cv_scores
    meta = {f"{prefix}rank_deficient": model.rank_deficient, f"{prefix}meta": model.meta}
    return arrays, meta


def _ridge_from(arrays, meta, prefix=""):
    cv = arrays.get(f"{prefix}cv_scores")
    return RidgeModel(arrays[f"{prefix}weights"], arrays[f"{prefix}lambdas"].ravel(),
                      None if cv is None else cv.ravel(),
                      bool(meta.get(f"{prefix}rank_deficient", False)),
                      dict(meta.get(f"{prefix}meta", {})))


def _pca_parts(p: PCAModel, prefix="pca_"):
    return {f"{prefix}means": p.means[None, :], f"{prefix}components": p.components,
            f"{prefix}variance": p.explained_variance}


def _pca_from(arrays, prefix="pca_"):
    return PCAModel(arrays[f"{prefix}means"].ravel(), arrays[f"{prefix}components"],
                    arrays[f"{prefix}variance"].ravel())


def save_ridge(model: RidgeModel, path, extra_meta: dict | None = None) -> Path:
    arrays, meta = _ridge_parts(model)
    return save_container(path, "ridge", arrays, {**meta, **(extra_meta or {})})


def load_ridge(path) -> RidgeModel:
    arrays, meta = load_container(path, "ridge")
    return _ridge_from(arrays, meta)


def save_pca(p: PCAModel, path) -> Path:
    return save_container(path, "pca", _pca_parts(p), {"n_components": p.n_components})


def load_pca(path) -> PCAModel:
    arrays, _ = load_container(path, "pca")
    return _pca_from(arrays)


# -- stage models -------------------------------------------------------------


def save_layer_encoder(enc: LayerEncoder, path) -> Path:
    arrays, meta = _ridge_parts(enc.ridge_)
    arrays.update(_pca_parts(enc.pca_))
    arrays["cv_accuracy"] = enc.cv_accuracy_
    meta.update(params=_params(enc), n_features_in=enc.n_features_in_)
    return save_container(path, "layer_encoder", arrays, meta)


def load_layer_encoder(path) -> LayerEncoder:
    arrays, meta = load_container(path, "layer_encoder")
    params = meta["params"]
    params["delays"] = tuple(params["delays"])
    params["alphas"] = tuple(params["alphas"])
    enc = LayerEncoder(**params)
    enc.pca_ = _pca_from(arrays)
    enc.ridge_ = _ridge_from(arrays, meta)
    enc.cv_accuracy_ = arrays["cv_accuracy"].ravel()
    enc.n_features_in_ = int(meta["n_features_in"])
    return enc


def save_ensemble(ens: EncoderEnsemble, path) -> Path:
    path = Path(path)
    if path.exists():
        shutil.rmtree(path)
    ensure_dir(path / "layers")
    names = list(ens.layers_)
    for i, name in enumerate(names):
        save_layer_encoder(ens.layers_[name], path / "layers" / f"{i:02d}")
    (path / "weights.emx").write_bytes(encode_emx(ens.weights_))
    if ens.cv_accuracy_ is not None:
        (path / "cv_accuracy.emx").write_bytes(encode_emx(ens.cv_accuracy_[:, None]))
    params = _params(ens)
    write_json(path / "manifest.json", {"format": ENSEMBLE_FORMAT, "layers": names,
                                        "params": params})
    return path


def load_ensemble(path) -> EncoderEnsemble:
    path = Path(path)
    man = read_json(path / "manifest.json")
    if man.get("format") != ENSEMBLE_FORMAT:
        raise MatrixFormatError(f"{path}: unsupported ensemble format {man.get('format')!r}")
    layers = {name: load_layer_encoder(path / "layers" / f"{i:02d}")
              for i, name in enumerate(man["layers"])}
    weights = decode_emx((path / "weights.emx").read_bytes())
    cv = None
    if (path / "cv_accuracy.emx").exists():
        cv = decode_emx((path / "cv_accuracy.emx").read_bytes()).ravel()
    params = man["params"]
    params["delays"] = tuple(params["delays"])
    params["alphas"] = tuple(params["alphas"])
    return EncoderEnsemble.from_parts(layers, weights, cv, **params)


def save_vox2vox(model: Vox2Vox, path) -> Path:
    arrays, meta = _ridge_parts(model.ridge_)
    arrays["selected_voxels"] = model.selected_voxels_.astype(float)
    arrays["cv_accuracy"] = model.cv_accuracy_
    meta.update(params=_params(model), n_voxels=model.n_voxels_)
    return save_container(path, "vox2vox", arrays, meta)


def load_vox2vox(path) -> Vox2Vox:
    arrays, meta = load_container(path, "vox2vox")
    params = meta["params"]
    params["delays"] = tuple(params["delays"])
    params["alphas"] = tuple(params["alphas"])
    m = Vox2Vox(**params)
    m.ridge_ = _ridge_from(arrays, meta)
    m.selected_voxels_ = arrays["selected_voxels"].ravel().astype(int)
    m.cv_accuracy_ = arrays["cv_accuracy"].ravel()
    m.n_voxels_ = int(meta["n_voxels"])
    return m


def save_vox2lab(model: Vox2Lab, path) -> Path:
    arrays, meta = _ridge_parts(model.ridge_)
    if model.pca_ is not None:
        arrays.update(_pca_parts(model.pca_))
    meta.update(params=_params(model), n_features_in=model.n_features_in_,
                has_pca=model.pca_ is not None, cls=type(model).__name__)
    return save_container(path, "vox2lab", arrays, meta)


def load_vox2lab(path) -> Vox2Lab:
    from .decoder import BrainDecoder

    arrays, meta = load_container(path, "vox2lab")
    params = meta["params"]
    params["leads"] = tuple(params["leads"])
    params["alphas"] = tuple(params["alphas"])
    cls = BrainDecoder if meta.get("cls") == "BrainDecoder" else Vox2Lab
    m = cls(**params)
    m.ridge_ = _ridge_from(arrays, meta)
    m.cv_accuracy_ = m.ridge_.cv_scores
    m.pca_ = _pca_from(arrays) if meta.get("has_pca") else None
    m.n_features_in_ = int(meta["n_features_in"])
    return m


def save_tl(model: TransferLearning, path) -> Path:
    path = Path(path)
    if path.exists():
        shutil.rmtree(path)
    ensure_dir(path / "layers")
    names = list(model.layers_)
    for i, name in enumerate(names):
        pca, ridge = model.layers_[name]
        arrays, meta = _ridge_parts(ridge)
        arrays.update(_pca_parts(pca))
        save_container(path / "layers" / f"{i:02d}", "tl_layer", arrays, {**meta, "layer_name": name})
    (path / "weights.emx").write_bytes(encode_emx(model.weights_))
    write_json(path / "manifest.json", {"format": ENSEMBLE_FORMAT, "kind": "tl", "layers": names,
                                        "params": _params(model)})
    return path


def load_tl(path) -> TransferLearning:
    path = Path(path)
    man = read_json(path / "manifest.json")
    if man.get("format") != ENSEMBLE_FORMAT or man.get("kind") != "tl":
        raise MatrixFormatError(f"{path}: not a TL model directory")
    params = man["params"]
    params["alphas"] = tuple(params["alphas"])
    model = TransferLearning(**params)
    model.layers_ = {}
    for i, name in enumerate(man["layers"]):
        arrays, meta = load_container(path / "layers" / f"{i:02d}", "tl_layer")
        model.layers_[name] = (_pca_from(arrays), _ridge_from(arrays, meta))
    model.weights_ = decode_emx((path / "weights.emx").read_bytes())
    model.layer_accuracy_ = np.column_stack([r.cv_scores for _, r in model.layers_.values()])
    return model


# -- pipeline bundle --------------------------------------------------------


def _method_of(model) -> str:
    if isinstance(model, BTLPipeline):
        return "btl"
    if isinstance(model, TransferLearning):
        return f"tl-{model.mode}"
    if isinstance(model, Vox2Lab):
        return "bd"
    raise TypeError(f"cannot bundle a {type(model).__name__}")


def save_bundle(model, path, response_stats: ZScoreStats | None = None,
                label_stats: ZScoreStats | None = None, extra: dict | None = None) -> Path:
    """Write a label-estimation bundle directory.

    ``model`` is a fitted :class:`BTLPipeline`, :class:`TransferLearning`
    or decoder fitted on measured responses. ``manifest.json`` names the
    stage containers (``null`` for absent stages) and carries the
    preprocessing statistics.
    """
    path = Path(path)
    if path.exists():
        shutil.rmtree(path)
    ensure_dir(path)
    method = _method_of(model)
    man = {"format": BUNDLE_FORMAT, "method": method, "params": _params(model),
           "encoder": None, "vox2vox": None, "vox2lab": None, "voxel_pca": None, "tl": None}
    if method == "btl":
        if getattr(model, "encoder_", None) is not None:
            save_ensemble(model.encoder_, path / "encoder")
            man["encoder"] = "encoder"
        if getattr(model, "vox2vox_", None) is not None:
            save_vox2vox(model.vox2vox_, path / "vox2vox")
            man["vox2vox"] = "vox2vox"
        if getattr(model, "voxel_pca_", None) is not None:
            save_pca(model.voxel_pca_, path / "voxel_pca")
            man["voxel_pca"] = "voxel_pca"
        if getattr(model, "vox2lab_", None) is not None:
            save_vox2lab(model.vox2lab_, path / "vox2lab")
            man["vox2lab"] = "vox2lab"
            label_stats = model.label_scaler_.stats_
    elif method == "bd":
        save_vox2lab(model, path / "vox2lab")
        man["vox2lab"] = "vox2lab"
    else:
        save_tl(model, path / "tl")
        man["tl"] = "tl"
    man["preprocessing"] = {
        "responses": None if response_stats is None else response_stats.to_dict(),
        "labels": None if label_stats is None else label_stats.to_dict()}
    if extra:
        man.update(extra)
    write_json(path / "manifest.json", man)
    return path


def _scaler(stats: ZScoreStats) -> ZScorer:
    scaler = ZScorer()
    scaler.mean_, scaler.scale_ = stats.means, stats.stds
    scaler.n_features_in_ = stats.means.shape[0]
    return scaler


def read_bundle_manifest(path) -> dict:
    path = Path(path)
    man = read_json(path / "manifest.json")
    if man.get("format") != BUNDLE_FORMAT:
        raise MatrixFormatError(f"{path}: unsupported bundle format {man.get('format')!r}")
    return man


def load_bundle(path):
    """Inverse of :func:`save_bundle`; the manifest is kept as ``manifest_``."""
    path = Path(path)
    man = read_bundle_manifest(path)
    params = man["params"]
    method = man.get("method", "btl")
    if method == "btl":
        for k in ("encoder_delays", "vox2vox_delays", "leads", "alphas"):
            params[k] = tuple(params[k])
        model = BTLPipeline(**params)
        model.encoder_ = load_ensemble(path / man["encoder"]) if man["encoder"] else None
        model.vox2vox_ = load_vox2vox(path / man["vox2vox"]) if man["vox2vox"] else None
        model.voxel_pca_ = load_pca(path / man["voxel_pca"]) if man["voxel_pca"] else None
        if man["vox2lab"]:
            model.vox2lab_ = load_vox2lab(path / man["vox2lab"])
            model.label_scaler_ = _scaler(ZScoreStats.from_dict(man["preprocessing"]["labels"]))
    elif method == "bd":
        model = load_vox2lab(path / man["vox2lab"])
    elif method in ("tl-single", "tl-multi"):
        model = load_tl(path / man["tl"])
    else:
        raise MatrixFormatError(f"{path}: unknown bundle method {method!r}")
    model.manifest_ = man
    return model


def bundle_stats(man: dict, key: str) -> ZScoreStats | None:
    d = man.get("preprocessing", {}).get(key)
    return None if d is None else ZScoreStats.from_dict(d)
