"""End-to-end train / predict / eval pipeline.

Training: per image, contrast-augmented copies are tiled, run through the
pretrained network, and mosaicked into cores; a single normalizer is fitted
over every training core (augmented copies included); a seeded random
subset of rows per core trains the DBN (RBM pretraining, then supervised
fine-tuning); the model, normalizer, and run provenance persist to one CSDM
file, with a text log and key=value metrics file beside it.

Prediction: the full core of each image is built tile by tile, normalized
with the stored parameters, and streamed through the DBN in bounded-size
row batches; the per-pixel labels are reassembled into an image of the
input's dimensions.

Everything is deterministic given the configured seed.
"""
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import dbn, images, metrics, model_io, network, sampler
from .errors import ValidationError

PREDICT_BATCH_ROWS = 65536


@dataclass
class RunConfig:
    mode: str = "train"
    images_dir: str = ""
    labels_dir: str = ""
    weights_path: str = ""
    palette_path: str = ""
    model_path: str = ""
    output: str = ""
    taps_spec: str = "default"
    samples_per_image: int = 500
    stride: int = 112
    contrast_factors: list = field(default_factory=lambda: [0.8, 1.0, 1.2])
    seed: int | None = None
    head: str = "logistic"
    hidden_sizes: list = field(default_factory=lambda: [1024, 512, 128])
    pretrain_epochs: int = 10
    pretrain_lr: float = 0.01
    gibbs_k: int = 1
    n_chains: int = 15
    epochs: int = 20
    lr: float = 0.1
    batch: int = 64
    l1: float = 1e-5
    l2: float = 1e-4
    dropout: float = 0.5
    stratified: bool = False
    validation_dir: str = ""
    validation_labels_dir: str = ""
    early_stop: bool = False
    cache_dir: str = ""


def resolve_taps(model, spec):
    if spec in ("", "default"):
        return network.default_taps(model)
    taps = network.TapSet([name.strip() for name in spec.split(",") if name.strip()])
    taps.validate(model)
    return taps


def list_images(directory):
    names = sorted(f for f in os.listdir(directory) if f.endswith((".png", ".raw")))
    return [os.path.join(directory, f) for f in names]


def _label_path(labels_dir, image_path):
    stem = os.path.splitext(os.path.basename(image_path))[0]
    for ext in (".png", ".raw"):
        candidate = os.path.join(labels_dir, stem + ext)
        if os.path.exists(candidate):
            return candidate
    raise ValidationError(f"no label image for {os.path.basename(image_path)}")


def _image_core(image, model, taps, stride, cache_dir, cache_key):
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        path = os.path.join(cache_dir, cache_key + ".core")
        if os.path.exists(path):
            return sampler.load_core(path)
        core = sampler.extract_core(image, model, taps, stride)
        sampler.save_core(path, core)
        return core
    return sampler.extract_core(image, model, taps, stride)


def _gather_training_cores(config, model, taps, palette, log):
    image_paths = list_images(config.images_dir)
    if not image_paths:
        raise ValidationError(f"no training images in {config.images_dir}")
    cores, target_lists = [], []
    for path in image_paths:
        image = images.load_image(path)
        label_path = _label_path(config.labels_dir, path)
        label = images.load_image(label_path)
        if label.shape[1:] != image.shape[1:]:
            raise ValidationError(
                f"{os.path.basename(path)}: label size {label.shape[1:]} does "
                f"not match image size {image.shape[1:]}")
        targets = sampler.create_targets(label, palette, image.shape[1:])
        variants = sampler.augment_contrast(image, config.contrast_factors)
        for vi, variant in enumerate(variants):
            key = f"{os.path.splitext(os.path.basename(path))[0]}.c{vi}"
            cores.append(_image_core(variant, model, taps, config.stride,
                                     config.cache_dir, key))
            target_lists.append(targets)
        log(f"core built: {os.path.basename(path)} "
            f"({len(variants)} contrast variants, k={cores[-1].k})")
    return cores, target_lists


def _draw_samples(config, cores, target_lists, norm):
    features, labels = [], []
    for j, (core, targets) in enumerate(zip(cores, target_lists)):
        n = min(config.samples_per_image, core.width * core.height)
        piece = sampler.sample_core(core, n, [config.seed, j], targets,
                                    stratified=config.stratified, image_id=j)
        features.append(sampler.apply_normalizer(norm, piece.features))
        labels.append(piece.targets)
    return sampler.CoreSample(np.vstack(features), np.concatenate(labels),
                              np.zeros((0, 3)))


def train_command(config: RunConfig):
    """Full training run; writes the CSDM model plus .log and .metrics files."""
    if config.seed is None:
        raise ValidationError("training requires an explicit --seed")
    model = network.load_weights(config.weights_path)
    taps = resolve_taps(model, config.taps_spec)
    palette = images.load_palette(config.palette_path)

    log_lines = []

    def log(message):
        log_lines.append(message)

    cores, target_lists = _gather_training_cores(config, model, taps, palette, log)
    norm = sampler.fit_normalizer(cores)
    train_sample = _draw_samples(config, cores, target_lists, norm)
    log(f"training rows: {train_sample.features.shape[0]} x k={norm.k}")

    validation = None
    if config.validation_dir:
        val_config = RunConfig(**{**config.__dict__,
                                  "images_dir": config.validation_dir,
                                  "labels_dir": config.validation_labels_dir
                                  or config.labels_dir,
                                  "contrast_factors": [1.0]})
        val_cores, val_targets = _gather_training_cores(val_config, model, taps,
                                                        palette, log)
        validation = _draw_samples(val_config, val_cores, val_targets, norm)

    sizes = [norm.k] + list(config.hidden_sizes)
    dbn_model, recon_history = dbn.pretrain_stack(
        sizes, train_sample.features, config.pretrain_epochs,
        lr=config.pretrain_lr, gibbs_k=config.gibbs_k, seed=config.seed,
        batch_size=config.batch, n_chains=config.n_chains)
    for layer, errors in enumerate(recon_history):
        if errors:
            log(f"rbm layer {layer}: reconstruction {errors[0]:.6f} -> "
                f"{errors[-1]:.6f}")

    n_out = palette.num_classes if config.head == "logistic" else 1
    dbn_model.init_head(config.head, n_out, seed=config.seed)
    if config.head == "linear":
        train_sample = sampler.CoreSample(
            train_sample.features,
            train_sample.targets.astype(np.float64) / max(n_out, 1),
            train_sample.coords)
    ft = dbn.FineTuneConfig(lr=config.lr, epochs=config.epochs,
                            batch=config.batch, l1=config.l1, l2=config.l2,
                            dropout=config.dropout, seed=config.seed,
                            early_stop=config.early_stop)
    dbn_model, report = dbn.fine_tune(dbn_model, train_sample, ft, validation)
    report.recon_errors = recon_history
    for epoch, loss in enumerate(report.losses):
        log(f"epoch {epoch}: loss {loss:.6f}" +
            (f" val {report.val_metrics[epoch]:.6f}"
             if epoch < len(report.val_metrics) else ""))

    provenance = {
        "seed": config.seed,
        "taps": list(taps.tap_names),
        "stride": config.stride,
        "contrast_factors": list(config.contrast_factors),
        "samples_per_image": config.samples_per_image,
        "head": config.head,
        "hidden_sizes": list(config.hidden_sizes),
        "pretrain": {"epochs": config.pretrain_epochs, "lr": config.pretrain_lr,
                     "gibbs_k": config.gibbs_k, "n_chains": config.n_chains},
        "fine_tune": {"epochs": config.epochs, "lr": config.lr,
                      "batch": config.batch, "l1": config.l1, "l2": config.l2,
                      "dropout": config.dropout},
        "num_classes": palette.num_classes,
    }
    trained = model_io.TrainedModel(dbn_model, norm, provenance)
    model_io.save_model(config.output, trained)

    with open(config.output + ".log", "w", encoding="utf-8") as fh:
        fh.write("\n".join(log_lines) + "\n")
    with open(config.output + ".metrics", "w", encoding="utf-8") as fh:
        for epoch, loss in enumerate(report.losses):
            fh.write(f"train_loss.{epoch}={loss:.10f}\n")
        for epoch, value in enumerate(report.val_metrics):
            fh.write(f"validation.{epoch}={value:.10f}\n")
        if report.final_val is not None:
            fh.write(f"final_validation={report.final_val:.10f}\n")
    return trained, report


def predict_image(trained, model, taps, image, config) -> np.ndarray:
    core = sampler.extract_core(image, model, taps, config.stride)
    if core.k != trained.k:
        raise ValidationError(
            f"feature count mismatch: core has k={core.k}, model was trained "
            f"with k={trained.k}")
    outputs = []
    for start in range(0, core.rows.shape[0], PREDICT_BATCH_ROWS):
        rows = sampler.apply_normalizer(trained.normalizer,
                                        core.rows[start:start + PREDICT_BATCH_ROWS])
        outputs.append(dbn.predict(trained.dbn, rows))
    flat = np.concatenate(outputs)
    if trained.dbn.head_kind == "logistic":
        return flat.reshape(core.height, core.width)
    return flat.reshape(core.height, core.width, -1)[:, :, 0]


def predict_command(config: RunConfig):
    """Label every image in the input directory; returns written paths."""
    trained = model_io.load_model(config.model_path)
    model = network.load_weights(config.weights_path)
    taps_spec = config.taps_spec
    if taps_spec in ("", "default") and trained.provenance.get("taps"):
        taps = network.TapSet(list(trained.provenance["taps"]))
        taps.validate(model)
    else:
        taps = resolve_taps(model, taps_spec)
    stride = trained.provenance.get("stride", config.stride)
    config = RunConfig(**{**config.__dict__, "stride": stride})

    palette = None
    if trained.dbn.head_kind == "logistic":
        if config.palette_path:
            palette = images.load_palette(config.palette_path)
        else:
            palette = _provenance_palette(trained)

    os.makedirs(config.output, exist_ok=True)
    written = []
    for path in list_images(config.images_dir):
        image = images.load_image(path)
        result = predict_image(trained, model, taps, image, config)
        stem = os.path.splitext(os.path.basename(path))[0]
        if trained.dbn.head_kind == "logistic":
            out_path = os.path.join(config.output, stem + ".png")
            images.save_label_png(out_path, result, palette)
        else:
            out_path = os.path.join(config.output, stem + ".raw")
            images.write_raw(out_path, result)
        written.append(out_path)
    return written


def _provenance_palette(trained):
    raise ValidationError(
        "predict with a classification model needs --palette to color the output")


def eval_command(config: RunConfig):
    palette = images.load_palette(config.palette_path)
    report = metrics.evaluate(config.images_dir, config.labels_dir, palette)
    text = metrics.format_report(report)
    if config.output:
        with open(config.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    return report, text


def provenance_json(trained):
    return json.dumps(trained.provenance, sort_keys=True, indent=2)
