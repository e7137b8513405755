"""Cross-domain GAN training for both steps, sample generation and baseline models."""
import csv
import hashlib
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import structlog

from apps.hydride_gan.config import config
from apps.hydride_gan.services.encoding import (
    SAMPLE_SIZE,
    BlockNormalizer,
    DomainDataset,
    DomainTag,
    EncodedSample,
)
from apps.hydride_gan.services.geometry import GeoConfig, GeoMode, geo_losses
from apps.hydride_gan.services.neuralnet import (
    AdamState,
    MlpGrads,
    MlpParams,
    MlpSpec,
    adam_step,
    backward,
    forward,
    load_networks,
    mlp_init,
    save_networks,
)
from apps.hydride_gan.utils.error_handler import (
    ConfigError,
    DimensionMismatch,
    HydrideGanError,
    InvariantViolation,
    NonFiniteLoss,
)

logger = structlog.get_logger()

STEP1 = "step1"
STEP2 = "step2"

# per-batch terms, in CSV column order
LOSS_TERMS = (
    "adv_fwd", "rec_a", "adv_bwd", "rec_b", "geo_lower", "geo_upper",
    "gen_total", "disc_a", "disc_b", "disc_total",
)
GEO_COUNTERS = ("geo_no_pairs", "geo_failed")
# seconds since training started, at the end of each epoch
WALL_CLOCK = "wall_clock_s"


class DistanceMetric(str, Enum):
    L2 = "l2"
    L1 = "l1"


@dataclass
class HyperParams:
    """
    Loss weights and training constants.

    The six weights scale, in order: the forward adversarial term, the A-side
    reconstruction, the backward adversarial term, the B-side reconstruction,
    the lower distance constraint and the upper distance constraint.
    """

    adv_fwd_weight: float = 1.0
    rec_a_weight: float = 1.0
    adv_bwd_weight: float = 1.0
    rec_b_weight: float = 1.0
    geo_lower_weight: float = 1.0
    geo_upper_weight: float = 1.0
    metric: DistanceMetric = DistanceMetric.L2
    learning_rate: float = field(default_factory=lambda: config.DEFAULT_LEARNING_RATE)
    beta1: float = field(default_factory=lambda: config.DEFAULT_BETA1)
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = field(default_factory=lambda: config.DEFAULT_EPOCHS)
    batch_size: int = field(default_factory=lambda: config.DEFAULT_BATCH_SIZE)
    seed: int = 0
    hidden_layers: int = field(default_factory=lambda: config.HIDDEN_LAYERS)
    hidden_units: int = field(default_factory=lambda: config.HIDDEN_UNITS)
    geo: GeoConfig = field(default_factory=GeoConfig)
    geo_mode: GeoMode = GeoMode.LITERAL
    decode_threshold: Optional[float] = None
    normalize: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        self.metric = DistanceMetric(self.metric)
        self.geo_mode = GeoMode(self.geo_mode)
        if any(w < 0 for w in self.weights):
            raise ConfigError(f"loss weights must be >= 0, got {self.weights}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.hidden_layers < 0 or self.hidden_units < 1:
            raise ConfigError("hidden_layers must be >= 0 and hidden_units >= 1")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")

    @property
    def weights(self) -> Tuple[float, ...]:
        return (
            self.adv_fwd_weight, self.rec_a_weight, self.adv_bwd_weight,
            self.rec_b_weight, self.geo_lower_weight, self.geo_upper_weight,
        )

    @property
    def geometry_enabled(self) -> bool:
        return self.geo_mode != GeoMode.OFF and (
            self.geo_lower_weight > 0 or self.geo_upper_weight > 0
        )

    def without_constraints(self) -> "HyperParams":
        return replace(self, geo_lower_weight=0.0, geo_upper_weight=0.0)

    def adam_state(self, p: MlpParams) -> AdamState:
        return AdamState.zeros_like(
            p, alpha=self.learning_rate, beta1=self.beta1, beta2=self.beta2, eps=self.eps
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["metric"] = self.metric.value
        data["geo_mode"] = self.geo_mode.value
        data["geo"] = self.geo.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HyperParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown hyper-parameters: {sorted(unknown)}")
        values = dict(data)
        if "geo" in values and not isinstance(values["geo"], GeoConfig):
            values["geo"] = GeoConfig.from_dict(values["geo"])
        try:
            return cls(**values)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid hyper-parameters: {e}") from e


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"operand shapes differ: {a.shape} vs {b.shape}")


def reconstruction_loss(
    x: np.ndarray, x_rec: np.ndarray, metric: DistanceMetric = DistanceMetric.L2
) -> float:
    """Mean squared (l2) or mean absolute (l1) difference over all entries."""
    x, x_rec = np.asarray(x, dtype=np.float64), np.asarray(x_rec, dtype=np.float64)
    _check_same_shape(x, x_rec)
    diff = x_rec - x
    if DistanceMetric(metric) == DistanceMetric.L1:
        return float(np.mean(np.abs(diff)))
    return float(np.mean(diff * diff))


def reconstruction_grad(
    x: np.ndarray, x_rec: np.ndarray, metric: DistanceMetric = DistanceMetric.L2
) -> np.ndarray:
    """Gradient of `reconstruction_loss` with respect to x_rec."""
    x, x_rec = np.asarray(x, dtype=np.float64), np.asarray(x_rec, dtype=np.float64)
    _check_same_shape(x, x_rec)
    diff = x_rec - x
    if DistanceMetric(metric) == DistanceMetric.L1:
        return np.sign(diff) / diff.size
    return 2.0 * diff / diff.size


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(1, -1) if x.ndim == 1 else x


def _gen_adversarial(d: MlpParams, fake: np.ndarray) -> Tuple[float, np.ndarray]:
    """-mean log D(fake) and its gradient with respect to `fake`."""
    y, cache = forward(d, fake)
    loss = float(-np.mean(np.log(y)))
    _, grad_fake = backward(cache, -1.0 / (y.shape[0] * y))
    return loss, grad_fake


def _disc_adversarial(
    d: MlpParams, real: np.ndarray, fake: np.ndarray
) -> Tuple[float, MlpGrads]:
    """-mean log D(real) - mean log(1 - D(fake)) and its parameter gradients."""
    y_real, cache_real = forward(d, real)
    y_fake, cache_fake = forward(d, fake)
    loss = float(-np.mean(np.log(y_real)) - np.mean(np.log(1.0 - y_fake)))
    grads_real, _ = backward(cache_real, -1.0 / (y_real.shape[0] * y_real))
    grads_fake, _ = backward(cache_fake, 1.0 / (y_fake.shape[0] * (1.0 - y_fake)))
    return loss, grads_real + grads_fake


def adversarial_gen_loss(d: MlpParams, fake: np.ndarray) -> float:
    """
    Generator adversarial loss -mean log D(fake).

    Args:
        d: Discriminator params
        fake: Generated batch (B, 216) or a single sample

    Returns:
        Batch-averaged loss, always finite thanks to the sigmoid clamp
    """
    return _gen_adversarial(d, _as_batch(fake))[0]


def adversarial_disc_loss(d: MlpParams, real: np.ndarray, fake: np.ndarray) -> float:
    """Discriminator loss -mean log D(real) - mean log(1 - D(fake))."""
    return _disc_adversarial(d, _as_batch(real), _as_batch(fake))[0]


@dataclass
class GanStepModel:
    """Two generators and two discriminators of one training step, with optimizer states."""

    g_fwd: MlpParams
    g_bwd: MlpParams
    d_a: MlpParams
    d_b: MlpParams
    step_tag: str
    species_labels: Tuple[Optional[str], ...]
    normalizer: BlockNormalizer = field(default_factory=BlockNormalizer.identity)
    optimizers: Dict[str, AdamState] = field(default_factory=dict)

    NETWORKS = ("g_fwd", "g_bwd", "d_a", "d_b")

    def __post_init__(self):
        if self.step_tag not in (STEP1, STEP2):
            raise InvariantViolation(f"unknown step tag '{self.step_tag}'")
        for name in ("g_fwd", "g_bwd"):
            dims = getattr(self, name).spec.layer_dims
            if dims[0] != SAMPLE_SIZE or dims[-1] != SAMPLE_SIZE:
                raise InvariantViolation(f"{name} must map {SAMPLE_SIZE} -> {SAMPLE_SIZE}")
        for name in ("d_a", "d_b"):
            dims = getattr(self, name).spec.layer_dims
            if dims[0] != SAMPLE_SIZE or dims[-1] != 1:
                raise InvariantViolation(f"{name} must map {SAMPLE_SIZE} -> 1")

    @classmethod
    def create(
        cls,
        step_tag: str,
        hp: HyperParams,
        species_labels: Tuple[Optional[str], ...],
        normalizer: Optional[BlockNormalizer] = None,
    ) -> "GanStepModel":
        """Freshly initialized model; seeds derive from (hp.seed, step_tag)."""
        seeds = np.random.SeedSequence([hp.seed, 1 if step_tag == STEP1 else 2]).generate_state(4)
        g_spec = MlpSpec.generator(SAMPLE_SIZE, hp.hidden_layers, hp.hidden_units)
        d_spec = MlpSpec.discriminator(SAMPLE_SIZE, hp.hidden_layers, hp.hidden_units)
        model = cls(
            g_fwd=mlp_init(g_spec, int(seeds[0])),
            g_bwd=mlp_init(g_spec, int(seeds[1])),
            d_a=mlp_init(d_spec, int(seeds[2])),
            d_b=mlp_init(d_spec, int(seeds[3])),
            step_tag=step_tag,
            species_labels=tuple(species_labels),
            normalizer=normalizer or BlockNormalizer.identity(),
        )
        model.reset_optimizers(hp)
        return model

    def reset_optimizers(self, hp: HyperParams) -> None:
        self.optimizers = {name: hp.adam_state(getattr(self, name)) for name in self.NETWORKS}

    def networks(self) -> Dict[str, MlpParams]:
        return {name: getattr(self, name) for name in self.NETWORKS}

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in self.NETWORKS:
            digest.update(getattr(self, name).checksum().encode("ascii"))
        return digest.hexdigest()

    def save(self, path, extra: Optional[Dict[str, Any]] = None) -> str:
        meta = {
            "step_tag": self.step_tag,
            "species_labels": list(self.species_labels),
            "normalizer": self.normalizer.to_dict(),
            "model_checksum": self.checksum(),
        }
        meta.update(extra or {})
        return save_networks(path, self.networks(), meta)

    @classmethod
    def load(cls, path, hp: Optional[HyperParams] = None) -> "GanStepModel":
        networks, meta = load_networks(path)
        model = cls(
            step_tag=meta["step_tag"],
            species_labels=tuple(meta["species_labels"]),
            normalizer=BlockNormalizer.from_dict(meta["normalizer"]),
            **{name: networks[name] for name in cls.NETWORKS},
        )
        model.reset_optimizers(hp or HyperParams(epochs=1))
        return model


@dataclass
class GeneratorPass:
    """Generator-side losses of one batch and the gradients of their weighted sum."""

    terms: Dict[str, float]
    grads: Dict[str, MlpGrads]
    geo_no_pairs: int = 0
    geo_failed: int = 0


def _geometry_terms(
    model: GanStepModel, fakes: List[np.ndarray], hp: HyperParams
) -> Tuple[float, float, List[np.ndarray], int, int]:
    """
    Mean constraint losses over all generated samples, evaluated in raw units.

    Returns:
        (lower, upper, weighted gradients per fake batch in network units,
         samples without penalized pairs, samples that could not be evaluated)
    """
    total = sum(f.shape[0] for f in fakes)
    lower = upper = 0.0
    no_pairs = failed = 0
    grads = []
    for batch in fakes:
        raw = np.array([model.normalizer.inverse(row) for row in batch])
        grad_batch = np.zeros_like(batch)
        for k, row in enumerate(raw):
            sample = EncodedSample.from_flat(row, model.species_labels)
            try:
                result = geo_losses(sample, hp.geo, hp.geo_mode, hp.decode_threshold)
            except HydrideGanError:
                failed += 1
                continue
            if result.no_penalized_pairs:
                no_pairs += 1
                continue
            lower += result.lower / total
            upper += result.upper / total
            grad_raw = (
                hp.geo_lower_weight * result.grad_lower
                + hp.geo_upper_weight * result.grad_upper
            ).reshape(SAMPLE_SIZE) / total
            grad_batch[k] = model.normalizer.inverse_gradient(grad_raw)
        grads.append(grad_batch)
    return lower, upper, grads, no_pairs, failed


def generator_objective(
    model: GanStepModel, xa: np.ndarray, yb: np.ndarray, hp: HyperParams,
    with_geometry: Optional[bool] = None,
) -> GeneratorPass:
    """
    Weighted generator loss and its gradients for both generators.

    Batches are in network (normalized) units. The forward generator maps the A
    side to the B side and the backward generator maps B to A; the cycle
    reconstructions close both loops.

    Args:
        model: Current model
        xa: Batch from the A-side domain, shape (B, 216)
        yb: Batch from the B-side domain, shape (B', 216)
        hp: Weights, metric and geometry settings
        with_geometry: Force geometry on/off (default: step2 and weights active)

    Returns:
        GeneratorPass with every term and gradients for g_fwd and g_bwd
    """
    xa, yb = _as_batch(xa), _as_batch(yb)
    if with_geometry is None:
        with_geometry = model.step_tag == STEP2 and hp.geometry_enabled
    w1, w2, w3, w4, w5, w6 = hp.weights

    fake_b, cache_fwd_a = forward(model.g_fwd, xa)
    rec_a, cache_bwd_rec = forward(model.g_bwd, fake_b)
    fake_a, cache_bwd_b = forward(model.g_bwd, yb)
    rec_b, cache_fwd_rec = forward(model.g_fwd, fake_a)

    adv_fwd, grad_fake_b = _gen_adversarial(model.d_b, fake_b)
    adv_bwd, grad_fake_a = _gen_adversarial(model.d_a, fake_a)
    grad_fake_b = w1 * grad_fake_b
    grad_fake_a = w3 * grad_fake_a

    rec_a_loss = reconstruction_loss(xa, rec_a, hp.metric)
    rec_b_loss = reconstruction_loss(yb, rec_b, hp.metric)
    bwd_from_rec, grad_via_rec_a = backward(
        cache_bwd_rec, w2 * reconstruction_grad(xa, rec_a, hp.metric)
    )
    fwd_from_rec, grad_via_rec_b = backward(
        cache_fwd_rec, w4 * reconstruction_grad(yb, rec_b, hp.metric)
    )
    grad_fake_b = grad_fake_b + grad_via_rec_a
    grad_fake_a = grad_fake_a + grad_via_rec_b

    geo_lower = geo_upper = 0.0
    no_pairs = failed = 0
    if with_geometry:
        geo_lower, geo_upper, (geo_b, geo_a), no_pairs, failed = _geometry_terms(
            model, [fake_b, fake_a], hp
        )
        grad_fake_b = grad_fake_b + geo_b
        grad_fake_a = grad_fake_a + geo_a

    fwd_grads, _ = backward(cache_fwd_a, grad_fake_b)
    bwd_grads, _ = backward(cache_bwd_b, grad_fake_a)

    terms = {
        "adv_fwd": adv_fwd,
        "rec_a": rec_a_loss,
        "adv_bwd": adv_bwd,
        "rec_b": rec_b_loss,
        "geo_lower": geo_lower,
        "geo_upper": geo_upper,
    }
    terms["gen_total"] = (
        w1 * adv_fwd + w2 * rec_a_loss + w3 * adv_bwd + w4 * rec_b_loss
        + w5 * geo_lower + w6 * geo_upper
    )
    return GeneratorPass(
        terms=terms,
        grads={"g_fwd": fwd_grads + fwd_from_rec, "g_bwd": bwd_grads + bwd_from_rec},
        geo_no_pairs=no_pairs,
        geo_failed=failed,
    )


def discriminator_objective(
    model: GanStepModel, xa: np.ndarray, yb: np.ndarray
) -> Tuple[Dict[str, float], Dict[str, MlpGrads]]:
    """Both discriminator losses on real batches against current generator outputs."""
    xa, yb = _as_batch(xa), _as_batch(yb)
    fake_b, _ = forward(model.g_fwd, xa)
    fake_a, _ = forward(model.g_bwd, yb)
    disc_a, grads_a = _disc_adversarial(model.d_a, xa, fake_a)
    disc_b, grads_b = _disc_adversarial(model.d_b, yb, fake_b)
    terms = {"disc_a": disc_a, "disc_b": disc_b, "disc_total": disc_a + disc_b}
    return terms, {"d_a": grads_a, "d_b": grads_b}


def _step_losses(
    model: GanStepModel, xa: np.ndarray, yb: np.ndarray, hp: HyperParams, with_geometry: bool
) -> Tuple[float, float, Dict[str, float]]:
    gen = generator_objective(model, xa, yb, hp, with_geometry=with_geometry)
    disc_terms, _ = discriminator_objective(model, xa, yb)
    breakdown = {**gen.terms, **disc_terms}
    return breakdown["gen_total"], breakdown["disc_total"], breakdown


def step1_losses(
    model: GanStepModel, batch_a: np.ndarray, batch_b: np.ndarray, hp: HyperParams
) -> Tuple[float, float, Dict[str, float]]:
    """
    Step-1 generator and discriminator losses (no geometry).

    Returns:
        (generator total, discriminator total, every term by name)
    """
    return _step_losses(model, batch_a, batch_b, hp, with_geometry=False)


def step2_losses(
    model: GanStepModel, batch_a: np.ndarray, batch_b: np.ndarray, hp: HyperParams
) -> Tuple[float, float, Dict[str, float]]:
    """Step-2 losses: the step-1 terms plus the weighted geometric constraints."""
    return _step_losses(model, batch_a, batch_b, hp, with_geometry=hp.geometry_enabled)


@dataclass
class TrainLog:
    """Per-epoch batch means of every loss term, with the seed and elapsed wall clock."""

    seed: int
    step_tag: str
    records: List[Dict[str, float]] = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    COLUMNS = ("epoch", "seed") + LOSS_TERMS + GEO_COUNTERS + (WALL_CLOCK,)

    def column(self, name: str) -> np.ndarray:
        if name == "seed":
            return np.full(len(self.records), self.seed, dtype=np.float64)
        return np.array([record[name] for record in self.records], dtype=np.float64)

    def to_csv(self, path) -> None:
        # every column but the last is a pure function of the seed
        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(self.COLUMNS)
            for record in self.records:
                writer.writerow(
                    [int(record["epoch"]), int(self.seed)]
                    + [repr(float(record[name])) for name in self.COLUMNS[2:]]
                )

    @classmethod
    def from_csv(cls, path, step_tag: str = STEP1) -> "TrainLog":
        with Path(path).open("r", newline="", encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
        records = [
            {name: (int(row[name]) if name == "epoch" else float(row[name]))
             for name in cls.COLUMNS if name != "seed"}
            for row in rows
        ]
        seed = int(rows[0]["seed"]) if rows else 0
        wall_clock = records[-1][WALL_CLOCK] if records else 0.0
        return cls(seed=seed, step_tag=step_tag, records=records, wall_clock_seconds=wall_clock)


def _batch_size(hp: HyperParams, sizes: List[int]) -> int:
    smallest = min(sizes)
    if hp.batch_size > smallest:
        logger.warning("batch_size_clamped", requested=hp.batch_size, effective=smallest)
        return smallest
    return hp.batch_size


def _raise_if_non_finite(values: Dict[str, float], epoch: int, batch: int) -> None:
    if not all(np.isfinite(v) for v in values.values()):
        raise NonFiniteLoss(epoch, batch, {k: float(v) for k, v in values.items()})


def _log_epoch(log: TrainLog, record: Dict[str, float], epochs: int, run_id: Optional[str]):
    epoch = int(record["epoch"])
    level = "info" if epoch % max(config.LOG_EVERY, 1) == 0 or epoch == epochs else "debug"
    getattr(logger, level)(
        "epoch_completed",
        run_id=run_id,
        step=log.step_tag,
        seed=log.seed,
        epoch=epoch,
        gen_total=round(record["gen_total"], 6),
        disc_total=round(record["disc_total"], 6),
        geo_lower=round(record["geo_lower"], 6),
        geo_upper=round(record["geo_upper"], 6),
    )


def train_step(
    model: GanStepModel,
    data_a: DomainDataset,
    data_b: DomainDataset,
    hp: HyperParams,
    checkpoint_dir: Optional[Path] = None,
    run_id: Optional[str] = None,
) -> Tuple[GanStepModel, TrainLog]:
    """
    Alternating adversarial training; the model is updated in place and returned.

    Each epoch shuffles both domains with a seeded generator and walks paired
    mini-batches; every batch gets one discriminator update then one generator
    update.

    Args:
        model: Model whose step tag matches the datasets
        data_a: A-side domain (AH in step 1, AHBg in step 2)
        data_b: B-side domain (BH in step 1, BHAg in step 2)
        hp: Hyper-parameters
        checkpoint_dir: Directory for periodic checkpoints (hp.checkpoint_every)
        run_id: Context for log events

    Returns:
        (model, TrainLog with one record per epoch)

    Raises:
        NonFiniteLoss: a loss became NaN or infinite
    """
    expected = {STEP1: (DomainTag.AH, DomainTag.BH), STEP2: (DomainTag.AHBG, DomainTag.BHAG)}
    if (data_a.domain_tag, data_b.domain_tag) != expected[model.step_tag]:
        raise InvariantViolation(
            f"{model.step_tag} expects domains {[t.value for t in expected[model.step_tag]]}, "
            f"got {[data_a.domain_tag.value, data_b.domain_tag.value]}"
        )
    xa = np.array([model.normalizer.transform(row) for row in data_a.flat()])
    yb = np.array([model.normalizer.transform(row) for row in data_b.flat()])
    batch_size = _batch_size(hp, [len(xa), len(yb)])
    n_batches = min(len(xa), len(yb)) // batch_size
    with_geometry = model.step_tag == STEP2 and hp.geometry_enabled
    rng = np.random.default_rng(np.random.SeedSequence([hp.seed, 3 if model.step_tag == STEP1 else 4]))

    log = TrainLog(seed=hp.seed, step_tag=model.step_tag)
    started = time.perf_counter()
    logger.info(
        "training_started",
        run_id=run_id,
        step=model.step_tag,
        seed=hp.seed,
        epochs=hp.epochs,
        batch_size=batch_size,
        samples_a=len(xa),
        samples_b=len(yb),
        geometry=with_geometry,
    )
    for epoch in range(1, hp.epochs + 1):
        perm_a = rng.permutation(len(xa))
        perm_b = rng.permutation(len(yb))
        sums = {name: 0.0 for name in LOSS_TERMS + GEO_COUNTERS}
        for k in range(n_batches):
            batch_a = xa[perm_a[k * batch_size:(k + 1) * batch_size]]
            batch_b = yb[perm_b[k * batch_size:(k + 1) * batch_size]]

            disc_terms, disc_grads = discriminator_objective(model, batch_a, batch_b)
            _raise_if_non_finite(disc_terms, epoch, k)
            for name in ("d_a", "d_b"):
                updated, model.optimizers[name] = adam_step(
                    getattr(model, name), disc_grads[name], model.optimizers[name]
                )
                setattr(model, name, updated)

            gen = generator_objective(model, batch_a, batch_b, hp, with_geometry=with_geometry)
            _raise_if_non_finite(gen.terms, epoch, k)
            for name in ("g_fwd", "g_bwd"):
                if not gen.grads[name].is_finite():
                    raise NonFiniteLoss(epoch, k, {"gradient": name, **gen.terms})
                updated, model.optimizers[name] = adam_step(
                    getattr(model, name), gen.grads[name], model.optimizers[name]
                )
                setattr(model, name, updated)

            for name, value in {**disc_terms, **gen.terms}.items():
                sums[name] += value
            sums["geo_no_pairs"] += gen.geo_no_pairs
            sums["geo_failed"] += gen.geo_failed

        record: Dict[str, float] = {"epoch": epoch}
        record.update({name: sums[name] / n_batches for name in LOSS_TERMS})
        record.update({name: sums[name] for name in GEO_COUNTERS})
        record[WALL_CLOCK] = time.perf_counter() - started
        log.records.append(record)
        if record["geo_no_pairs"] or record["geo_failed"]:
            logger.warning(
                "geometry_skipped",
                run_id=run_id,
                epoch=epoch,
                no_penalized_pairs=int(record["geo_no_pairs"]),
                not_evaluable=int(record["geo_failed"]),
            )
        _log_epoch(log, record, hp.epochs, run_id)

        if checkpoint_dir is not None and hp.checkpoint_every and epoch % hp.checkpoint_every == 0:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            model.save(Path(checkpoint_dir) / f"epoch_{epoch:05d}.npz",
                       extra={"epoch": epoch, "seed": hp.seed})

    log.wall_clock_seconds = time.perf_counter() - started
    logger.info(
        "training_completed",
        run_id=run_id,
        step=model.step_tag,
        seed=hp.seed,
        seconds=round(log.wall_clock_seconds, 3),
        model_checksum=model.checksum(),
    )
    return model, log


def generate(
    model: GanStepModel,
    dataset: DomainDataset,
    count: Optional[int] = None,
) -> List[EncodedSample]:
    """
    Translate dataset samples with the generator that leaves their domain.

    AH/AHBg inputs go through the forward generator, BH/BHAg inputs through the
    backward one. Inputs are cycled when `count` exceeds the dataset size.

    Returns:
        Generated samples (occupancy unknown) in input order, with provenance
    """
    count = len(dataset) if count is None else count
    forward_side = dataset.domain_tag in (DomainTag.AH, DomainTag.AHBG)
    generator = model.g_fwd if forward_side else model.g_bwd
    indices = [k % len(dataset) for k in range(count)]
    if not indices:
        return []
    inputs = np.array([
        model.normalizer.transform(dataset.samples[k].flatten()) for k in indices
    ])
    outputs, _ = forward(generator, inputs)
    checksum = model.checksum()
    samples = []
    for k, row in zip(indices, outputs):
        samples.append(EncodedSample.from_flat(
            model.normalizer.inverse(row),
            model.species_labels,
            provenance={
                "source": dataset.sources[k],
                "source_domain": dataset.domain_tag.value,
                "generator": "g_fwd" if forward_side else "g_bwd",
                "step": model.step_tag,
                "model_checksum": checksum,
                "pseudo_binary": model.step_tag == STEP1,
            },
        ))
    return samples


# --- baselines ---------------------------------------------------------------


def sample_noise(seed: int, count: int, dim: int = SAMPLE_SIZE) -> np.ndarray:
    """Standard-normal noise matrix, identical for identical seeds."""
    return np.random.default_rng(seed).standard_normal((count, dim))


@dataclass
class ClassicGanModel:
    """Noise-to-sample generator and one discriminator over pooled real data."""

    generator: MlpParams
    discriminator: MlpParams
    species_labels: Tuple[Optional[str], ...]
    normalizer: BlockNormalizer = field(default_factory=BlockNormalizer.identity)
    optimizers: Dict[str, AdamState] = field(default_factory=dict)

    @classmethod
    def create(
        cls, hp: HyperParams, species_labels: Tuple[Optional[str], ...],
        normalizer: Optional[BlockNormalizer] = None,
    ) -> "ClassicGanModel":
        seeds = np.random.SeedSequence([hp.seed, 5]).generate_state(2)
        model = cls(
            generator=mlp_init(
                MlpSpec.generator(SAMPLE_SIZE, hp.hidden_layers, hp.hidden_units), int(seeds[0])
            ),
            discriminator=mlp_init(
                MlpSpec.discriminator(SAMPLE_SIZE, hp.hidden_layers, hp.hidden_units),
                int(seeds[1]),
            ),
            species_labels=tuple(species_labels),
            normalizer=normalizer or BlockNormalizer.identity(),
        )
        model.optimizers = {
            "generator": hp.adam_state(model.generator),
            "discriminator": hp.adam_state(model.discriminator),
        }
        return model

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.generator.checksum().encode("ascii"))
        digest.update(self.discriminator.checksum().encode("ascii"))
        return digest.hexdigest()

    def save(self, path) -> str:
        return save_networks(
            path,
            {"generator": self.generator, "discriminator": self.discriminator},
            {
                "species_labels": list(self.species_labels),
                "normalizer": self.normalizer.to_dict(),
                "model_checksum": self.checksum(),
            },
        )


def train_classic_gan(
    model: ClassicGanModel, real: np.ndarray, hp: HyperParams, run_id: Optional[str] = None
) -> Tuple[ClassicGanModel, TrainLog]:
    """
    Standard GAN training on pooled real samples (network units).

    The TrainLog uses the shared columns: the generator adversarial loss is
    logged as `adv_fwd`/`gen_total` and the discriminator loss as
    `disc_a`/`disc_total`.
    """
    real = _as_batch(real)
    batch_size = _batch_size(hp, [len(real)])
    n_batches = len(real) // batch_size
    rng = np.random.default_rng(np.random.SeedSequence([hp.seed, 6]))
    log = TrainLog(seed=hp.seed, step_tag="classic_gan")
    started = time.perf_counter()
    for epoch in range(1, hp.epochs + 1):
        perm = rng.permutation(len(real))
        gen_sum = disc_sum = 0.0
        for k in range(n_batches):
            batch = real[perm[k * batch_size:(k + 1) * batch_size]]
            fake, _ = forward(model.generator, rng.standard_normal((len(batch), SAMPLE_SIZE)))
            disc_loss, disc_grads = _disc_adversarial(model.discriminator, batch, fake)
            _raise_if_non_finite({"disc_total": disc_loss}, epoch, k)
            model.discriminator, model.optimizers["discriminator"] = adam_step(
                model.discriminator, disc_grads, model.optimizers["discriminator"]
            )

            noise = rng.standard_normal((len(batch), SAMPLE_SIZE))
            fake, cache = forward(model.generator, noise)
            gen_loss, grad_fake = _gen_adversarial(model.discriminator, fake)
            _raise_if_non_finite({"gen_total": gen_loss}, epoch, k)
            gen_grads, _ = backward(cache, grad_fake)
            model.generator, model.optimizers["generator"] = adam_step(
                model.generator, gen_grads, model.optimizers["generator"]
            )
            gen_sum += gen_loss
            disc_sum += disc_loss

        record: Dict[str, float] = {name: 0.0 for name in LOSS_TERMS + GEO_COUNTERS}
        record.update({
            "epoch": epoch,
            "adv_fwd": gen_sum / n_batches,
            "gen_total": gen_sum / n_batches,
            "disc_a": disc_sum / n_batches,
            "disc_total": disc_sum / n_batches,
            WALL_CLOCK: time.perf_counter() - started,
        })
        log.records.append(record)
        _log_epoch(log, record, hp.epochs, run_id)
    log.wall_clock_seconds = time.perf_counter() - started
    return model, log


def generate_classic(model: ClassicGanModel, count: int, seed: int) -> List[EncodedSample]:
    """Decode-ready samples from seeded noise."""
    if count < 1:
        return []
    outputs, _ = forward(model.generator, sample_noise(seed, count))
    checksum = model.checksum()
    return [
        EncodedSample.from_flat(
            model.normalizer.inverse(row),
            model.species_labels,
            provenance={
                "source": f"noise_{k:03d}",
                "generator": "classic_gan",
                "model_checksum": checksum,
                "pseudo_binary": False,
            },
        )
        for k, row in enumerate(outputs)
    ]


@dataclass
class BaselineResult:
    samples: List[EncodedSample]
    log: TrainLog
    model: Any


def run_baseline(
    kind: str,
    data_a: DomainDataset,
    data_b: DomainDataset,
    hp: HyperParams,
    normalizer: Optional[BlockNormalizer] = None,
    run_id: Optional[str] = None,
) -> BaselineResult:
    """
    Train a comparison model and emit candidates.

    Args:
        kind: "classic_gan" (noise generator on pooled data) or "discogan"
            (the step-1 model alone, outputs of both generators)
        data_a: AH domain
        data_b: BH domain
        hp: Same Adam settings and epochs as the two-step method
        normalizer: Normalization fit on the pooled data
        run_id: Context for log events

    Returns:
        BaselineResult with generated samples, TrainLog and the trained model
    """
    normalizer = normalizer or (
        BlockNormalizer.fit(data_a.samples + data_b.samples) if hp.normalize
        else BlockNormalizer.identity()
    )
    labels = data_a.labels
    if kind == "classic_gan":
        model = ClassicGanModel.create(hp, labels, normalizer)
        real = np.array([
            normalizer.transform(row) for row in np.concatenate([data_a.flat(), data_b.flat()])
        ])
        model, log = train_classic_gan(model, real, hp, run_id=run_id)
        samples = generate_classic(model, len(data_a) + len(data_b), seed=hp.seed)
    elif kind == "discogan":
        model = GanStepModel.create(STEP1, hp, labels, normalizer)
        model, log = train_step(model, data_a, data_b, hp, run_id=run_id)
        samples = generate(model, data_a) + generate(model, data_b)
    else:
        raise ConfigError(f"unknown baseline kind '{kind}'")
    logger.info("baseline_completed", run_id=run_id, kind=kind, samples=len(samples))
    return BaselineResult(samples=samples, log=log, model=model)
