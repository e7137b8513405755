"""Pipeline orchestration: run configuration, artifact layout, stages and the method comparison."""
import hashlib
import json
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from apps.hydride_gan.config import config
from apps.hydride_gan.services.crossgan import (
    STEP1,
    STEP2,
    GanStepModel,
    HyperParams,
    TrainLog,
    generate,
    run_baseline,
    train_step,
)
from apps.hydride_gan.services.encoding import (
    HYDROGEN,
    BlockNormalizer,
    DomainDataset,
    DomainTag,
    EncodedSample,
    decode,
    load_dataset,
    load_domain_dataset,
    save_dataset,
    write_dataset_manifest,
)
from apps.hydride_gan.services.feature_transfer import build_step2_datasets
from apps.hydride_gan.services.geometry import (
    GeoMode,
    ValidationReport,
    pair_distribution,
    validate_structures,
)
from apps.hydride_gan.services.poscar_io import (
    CrystalStructure,
    read_poscar_file,
    write_poscar_file,
)
from apps.hydride_gan.utils.error_handler import (
    ConfigError,
    ErrorHandler,
    HydrideGanError,
    MissingReport,
    StageFailure,
)
from apps.hydride_gan.utils.logger_utils import log_event

logger = structlog.get_logger()

project_root = Path(__file__).parent.parent.parent.parent


class Method(str, Enum):
    TWO_STEP = "crystalgan"
    TWO_STEP_UNCONSTRAINED = "crystalgan_noconstraints"
    CROSS_DOMAIN = "discogan"
    CLASSIC_GAN = "classic_gan"


# comparison table column order and headings
METHOD_LABELS = {
    Method.CLASSIC_GAN: "GAN (standard)",
    Method.CROSS_DOMAIN: "cross-domain",
    Method.TWO_STEP_UNCONSTRAINED: "two-step w/o constraints",
    Method.TWO_STEP: "two-step with constraints",
}


def _write_json(path: Path, data: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunConfig:
    """Everything needed to reproduce one pipeline run."""

    domain_a_dir: Path
    domain_b_dir: Path
    element_a: str
    element_b: str
    output_dir: Path = field(default_factory=lambda: Path(config.OUTPUT_DIR))
    hyper: HyperParams = field(default_factory=HyperParams)
    method: Method = Method.TWO_STEP
    seeds: List[int] = field(default_factory=lambda: [0])
    system: str = ""
    pdf_bin_width: float = 0.1
    validation_workers: int = 1

    def __post_init__(self):
        self.domain_a_dir = Path(self.domain_a_dir)
        self.domain_b_dir = Path(self.domain_b_dir)
        self.output_dir = Path(self.output_dir)
        try:
            self.method = Method(self.method)
        except ValueError as e:
            raise ConfigError(
                f"unknown method '{self.method}' (choose from {[m.value for m in Method]})"
            ) from e
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.seeds = [int(s) for s in self.seeds]
        if HYDROGEN in (self.element_a, self.element_b) or self.element_a == self.element_b:
            raise ConfigError(
                f"element_a and element_b must be two distinct metals, got "
                f"{self.element_a!r} and {self.element_b!r}"
            )
        if not self.pdf_bin_width > 0:
            raise ConfigError("pdf_bin_width must be > 0")
        self.system = self.system or f"{self.element_a}-{self.element_b}-{HYDROGEN}"

    def check_paths(self) -> None:
        for name, path in (("domain_a_dir", self.domain_a_dir), ("domain_b_dir", self.domain_b_dir)):
            if not path.is_dir():
                raise ConfigError(f"{name} does not exist or is not a directory: {path}")

    def hyper_for(self, seed: int) -> HyperParams:
        """Effective hyper-parameters of one seed; the unconstrained method zeroes both geometry weights."""
        hp = replace(self.hyper, seed=seed)
        if self.method == Method.TWO_STEP_UNCONSTRAINED:
            hp = hp.without_constraints()
        return hp

    def run_dir(self, seed: int) -> Path:
        return self.output_dir / self.method.value / f"seed_{seed}"

    def with_overrides(
        self,
        method: Optional[str] = None,
        seeds: Optional[Sequence[int]] = None,
        output_dir: Optional[str] = None,
        epochs: Optional[int] = None,
        geo_mode: Optional[str] = None,
    ) -> "RunConfig":
        """Apply command-line overrides on top of the file values."""
        hyper = self.hyper
        try:
            if epochs is not None:
                hyper = replace(hyper, epochs=int(epochs))
            if geo_mode is not None:
                hyper = replace(hyper, geo_mode=GeoMode(geo_mode))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return replace(
            self,
            hyper=hyper,
            method=method if method is not None else self.method,
            seeds=list(seeds) if seeds else self.seeds,
            output_dir=Path(output_dir) if output_dir is not None else self.output_dir,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "domain_a_dir": str(self.domain_a_dir),
            "domain_b_dir": str(self.domain_b_dir),
            "element_a": self.element_a,
            "element_b": self.element_b,
            "output_dir": str(self.output_dir),
            "hyper": self.hyper.to_dict(),
            "method": self.method.value,
            "seeds": self.seeds,
            "system": self.system,
            "pdf_bin_width": self.pdf_bin_width,
            "validation_workers": self.validation_workers,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        required = ("domain_a_dir", "domain_b_dir", "element_a", "element_b")
        missing = [key for key in required if key not in data]
        if missing:
            raise ConfigError(f"run config misses {missing}")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        values = dict(data)
        values["hyper"] = HyperParams.from_dict(values.get("hyper", {}))
        try:
            return cls(**values)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid run config: {e}") from e

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        """
        Load a JSON run configuration.

        Args:
            path: Config file; relative paths are tried from the working
                directory first, then from the project root

        Returns:
            RunConfig
        """
        config_path = Path(path)
        if not config_path.is_absolute() and not config_path.exists():
            config_path = project_root / config_path
        try:
            data = _read_json(config_path)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        logger.info("run_config_loaded", path=str(config_path), method=data.get("method"))
        return cls.from_dict(data)


@dataclass(frozen=True)
class ArtifactLayout:
    """Fixed directory layout of one (method, seed) run."""

    root: Path

    @property
    def datasets(self) -> Path:
        return self.root / "datasets"

    @property
    def step1(self) -> Path:
        return self.root / "step1"

    @property
    def transfer(self) -> Path:
        return self.root / "transfer"

    @property
    def step2(self) -> Path:
        return self.root / "step2"

    @property
    def baseline(self) -> Path:
        return self.root / "baseline"

    @property
    def generated(self) -> Path:
        return self.root / "generated"

    @property
    def validation(self) -> Path:
        return self.root / "validation"

    @property
    def pdf(self) -> Path:
        return self.root / "pdf"

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def normalizer(self) -> Path:
        return self.datasets / "normalizer.json"

    def ensure(self) -> None:
        for directory in (self.datasets, self.step1, self.transfer, self.step2, self.baseline,
                          self.generated, self.validation, self.pdf):
            directory.mkdir(parents=True, exist_ok=True)


def generated_id(index: int, sample: EncodedSample) -> str:
    """Stable file stem for a generated candidate."""
    source = Path(str(sample.provenance.get("source", "sample"))).stem
    domain = sample.provenance.get("source_domain", "noise")
    return f"{index:03d}_{domain}_{source}"


class PipelineRun:
    """
    One (method, seed) run with its artifact directory.

    Each stage reads its inputs from the artifact layout when they are not
    passed in, so stages can also be invoked one by one.
    """

    def __init__(self, cfg: RunConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.hp = cfg.hyper_for(seed)
        self.layout = ArtifactLayout(cfg.run_dir(seed))
        self.run_id = f"{cfg.method.value}/seed_{seed}"
        self.manifest = self._load_manifest()

    def _load_manifest(self) -> Dict[str, Any]:
        if self.layout.manifest.exists():
            return _read_json(self.layout.manifest)
        return self._fresh_manifest()

    def _fresh_manifest(self) -> Dict[str, Any]:
        return {
            "method": self.cfg.method.value,
            "system": self.cfg.system,
            "seed": self.seed,
            "config": self.cfg.to_dict(),
            "hyper": self.hp.to_dict(),
            "stages": {},
            "checksums": {},
        }

    def _save_manifest(self) -> None:
        _write_json(self.layout.manifest, self.manifest)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Record stage status in the manifest and wrap failures in StageFailure."""
        self.layout.ensure()
        log_event("stage_started", run_id=self.run_id, stage=name, seed=self.seed)
        try:
            yield
        except StageFailure:
            raise
        except Exception as e:
            self.manifest["stages"][name] = {
                "status": "failed",
                "error_type": ErrorHandler.classify(e),
                "error": str(e)[:500],
            }
            self._save_manifest()
            log_event(
                "stage_failed",
                run_id=self.run_id,
                stage=name,
                seed=self.seed,
                level="error",
                error_type=ErrorHandler.classify(e),
                error=str(e),
            )
            raise StageFailure(name, e) from e
        self.manifest["stages"][name] = {"status": "completed"}
        self._save_manifest()
        log_event("stage_completed", run_id=self.run_id, stage=name, seed=self.seed)

    # --- stages --------------------------------------------------------------

    def encode(self) -> Tuple[DomainDataset, DomainDataset, BlockNormalizer]:
        with self.stage("encode"):
            data_a = load_domain_dataset(self.cfg.domain_a_dir, DomainTag.AH,
                                         self.cfg.element_a, self.cfg.element_b)
            data_b = load_domain_dataset(self.cfg.domain_b_dir, DomainTag.BH,
                                         self.cfg.element_a, self.cfg.element_b)
            normalizer = (
                BlockNormalizer.fit(data_a.samples + data_b.samples)
                if self.hp.normalize else BlockNormalizer.identity()
            )
            for dataset in (data_a, data_b):
                tag = dataset.domain_tag.value
                save_dataset(dataset, self.layout.datasets / f"{tag}.npz")
                write_dataset_manifest(
                    dataset,
                    self.layout.datasets / f"{tag}.json",
                    normalizer,
                    extra={"sha256": _sha256(self.layout.datasets / f"{tag}.npz")},
                )
                self.manifest["checksums"][f"dataset_{tag}"] = _sha256(
                    self.layout.datasets / f"{tag}.npz"
                )
            _write_json(self.layout.normalizer, normalizer.to_dict())
        return data_a, data_b, normalizer

    def load_encoded(self) -> Tuple[DomainDataset, DomainDataset, BlockNormalizer]:
        return (
            load_dataset(self.layout.datasets / "AH.npz"),
            load_dataset(self.layout.datasets / "BH.npz"),
            BlockNormalizer.from_dict(_read_json(self.layout.normalizer)),
        )

    def _train(
        self, step_tag: str, data_a: DomainDataset, data_b: DomainDataset,
        normalizer: BlockNormalizer, directory: Path,
    ) -> GanStepModel:
        model = GanStepModel.create(step_tag, self.hp, data_a.labels, normalizer)
        model, log = train_step(model, data_a, data_b, self.hp,
                                checkpoint_dir=directory / "checkpoints", run_id=self.run_id)
        self._save_model(model, log, directory, step_tag)
        return model

    def _save_model(self, model, log: TrainLog, directory: Path, name: str) -> None:
        log.to_csv(directory / "train_log.csv")
        model.save(directory / "model.npz")
        self.manifest["checksums"][f"{name}_model"] = model.checksum()
        self.manifest.setdefault("wall_clock_seconds", {})[name] = round(log.wall_clock_seconds, 3)

    def train_step1(
        self, encoded: Optional[Tuple[DomainDataset, DomainDataset, BlockNormalizer]] = None
    ) -> GanStepModel:
        with self.stage("train_step1"):
            data_a, data_b, normalizer = encoded or self.load_encoded()
            return self._train(STEP1, data_a, data_b, normalizer, self.layout.step1)

    def transfer(
        self,
        encoded: Optional[Tuple[DomainDataset, DomainDataset, BlockNormalizer]] = None,
        step1_model: Optional[GanStepModel] = None,
    ) -> Tuple[DomainDataset, DomainDataset]:
        with self.stage("transfer"):
            data_a, data_b, _ = encoded or self.load_encoded()
            model = step1_model or GanStepModel.load(self.layout.step1 / "model.npz", self.hp)
            ahbg, bhag, transfer_log = build_step2_datasets(
                data_a, data_b, model, self.hp.decode_threshold
            )
            for dataset in (ahbg, bhag):
                save_dataset(dataset, self.layout.transfer / f"{dataset.domain_tag.value}.npz")
            _write_json(self.layout.transfer / "manifest.json", {
                **transfer_log.to_dict(),
                "originals": {"AH": data_a.sources, "BH": data_b.sources},
            })
        return ahbg, bhag

    def load_transferred(self) -> Tuple[DomainDataset, DomainDataset]:
        return (
            load_dataset(self.layout.transfer / "AHBg.npz"),
            load_dataset(self.layout.transfer / "BHAg.npz"),
        )

    def train_step2(
        self,
        transferred: Optional[Tuple[DomainDataset, DomainDataset]] = None,
        normalizer: Optional[BlockNormalizer] = None,
    ) -> GanStepModel:
        with self.stage("train_step2"):
            ahbg, bhag = transferred or self.load_transferred()
            normalizer = normalizer or BlockNormalizer.from_dict(_read_json(self.layout.normalizer))
            return self._train(STEP2, ahbg, bhag, normalizer, self.layout.step2)

    def baseline(
        self, encoded: Optional[Tuple[DomainDataset, DomainDataset, BlockNormalizer]] = None
    ) -> List[EncodedSample]:
        with self.stage("baseline"):
            data_a, data_b, normalizer = encoded or self.load_encoded()
            result = run_baseline(self.cfg.method.value, data_a, data_b, self.hp,
                                  normalizer=normalizer, run_id=self.run_id)
            self._save_model(result.model, result.log, self.layout.baseline, "baseline")
        return result.samples

    def generate(
        self,
        step2_model: Optional[GanStepModel] = None,
        transferred: Optional[Tuple[DomainDataset, DomainDataset]] = None,
    ) -> List[EncodedSample]:
        """Step-2 candidates from both generators over the transferred domains."""
        with self.stage("generate"):
            model = step2_model or GanStepModel.load(self.layout.step2 / "model.npz", self.hp)
            ahbg, bhag = transferred or self.load_transferred()
            return generate(model, ahbg) + generate(model, bhag)

    def decode_candidates(
        self, samples: List[EncodedSample]
    ) -> Tuple[Dict[str, CrystalStructure], Dict[str, str]]:
        """Decode and write candidates as POSCAR; undecodable ones are reported as failures."""
        structures: Dict[str, CrystalStructure] = {}
        failures: Dict[str, str] = {}
        with self.stage("decode"):
            for stale in self.layout.generated.glob("*.vasp"):
                stale.unlink()
            for k, sample in enumerate(samples):
                key = generated_id(k, sample)
                labelled = replace(
                    sample, comment=f"{key} {self.cfg.method.value} seed={self.seed}"
                )
                try:
                    structure = decode(labelled, self.hp.decode_threshold)
                except HydrideGanError as e:
                    failures[key] = f"{type(e).__name__}: {e}"
                    continue
                structures[key] = structure
                write_poscar_file(structure, self.layout.generated / f"{key}.vasp")
            _write_json(self.layout.generated / "provenance.json", {
                generated_id(k, sample): sample.provenance for k, sample in enumerate(samples)
            })
            if failures:
                logger.warning("candidates_not_decodable", run_id=self.run_id,
                               failed=len(failures), decoded=len(structures))
        return structures, failures

    def load_generated(self) -> Tuple[Dict[str, CrystalStructure], Dict[str, str]]:
        structures = {
            path.stem: read_poscar_file(path) for path in sorted(self.layout.generated.glob("*.vasp"))
        }
        failures: Dict[str, str] = {}
        summary_path = self.layout.validation / "summary.json"
        if summary_path.exists():
            failures = {
                key: entry["error"]
                for key, entry in _read_json(summary_path).get("per_structure", {}).items()
                if entry.get("error") and key not in structures
            }
        return structures, failures

    def validate(
        self,
        structures: Optional[Dict[str, CrystalStructure]] = None,
        failures: Optional[Dict[str, str]] = None,
    ) -> ValidationReport:
        if structures is None:
            structures, loaded_failures = self.load_generated()
            failures = failures if failures is not None else loaded_failures
        with self.stage("validate"):
            report = validate_structures(structures, self.hp.geo, failures,
                                         workers=self.cfg.validation_workers)
            (self.layout.validation / "report.txt").write_text(report.to_text(), encoding="utf-8")
            _write_json(self.layout.validation / "summary.json", report.to_summary())
            self.manifest["good_count"] = report.good_count
            self.manifest["total_candidates"] = report.total
        return report

    def pdf(self, structures: Optional[Dict[str, CrystalStructure]] = None) -> Path:
        """Pair-distribution data files, one per structure plus their mean."""
        if structures is None:
            structures, _ = self.load_generated()
        with self.stage("pdf"):
            distributions = []
            for key, structure in structures.items():
                try:
                    distribution = pair_distribution(structure, self.cfg.pdf_bin_width,
                                                     self.hp.geo.cutoff,
                                                     max_images=self.hp.geo.max_images)
                except HydrideGanError as e:
                    logger.warning("pdf_skipped", structure_id=key, error=str(e)[:200])
                    continue
                distributions.append(distribution)
                (self.layout.pdf / f"{key}.dat").write_text(distribution.to_text(), encoding="utf-8")
            if distributions:
                mean = replace(
                    distributions[0],
                    counts=np.mean([d.counts for d in distributions], axis=0),
                )
                (self.layout.pdf / "mean.dat").write_text(mean.to_text(), encoding="utf-8")
        return self.layout.pdf

    # --- full run --------------------------------------------------------------

    def run(self) -> Path:
        """Execute every stage of the configured method and return the artifact directory."""
        log_event("run_started", run_id=self.run_id, seed=self.seed,
                  method=self.cfg.method.value, epochs=self.hp.epochs)
        self.manifest = self._fresh_manifest()
        encoded = self.encode()
        if self.cfg.method in (Method.TWO_STEP, Method.TWO_STEP_UNCONSTRAINED):
            step1_model = self.train_step1(encoded)
            transferred = self.transfer(encoded, step1_model)
            step2_model = self.train_step2(transferred, encoded[2])
            samples = self.generate(step2_model, transferred)
        else:
            samples = self.baseline(encoded)
        structures, failures = self.decode_candidates(samples)
        report = self.validate(structures, failures)
        self.pdf(structures)
        log_event("run_completed", run_id=self.run_id, seed=self.seed,
                  good_count=report.good_count, total=report.total)
        return self.layout.root


def run_pipeline(cfg: RunConfig) -> List[Path]:
    """
    Run the configured method once per seed, sequentially, into disjoint directories.

    Args:
        cfg: Run configuration

    Returns:
        Artifact directories, one per seed

    Raises:
        ConfigError: invalid paths, before anything is written
        StageFailure: a stage failed; earlier artifacts are kept
    """
    cfg.check_paths()
    return [PipelineRun(cfg, seed).run() for seed in cfg.seeds]


# --- comparison report ---------------------------------------------------------


@dataclass
class RunResult:
    method: Method
    system: str
    seed: int
    good_count: int
    total: int
    directory: Path


def load_run_result(directory) -> RunResult:
    """
    Read a run's manifest and recount good ternary structures from its verdicts.

    Raises:
        MissingReport: no validation summary in the directory
    """
    layout = ArtifactLayout(Path(directory))
    summary_path = layout.validation / "summary.json"
    if not summary_path.exists():
        raise MissingReport(f"{directory} has no validation/summary.json")
    summary = _read_json(summary_path)
    report = ValidationReport.from_summary(summary)
    manifest = _read_json(layout.manifest) if layout.manifest.exists() else {}
    if "good_count" in summary and summary["good_count"] != report.good_count:
        logger.warning("report_recount_differs", directory=str(directory),
                       stored=summary["good_count"], recounted=report.good_count)
    return RunResult(
        method=Method(manifest.get("method", Method.TWO_STEP.value)),
        system=manifest.get("system", "unknown"),
        seed=int(manifest.get("seed", 0)),
        good_count=report.good_count,
        total=report.total,
        directory=Path(directory),
    )


@dataclass
class ComparisonReport:
    """Good-quality ternary counts per system and method, summed over seeds."""

    results: List[RunResult]

    @property
    def systems(self) -> List[str]:
        return sorted({r.system for r in self.results})

    def cell(self, system: str, method: Method) -> Optional[Dict[str, Any]]:
        runs = [r for r in self.results if r.system == system and r.method == method]
        if not runs:
            return None
        return {
            "good": sum(r.good_count for r in runs),
            "total": sum(r.total for r in runs),
            "seeds": sorted(r.seed for r in runs),
            "per_seed": {str(r.seed): r.good_count for r in sorted(runs, key=lambda r: r.seed)},
        }

    def to_summary(self) -> Dict[str, Any]:
        return {
            "methods": [m.value for m in METHOD_LABELS],
            "systems": {
                system: {
                    m.value: self.cell(system, m) for m in METHOD_LABELS
                    if self.cell(system, m) is not None
                }
                for system in self.systems
            },
        }

    def to_text(self) -> str:
        headers = ["system"] + list(METHOD_LABELS.values())
        rows = []
        for system in self.systems:
            row = [system]
            for m in METHOD_LABELS:
                cell = self.cell(system, m)
                row.append("0" if cell is None else str(cell["good"]))
            rows.append(row)
        widths = [max(len(line[k]) for line in [headers] + rows) for k in range(len(headers))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
        lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in rows]
        lines.append("")
        lines.append("good ternary / total candidates (seeds):")
        for system in self.systems:
            for m, label in METHOD_LABELS.items():
                cell = self.cell(system, m)
                if cell is not None:
                    seeds = ",".join(str(s) for s in cell["seeds"])
                    lines.append(f"  {system} {label}: {cell['good']} / {cell['total']} (seeds {seeds})")
        return "\n".join(lines) + "\n"


def report(directories: Sequence) -> ComparisonReport:
    """
    Build the method comparison table from artifact directories.

    Args:
        directories: Run directories, each holding validation/summary.json

    Returns:
        ComparisonReport

    Raises:
        MissingReport
    """
    results = [load_run_result(directory) for directory in directories]
    logger.info("comparison_report_built", runs=len(results))
    return ComparisonReport(results)
