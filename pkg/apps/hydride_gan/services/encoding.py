"""Fixed-shape block encoding of hydride structures with placeholder blocks."""
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
import structlog

from apps.hydride_gan.config import config
from apps.hydride_gan.services.poscar_io import (
    AtomSite,
    CrystalStructure,
    Lattice,
    canonicalize,
    read_poscar_file,
    right_handed,
    wrap_fractional,
)
from apps.hydride_gan.utils.error_handler import (
    DatasetFileError,
    EmptyDirectory,
    InvariantViolation,
    MissingHydrogen,
    NoAtoms,
    SlotConflict,
    TooManyAtoms,
)

logger = structlog.get_logger()

HYDROGEN = "H"
N_BLOCKS = 4
MAX_ROWS = 18
N_COLS = 3
SAMPLE_SIZE = N_BLOCKS * MAX_ROWS * N_COLS

LATTICE_BLOCK = 0
H_BLOCK = 1
METAL_A_BLOCK = 2
METAL_B_BLOCK = 3

# suffixes that are never POSCAR files inside a dataset directory
_SKIPPED_SUFFIXES = {".json", ".npz", ".csv", ".md", ".txt", ".dat"}


class DomainTag(str, Enum):
    """Training domains: binary inputs and their feature-transferred ternary analogues."""

    AH = "AH"
    BH = "BH"
    AHBG = "AHBg"
    BHAG = "BHAg"

    @property
    def empty_block(self) -> Optional[int]:
        """Placeholder block that must stay empty for this domain."""
        return {DomainTag.AH: METAL_B_BLOCK, DomainTag.BH: METAL_A_BLOCK}.get(self)


@dataclass(frozen=True, eq=False)
class EncodedSample:
    """
    One crystal as a (4, 18, 3) tensor.

    Block 0 holds the lattice rows (Angstrom), blocks 1-3 hold fractional
    coordinates of H, metal A and metal B. `occupancy` is None for generated
    samples, whose atoms are recovered with the threshold rule.
    """

    blocks: np.ndarray
    occupancy: Optional[Tuple[int, int, int, int]]
    species_labels: Tuple[Optional[str], ...]
    species_order: Tuple[str, ...] = ()
    comment: str = ""
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        blocks = np.array(self.blocks, dtype=np.float64).reshape(N_BLOCKS, MAX_ROWS, N_COLS)
        object.__setattr__(self, "blocks", blocks)
        labels = tuple(self.species_labels)
        if len(labels) != N_BLOCKS:
            raise InvariantViolation(f"expected {N_BLOCKS} species labels, got {len(labels)}")
        object.__setattr__(self, "species_labels", labels)
        if self.occupancy is None:
            return
        occupancy = tuple(int(n) for n in self.occupancy)
        object.__setattr__(self, "occupancy", occupancy)
        if len(occupancy) != N_BLOCKS or occupancy[LATTICE_BLOCK] != 3:
            raise InvariantViolation(f"invalid occupancy {occupancy}")
        for b, count in enumerate(occupancy):
            if not 0 <= count <= MAX_ROWS:
                raise InvariantViolation(f"block {b} occupancy {count} out of range")
            if np.any(blocks[b, count:] != 0.0):
                raise InvariantViolation(f"block {b} has non-zero rows past occupancy {count}")

    def flatten(self) -> np.ndarray:
        return self.blocks.reshape(SAMPLE_SIZE).copy()

    @classmethod
    def from_flat(
        cls,
        flat: np.ndarray,
        species_labels: Tuple[Optional[str], ...],
        provenance: Optional[Dict[str, Any]] = None,
    ) -> "EncodedSample":
        """Wrap a network output as a generated sample with unknown occupancy."""
        if np.asarray(flat).size != SAMPLE_SIZE:
            raise InvariantViolation(f"expected {SAMPLE_SIZE} values, got {np.asarray(flat).size}")
        return cls(
            blocks=np.asarray(flat, dtype=np.float64).reshape(N_BLOCKS, MAX_ROWS, N_COLS),
            occupancy=None,
            species_labels=species_labels,
            provenance=dict(provenance or {}),
        )

    def atom_rows(self, block: int, threshold: Optional[float] = None) -> np.ndarray:
        """
        Row indices of real atoms in a coordinate block.

        Uses the occupancy sidecar when present, otherwise the rule
        "L-infinity norm of the row > threshold".
        """
        if self.occupancy is not None:
            return np.arange(self.occupancy[block])
        tau = config.DECODE_THRESHOLD if threshold is None else threshold
        return np.flatnonzero(np.max(np.abs(self.blocks[block]), axis=1) > tau)


@dataclass(frozen=True)
class BlockNormalizer:
    """Per-block scale applied before the networks and inverted after."""

    scales: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    @classmethod
    def identity(cls) -> "BlockNormalizer":
        return cls()

    @classmethod
    def fit(cls, samples: Iterable[EncodedSample]) -> "BlockNormalizer":
        """Scale each block by its largest absolute value over the training data."""
        stacked = np.stack([sample.blocks for sample in samples])
        peaks = np.max(np.abs(stacked), axis=(0, 2, 3))
        scales = tuple(float(peak) if peak > 0 else 1.0 for peak in peaks)
        return cls(scales=scales)

    @property
    def vector(self) -> np.ndarray:
        return np.repeat(np.asarray(self.scales, dtype=np.float64), MAX_ROWS * N_COLS)

    def transform(self, flat: np.ndarray) -> np.ndarray:
        return np.asarray(flat, dtype=np.float64) / self.vector

    def inverse(self, flat: np.ndarray) -> np.ndarray:
        return np.asarray(flat, dtype=np.float64) * self.vector

    def inverse_gradient(self, grad_raw: np.ndarray) -> np.ndarray:
        """Chain rule through `inverse`: gradient w.r.t. the normalized values."""
        return np.asarray(grad_raw, dtype=np.float64) * self.vector

    def to_dict(self) -> Dict[str, Any]:
        return {"scales": list(self.scales)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BlockNormalizer":
        return cls(scales=tuple(float(v) for v in data["scales"]))


def default_slot_map(domain_tag: DomainTag, element_a: str, element_b: str) -> Dict[str, int]:
    """Slot map for a binary domain: H in block 1, the metal in its own block."""
    if domain_tag == DomainTag.AH:
        return {HYDROGEN: H_BLOCK, element_a: METAL_A_BLOCK}
    if domain_tag == DomainTag.BH:
        return {HYDROGEN: H_BLOCK, element_b: METAL_B_BLOCK}
    return {HYDROGEN: H_BLOCK, element_a: METAL_A_BLOCK, element_b: METAL_B_BLOCK}


def ternary_labels(element_a: str, element_b: str) -> Tuple[Optional[str], ...]:
    return (None, HYDROGEN, element_a, element_b)


def _check_slot_map(slot_map: Dict[str, int]) -> None:
    if slot_map.get(HYDROGEN) != H_BLOCK:
        raise SlotConflict(f"hydrogen must map to block {H_BLOCK}, slot map is {slot_map}")
    seen: Dict[int, str] = {}
    for species, block in slot_map.items():
        if block not in (H_BLOCK, METAL_A_BLOCK, METAL_B_BLOCK):
            raise SlotConflict(f"species {species} mapped to invalid block {block}")
        if block in seen:
            raise SlotConflict(f"species {seen[block]} and {species} both map to block {block}")
        seen[block] = species


def encode(s: CrystalStructure, slot_map: Dict[str, int]) -> EncodedSample:
    """
    Encode a structure into the block tensor.

    Args:
        s: Structure (at most 18 atoms per species)
        slot_map: species -> block assignment (H -> 1, metals -> 2 or 3)

    Returns:
        EncodedSample with occupancy metadata

    Raises:
        TooManyAtoms, MissingHydrogen, SlotConflict
    """
    _check_slot_map(slot_map)
    s = canonicalize(s)
    if HYDROGEN not in s.elements:
        raise MissingHydrogen(f"structure '{s.comment}' contains no hydrogen")

    blocks = np.zeros((N_BLOCKS, MAX_ROWS, N_COLS), dtype=np.float64)
    blocks[LATTICE_BLOCK, :3] = s.lattice.matrix
    occupancy = [3, 0, 0, 0]
    labels: List[Optional[str]] = [None, None, None, None]
    frac = s.frac_coords

    for symbol, count in s.species_order:
        if symbol not in slot_map:
            raise SlotConflict(f"species {symbol} has no block in slot map {slot_map}")
        if count > MAX_ROWS:
            raise TooManyAtoms(f"{count} {symbol} atoms exceed the {MAX_ROWS}-row block")
        block = slot_map[symbol]
        rows = [k for k, species in enumerate(s.species) if species == symbol]
        blocks[block, :count] = frac[rows]
        occupancy[block] = count
        labels[block] = symbol

    return EncodedSample(
        blocks=blocks,
        occupancy=tuple(occupancy),
        species_labels=tuple(labels),
        species_order=tuple(s.elements),
        comment=s.comment,
    )


def _block_order(e: EncodedSample) -> List[int]:
    if e.species_order:
        rank = {symbol: k for k, symbol in enumerate(e.species_order)}
        return sorted(
            (H_BLOCK, METAL_A_BLOCK, METAL_B_BLOCK),
            key=lambda b: (rank.get(e.species_labels[b], len(rank)), b),
        )
    # metals first, hydrogen last
    return [METAL_A_BLOCK, METAL_B_BLOCK, H_BLOCK]


def decode(e: EncodedSample, threshold: Optional[float] = None) -> CrystalStructure:
    """
    Decode a block tensor back into a canonical structure.

    Args:
        e: Encoded sample; block 0 rows 0-2 must form a non-singular lattice
        threshold: Padding threshold for samples without occupancy (default 0.05)

    Returns:
        Canonical CrystalStructure

    Raises:
        SingularLattice, NoAtoms, InvariantViolation (atoms in an unlabeled block)
    """
    matrix = e.blocks[LATTICE_BLOCK, :3].copy()
    species: List[str] = []
    coords: List[np.ndarray] = []
    for block in _block_order(e):
        rows = e.atom_rows(block, threshold)
        if rows.size == 0:
            continue
        label = e.species_labels[block]
        if label is None:
            raise InvariantViolation(f"block {block} holds atoms but has no species label")
        species.extend([label] * rows.size)
        coords.append(e.blocks[block, rows])
    if not species:
        raise NoAtoms("all coordinate blocks are empty")

    frac = np.concatenate(coords)
    matrix, frac = right_handed(matrix, frac)
    lattice = Lattice(vectors=matrix, scale=1.0)
    frac = wrap_fractional(frac)
    sites = [AtomSite(species=symbol, frac=row) for symbol, row in zip(species, frac)]
    return canonicalize(CrystalStructure.from_sites(lattice, sites, comment=e.comment))


@dataclass
class DomainDataset:
    """Encoded samples of one domain, in file-name order."""

    samples: List[EncodedSample]
    domain_tag: DomainTag
    element_a: str
    element_b: str
    sources: List[str] = field(default_factory=list)
    slot_map: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.domain_tag = DomainTag(self.domain_tag)
        if not self.samples:
            raise InvariantViolation(f"dataset {self.domain_tag.value} has no samples")
        if not self.sources:
            self.sources = [f"{self.domain_tag.value}_{k:03d}" for k in range(len(self.samples))]
        if len(self.sources) != len(self.samples):
            raise InvariantViolation("one source name per sample is required")
        for source, sample in zip(self.sources, self.samples):
            if sample.occupancy is None:
                continue
            empty = self.domain_tag.empty_block
            if empty is not None and sample.occupancy[empty] != 0:
                raise InvariantViolation(
                    f"{source}: placeholder block {empty} is occupied in domain "
                    f"{self.domain_tag.value}"
                )
            if empty is None and (sample.occupancy[METAL_A_BLOCK] == 0
                                  or sample.occupancy[METAL_B_BLOCK] == 0):
                raise InvariantViolation(f"{source}: ternary domain sample misses a metal")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> Tuple[Optional[str], ...]:
        return ternary_labels(self.element_a, self.element_b)

    def stack(self) -> np.ndarray:
        """Tensor of shape [N, 4, 18, 3]."""
        return np.stack([sample.blocks for sample in self.samples])

    def flat(self) -> np.ndarray:
        return self.stack().reshape(len(self.samples), SAMPLE_SIZE)


def _dataset_files(directory: Path) -> List[Path]:
    return sorted(
        path for path in directory.iterdir()
        if path.is_file()
        and not path.name.startswith(".")
        and path.suffix.lower() not in _SKIPPED_SUFFIXES
    )


def load_domain_dataset(
    path,
    domain_tag: DomainTag,
    element_a: str,
    element_b: str,
    slot_map: Optional[Dict[str, int]] = None,
) -> DomainDataset:
    """
    Parse and encode every POSCAR file of a directory.

    Args:
        path: Directory of POSCAR files
        domain_tag: AH or BH
        element_a: Symbol of metal A
        element_b: Symbol of metal B
        slot_map: species -> block (defaults to the domain's standard map)

    Returns:
        DomainDataset stacking to [N, 4, 18, 3]

    Raises:
        EmptyDirectory, DatasetFileError
    """
    directory = Path(path)
    domain_tag = DomainTag(domain_tag)
    slot_map = slot_map or default_slot_map(domain_tag, element_a, element_b)
    if not directory.is_dir():
        raise EmptyDirectory(f"{directory} is not a directory")
    files = _dataset_files(directory)
    if not files:
        raise EmptyDirectory(f"{directory} contains no POSCAR files")

    samples: List[EncodedSample] = []
    for file_path in files:
        try:
            structure = read_poscar_file(file_path)
            sample = encode(structure, slot_map)
        except Exception as e:
            logger.error(
                "dataset_file_failed",
                domain=domain_tag.value,
                filename=file_path.name,
                error=str(e)[:200],
            )
            raise DatasetFileError(file_path.name, e) from e
        samples.append(EncodedSample(
            blocks=sample.blocks,
            occupancy=sample.occupancy,
            species_labels=ternary_labels(element_a, element_b),
            species_order=sample.species_order,
            comment=sample.comment,
            provenance={"source": file_path.name},
        ))

    dataset = DomainDataset(
        samples=samples,
        domain_tag=domain_tag,
        element_a=element_a,
        element_b=element_b,
        sources=[file_path.name for file_path in files],
        slot_map=dict(slot_map),
    )
    logger.info(
        "dataset_loaded",
        domain=domain_tag.value,
        directory=str(directory),
        samples=len(dataset),
        shape=list(dataset.stack().shape),
    )
    return dataset


def save_dataset(dataset: DomainDataset, path) -> None:
    """Persist a dataset as .npz (tensors plus JSON metadata)."""
    occupancy = np.array(
        [sample.occupancy if sample.occupancy is not None else (-1, -1, -1, -1)
         for sample in dataset.samples],
        dtype=np.int64,
    )
    meta = {
        "domain_tag": dataset.domain_tag.value,
        "element_a": dataset.element_a,
        "element_b": dataset.element_b,
        "sources": dataset.sources,
        "slot_map": dataset.slot_map,
        "species_orders": [list(sample.species_order) for sample in dataset.samples],
        "comments": [sample.comment for sample in dataset.samples],
        "provenance": [sample.provenance for sample in dataset.samples],
    }
    np.savez(
        path,
        blocks=dataset.stack(),
        occupancy=occupancy,
        meta=np.array(json.dumps(meta, sort_keys=True)),
    )


def load_dataset(path) -> DomainDataset:
    """Load a dataset written by `save_dataset`."""
    with np.load(path, allow_pickle=False) as archive:
        blocks = archive["blocks"]
        occupancy = archive["occupancy"]
        meta = json.loads(str(archive["meta"]))
    labels = ternary_labels(meta["element_a"], meta["element_b"])
    samples = [
        EncodedSample(
            blocks=blocks[k],
            occupancy=None if occupancy[k][0] < 0 else tuple(int(n) for n in occupancy[k]),
            species_labels=labels,
            species_order=tuple(meta["species_orders"][k]),
            comment=meta["comments"][k],
            provenance=meta["provenance"][k],
        )
        for k in range(blocks.shape[0])
    ]
    return DomainDataset(
        samples=samples,
        domain_tag=DomainTag(meta["domain_tag"]),
        element_a=meta["element_a"],
        element_b=meta["element_b"],
        sources=list(meta["sources"]),
        slot_map={k: int(v) for k, v in meta["slot_map"].items()},
    )


def write_dataset_manifest(
    dataset: DomainDataset,
    path,
    normalizer: Optional[BlockNormalizer] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """
    Write the JSON manifest describing a dataset.

    Args:
        dataset: Dataset to describe
        path: Output file
        normalizer: Normalization constants used with this dataset
        extra: Additional fields (checksums, provenance)

    Returns:
        The manifest dictionary
    """
    manifest: Dict[str, Any] = {
        "domain_tag": dataset.domain_tag.value,
        "element_a": dataset.element_a,
        "element_b": dataset.element_b,
        "slot_map": dataset.slot_map,
        "files": dataset.sources,
        "shape": list(dataset.stack().shape),
        "normalization": normalizer.to_dict() if normalizer else None,
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
