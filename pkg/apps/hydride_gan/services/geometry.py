"""Periodic neighbor search, pair distribution, geometric constraint losses and validation."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np
import structlog

from apps.hydride_gan.config import config
from apps.hydride_gan.services.encoding import (
    H_BLOCK,
    HYDROGEN,
    LATTICE_BLOCK,
    METAL_A_BLOCK,
    METAL_B_BLOCK,
    EncodedSample,
)
from apps.hydride_gan.services.poscar_io import (
    CrystalStructure,
    SINGULAR_DET,
    species_formula,
    wrap_fractional,
)
from apps.hydride_gan.utils.error_handler import (
    ConfigError,
    HydrideGanError,
    ImageSearchTooLarge,
    NoAtoms,
    SingularLattice,
)

logger = structlog.get_logger()

SpeciesPair = Tuple[str, str]

# distances below this are overlapping atoms; their gradient direction is undefined
_OVERLAP = 1e-6


def species_pair(a: str, b: str) -> SpeciesPair:
    """Unordered species pair in canonical (sorted) form."""
    return (a, b) if a <= b else (b, a)


class GeoMode(str, Enum):
    """How the geometric constraints enter the generator loss."""

    LITERAL = "paper"
    HINGE = "hinge"
    OFF = "off"


@dataclass(frozen=True)
class GeoConfig:
    """
    Distance thresholds (Angstrom) for the constraints and the validator.

    With `penalized_pairs` unset every pair except metal-hydrogen pairs is
    penalized, i.e. H-H, A-A, B-B and A-B for an A-H-B system.
    """

    d1: float = field(default_factory=lambda: config.DEFAULT_D1)
    d2: float = field(default_factory=lambda: config.DEFAULT_D2)
    cutoff: float = field(default_factory=lambda: config.DEFAULT_CUTOFF)
    penalized_pairs: Optional[FrozenSet[SpeciesPair]] = None
    max_images: int = 20000

    def __post_init__(self):
        if not 0 < self.d1 < self.d2 <= self.cutoff:
            raise ConfigError(
                f"geometry thresholds must satisfy 0 < d1 < d2 <= cutoff, got "
                f"d1={self.d1}, d2={self.d2}, cutoff={self.cutoff}"
            )
        if self.penalized_pairs is not None:
            pairs = frozenset(species_pair(*pair) for pair in self.penalized_pairs)
            object.__setattr__(self, "penalized_pairs", pairs)

    @classmethod
    def for_elements(cls, element_a: str, element_b: str, **kwargs) -> "GeoConfig":
        """Explicit penalized set {H-H, A-A, B-B, A-B}."""
        pairs = frozenset({
            species_pair(HYDROGEN, HYDROGEN),
            species_pair(element_a, element_a),
            species_pair(element_b, element_b),
            species_pair(element_a, element_b),
        })
        return cls(penalized_pairs=pairs, **kwargs)

    def is_penalized(self, pair: SpeciesPair) -> bool:
        if self.penalized_pairs is not None:
            return species_pair(*pair) in self.penalized_pairs
        return (pair[0] == HYDROGEN) == (pair[1] == HYDROGEN)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "d1": self.d1,
            "d2": self.d2,
            "cutoff": self.cutoff,
            "penalized_pairs": (
                sorted(list(pair) for pair in self.penalized_pairs)
                if self.penalized_pairs is not None else None
            ),
            "max_images": self.max_images,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GeoConfig":
        pairs = data.get("penalized_pairs")
        return cls(
            d1=float(data.get("d1", config.DEFAULT_D1)),
            d2=float(data.get("d2", config.DEFAULT_D2)),
            cutoff=float(data.get("cutoff", config.DEFAULT_CUTOFF)),
            penalized_pairs=(
                frozenset(tuple(pair) for pair in pairs) if pairs is not None else None
            ),
            max_images=int(data.get("max_images", 20000)),
        )


class NeighborPair(NamedTuple):
    i: int
    j: int
    image: Tuple[int, int, int]
    distance: float
    species_pair: SpeciesPair


class FirstNeighbor(NamedTuple):
    atom: int
    species_pair: SpeciesPair
    distance: float
    j: int
    image: Tuple[int, int, int]


@dataclass
class NeighborReport:
    """All neighbor pairs within the cutoff, plus first-neighbor summaries."""

    pairs: List[NeighborPair]
    per_atom_first: Dict[Tuple[int, SpeciesPair], FirstNeighbor]
    first_distances: List[float]
    species: List[str]
    cutoff: float

    def first_distance(self, atom: int, pair: SpeciesPair) -> Optional[float]:
        entry = self.per_atom_first.get((atom, species_pair(*pair)))
        return entry.distance if entry else None

    def multiplicity(self, atom: int, pair: SpeciesPair, tol: float = 1e-6) -> int:
        """Number of neighbors of `atom` at its first-neighbor distance for `pair`."""
        first = self.first_distance(atom, pair)
        if first is None:
            return 0
        target = species_pair(*pair)
        return sum(
            1 for p in self.pairs
            if p.i == atom and p.species_pair == target and abs(p.distance - first) <= tol
        )


def _image_bounds(matrix: np.ndarray, radius: float) -> np.ndarray:
    det = np.linalg.det(matrix)
    if abs(det) < SINGULAR_DET:
        raise SingularLattice(f"lattice determinant {det:.3e} is singular")
    reciprocal_norms = np.linalg.norm(np.linalg.inv(matrix).T, axis=1)
    return np.maximum(np.floor(radius * reciprocal_norms).astype(np.int64) + 1, 1)


def _check_image_count(bounds: np.ndarray, cutoff: float, max_images: int) -> None:
    count = int(np.prod(2 * bounds + 1))
    if count > max_images:
        raise ImageSearchTooLarge(
            f"{count} periodic images needed for cutoff {cutoff} (limit {max_images})"
        )


def _offsets_within(bounds: np.ndarray) -> np.ndarray:
    axes = [np.arange(-int(n), int(n) + 1, dtype=np.int64) for n in bounds]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack(grid, axis=-1).reshape(-1, 3)


def image_offsets(matrix: np.ndarray, cutoff: float, max_images: int = 20000) -> np.ndarray:
    """
    Integer cell translations whose images can reach within `cutoff`.

    The bound per axis is floor(cutoff / plane spacing) + 1, which stays correct for
    skewed cells since fractional differences lie in (-1, 1).

    Returns:
        (K, 3) integer offsets in lexicographic order
    """
    bounds = _image_bounds(matrix, cutoff)
    _check_image_count(bounds, cutoff, max_images)
    return _offsets_within(bounds)


def first_neighbor_radius(matrix: np.ndarray, species: List[str], cutoff: float) -> float:
    """
    Search radius that already holds every first neighbor within `cutoff`.

    Any two atoms have an image no farther apart than half the longest body
    diagonal of the cell. An atom that is the only one of its species relies on
    its own images, the closest of which sits at most one lattice vector away.
    """
    corners = np.array([[1, 1, 1], [1, 1, -1], [1, -1, 1], [-1, 1, 1]]) @ matrix
    reach = 0.5 * float(np.linalg.norm(corners, axis=1).max())
    _, counts = np.unique(np.asarray(species), return_counts=True)
    if counts.size and counts.min() == 1:
        reach = max(reach, float(np.linalg.norm(matrix, axis=1).min()))
    return min(cutoff, reach * (1.0 + 1e-9) + 1e-9)


@dataclass
class _PairTable:
    i: np.ndarray
    j: np.ndarray
    offsets: np.ndarray
    delta_frac: np.ndarray
    vectors: np.ndarray
    distances: np.ndarray


# entries (atoms x atoms x images) evaluated per chunk of first atoms
_CHUNK_ENTRIES = 1 << 20


def _enumerate_pairs(
    frac: np.ndarray,
    matrix: np.ndarray,
    cutoff: float,
    max_images: int,
    radius: Optional[float] = None,
) -> _PairTable:
    """
    Ordered pairs (i, j, image) with distance <= radius, sorted by (i, j, image).

    The image limit always applies to the full cutoff; `radius` only narrows the
    search when the caller needs nothing beyond it.
    """
    _check_image_count(_image_bounds(matrix, cutoff), cutoff, max_images)
    radius = cutoff if radius is None else min(radius, cutoff)
    offsets = _offsets_within(_image_bounds(matrix, radius))
    zero = int(np.flatnonzero(~offsets.any(axis=1))[0])
    n = frac.shape[0]
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return _PairTable(empty, empty, np.zeros((0, 3), dtype=np.int64),
                          np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))

    chunk = max(1, _CHUNK_ENTRIES // (n * len(offsets)))
    parts: Dict[str, List[np.ndarray]] = {key: [] for key in ("i", "j", "k", "d", "v", "r")}
    for start in range(0, n, chunk):
        first = np.arange(start, min(start + chunk, n))
        # delta[a, j, k] = f_j - f_i + n_k for i = first[a]
        delta = frac[None, :, None, :] - frac[first][:, None, None, :] + offsets[None, None, :, :]
        vectors = delta @ matrix
        distances = np.sqrt(np.sum(vectors * vectors, axis=-1))
        mask = distances <= radius
        mask[np.arange(first.size), first, zero] = False
        aa, jj, kk = np.nonzero(mask)
        parts["i"].append(first[aa])
        parts["j"].append(jj)
        parts["k"].append(kk)
        parts["d"].append(delta[aa, jj, kk])
        parts["v"].append(vectors[aa, jj, kk])
        parts["r"].append(distances[aa, jj, kk])
    return _PairTable(
        i=np.concatenate(parts["i"]),
        j=np.concatenate(parts["j"]),
        offsets=offsets[np.concatenate(parts["k"])],
        delta_frac=np.concatenate(parts["d"]),
        vectors=np.concatenate(parts["v"]),
        distances=np.concatenate(parts["r"]),
    )


def _first_neighbor_index(
    table: _PairTable, species: List[str]
) -> Dict[Tuple[int, SpeciesPair], int]:
    """Row of the closest partner per (atom, species pair); earliest row wins ties."""
    if table.distances.size == 0:
        return {}
    symbols = sorted(set(species))
    codes = np.array([symbols.index(symbol) for symbol in species], dtype=np.int64)
    n_symbols = len(symbols)
    ci, cj = codes[table.i], codes[table.j]
    keys = (table.i * n_symbols + np.minimum(ci, cj)) * n_symbols + np.maximum(ci, cj)
    rows = np.arange(keys.size)
    order = np.lexsort((rows, table.distances, keys))
    sorted_keys = keys[order]
    leading = np.ones(order.size, dtype=bool)
    leading[1:] = sorted_keys[1:] != sorted_keys[:-1]
    best: Dict[Tuple[int, SpeciesPair], int] = {}
    for row in order[leading]:
        i, j = int(table.i[row]), int(table.j[row])
        best[(i, species_pair(species[i], species[j]))] = int(row)
    return best


def neighbor_distances(
    s: CrystalStructure, cutoff: Optional[float] = None, max_images: int = 20000
) -> NeighborReport:
    """
    Enumerate periodic neighbor pairs within the cutoff.

    Args:
        s: Structure with a non-singular lattice and at least one atom
        cutoff: Search radius in Angstrom (defaults to DEFAULT_CUTOFF)
        max_images: Limit on enumerated periodic images

    Returns:
        NeighborReport with pairs sorted by (i, j, image)

    Raises:
        SingularLattice, NoAtoms, ImageSearchTooLarge
    """
    cutoff = config.DEFAULT_CUTOFF if cutoff is None else cutoff
    if s.num_sites == 0:
        raise NoAtoms("structure has no atoms")
    species = s.species
    table = _enumerate_pairs(wrap_fractional(s.frac_coords), s.lattice.matrix, cutoff, max_images)

    pairs = [
        NeighborPair(
            i=int(table.i[row]),
            j=int(table.j[row]),
            image=tuple(int(v) for v in table.offsets[row]),
            distance=float(table.distances[row]),
            species_pair=species_pair(species[int(table.i[row])], species[int(table.j[row])]),
        )
        for row in range(table.distances.shape[0])
    ]
    per_atom_first = {
        key: FirstNeighbor(
            atom=key[0],
            species_pair=key[1],
            distance=float(table.distances[row]),
            j=int(table.j[row]),
            image=tuple(int(v) for v in table.offsets[row]),
        )
        for key, row in _first_neighbor_index(table, species).items()
    }
    first_distances: List[float] = []
    for atom in range(s.num_sites):
        own = table.distances[table.i == atom]
        if own.size:
            first_distances.append(float(own.min()))
    return NeighborReport(
        pairs=pairs,
        per_atom_first=per_atom_first,
        first_distances=first_distances,
        species=species,
        cutoff=cutoff,
    )


@dataclass
class PairDistribution:
    """Neighbor counts per distance bin, averaged per atom; bins are left-closed."""

    bin_width: float
    cutoff: float
    counts: np.ndarray
    species_pair: Optional[SpeciesPair] = None

    @property
    def bin_starts(self) -> np.ndarray:
        return np.arange(self.counts.shape[0]) * self.bin_width

    def to_text(self) -> str:
        """Two-column (distance, count) text for plotting tools."""
        header = f"# distance_A count_per_atom bin_width={self.bin_width}"
        if self.species_pair:
            header += f" pair={'-'.join(self.species_pair)}"
        rows = [header]
        rows += [f"{start:.4f} {count:.6f}" for start, count in zip(self.bin_starts, self.counts)]
        return "\n".join(rows) + "\n"


def pair_distribution(
    s: CrystalStructure,
    bin_width: float = 0.1,
    cutoff: Optional[float] = None,
    pair: Optional[SpeciesPair] = None,
    max_images: int = 20000,
) -> PairDistribution:
    """
    Histogram of neighbor distances.

    Args:
        s: Structure
        bin_width: Bin width in Angstrom (> 0)
        cutoff: Search radius (defaults to DEFAULT_CUTOFF)
        pair: Optional species pair restricting the counted neighbors
        max_images: Limit on enumerated periodic images

    Returns:
        PairDistribution whose counts sum to |pairs| / |atoms|
    """
    if not bin_width > 0:
        raise ConfigError(f"bin_width must be > 0, got {bin_width}")
    report = neighbor_distances(s, cutoff, max_images)
    n_bins = max(int(np.ceil(report.cutoff / bin_width - 1e-12)), 1)
    target = species_pair(*pair) if pair else None
    distances = np.array([
        p.distance for p in report.pairs if target is None or p.species_pair == target
    ])
    counts = np.zeros(n_bins, dtype=np.float64)
    if distances.size:
        index = np.floor(distances / bin_width + 1e-9).astype(int)
        np.add.at(counts, np.clip(index, 0, n_bins - 1), 1.0)
    return PairDistribution(
        bin_width=bin_width,
        cutoff=report.cutoff,
        counts=counts / s.num_sites,
        species_pair=target,
    )


@dataclass
class GeoLossResult:
    """Constraint values and their gradients with respect to the sample blocks."""

    lower: float
    upper: float
    grad_lower: np.ndarray
    grad_upper: np.ndarray
    no_penalized_pairs: bool = False
    lower_distance: Optional[float] = None
    upper_distance: Optional[float] = None
    first_neighbor_count: int = 0

    @property
    def total(self) -> float:
        return self.lower + self.upper

    @property
    def gradient(self) -> np.ndarray:
        return self.grad_lower + self.grad_upper


def _distance_gradient(
    grad: np.ndarray, coefficient: float, table: _PairTable, row: int,
    slots: List[Tuple[int, int]], matrix: np.ndarray,
) -> None:
    """Accumulate coefficient * d(distance)/d(blocks) for one pair into `grad`."""
    distance = table.distances[row]
    if distance < _OVERLAP or coefficient == 0.0:
        return
    unit = table.vectors[row] / distance
    along_frac = matrix @ unit
    bi, ri = slots[int(table.i[row])]
    bj, rj = slots[int(table.j[row])]
    grad[bj, rj] += coefficient * along_frac
    grad[bi, ri] -= coefficient * along_frac
    grad[LATTICE_BLOCK, :3] += coefficient * np.outer(table.delta_frac[row], unit)


def geo_losses(
    e: EncodedSample,
    cfg: GeoConfig,
    mode: GeoMode = GeoMode.LITERAL,
    threshold: Optional[float] = None,
) -> GeoLossResult:
    """
    Geometric constraint losses on a (possibly generated) sample.

    S is the set of first-neighbor distances per atom and penalized species pair.
    Literal mode: lower = min_S (d1 - s)^2, upper = -min_S (d2 - s)^2, with ties
    broken by the lowest (i, j, image). Hinge mode sums max(0, d1 - s)^2 and
    max(0, s - d2)^2 over S. Gradients flow into the coordinate rows of the pair
    and the lattice rows.

    Args:
        e: Sample in raw (Angstrom / fractional) units
        cfg: Thresholds and penalized pairs
        mode: paper (literal formulas), hinge or off
        threshold: Padding threshold for samples without occupancy

    Returns:
        GeoLossResult; `no_penalized_pairs` is set when S is empty

    Raises:
        NoAtoms, SingularLattice, ImageSearchTooLarge
    """
    mode = GeoMode(mode)
    zeros = np.zeros_like(e.blocks)
    if mode == GeoMode.OFF:
        return GeoLossResult(0.0, 0.0, zeros, zeros.copy())

    species: List[str] = []
    slots: List[Tuple[int, int]] = []
    for block in (H_BLOCK, METAL_A_BLOCK, METAL_B_BLOCK):
        label = e.species_labels[block]
        rows = e.atom_rows(block, threshold)
        if label is None:
            continue
        for row in rows:
            species.append(label)
            slots.append((block, int(row)))
    if not slots:
        raise NoAtoms("sample has no atoms above the padding threshold")

    matrix = e.blocks[LATTICE_BLOCK, :3].copy()
    frac = wrap_fractional(np.array([e.blocks[b, r] for b, r in slots]))
    table = _enumerate_pairs(frac, matrix, cfg.cutoff, cfg.max_images,
                             radius=first_neighbor_radius(matrix, species, cfg.cutoff))

    first = [
        (key, row) for key, row in _first_neighbor_index(table, species).items()
        if cfg.is_penalized(key[1])
    ]
    if not first:
        return GeoLossResult(0.0, 0.0, zeros, zeros.copy(), no_penalized_pairs=True)

    # table rows are already in (i, j, image) order
    first.sort(key=lambda item: item[1])
    rows = [row for _, row in first]
    s_values = table.distances[rows]
    grad_lower = zeros.copy()
    grad_upper = zeros.copy()

    if mode == GeoMode.LITERAL:
        lower_terms = (cfg.d1 - s_values) ** 2
        upper_terms = (cfg.d2 - s_values) ** 2
        k1 = int(np.argmin(lower_terms))
        k2 = int(np.argmin(upper_terms))
        lower = float(lower_terms[k1])
        upper = -float(upper_terms[k2])
        _distance_gradient(grad_lower, -2.0 * (cfg.d1 - s_values[k1]), table, rows[k1],
                           slots, matrix)
        _distance_gradient(grad_upper, 2.0 * (cfg.d2 - s_values[k2]), table, rows[k2],
                           slots, matrix)
        return GeoLossResult(
            lower=lower,
            upper=upper,
            grad_lower=grad_lower,
            grad_upper=grad_upper,
            lower_distance=float(s_values[k1]),
            upper_distance=float(s_values[k2]),
            first_neighbor_count=len(rows),
        )

    too_close = np.maximum(cfg.d1 - s_values, 0.0)
    too_far = np.maximum(s_values - cfg.d2, 0.0)
    for k, row in enumerate(rows):
        _distance_gradient(grad_lower, -2.0 * too_close[k], table, row, slots, matrix)
        _distance_gradient(grad_upper, 2.0 * too_far[k], table, row, slots, matrix)
    return GeoLossResult(
        lower=float(np.sum(too_close ** 2)),
        upper=float(np.sum(too_far ** 2)),
        grad_lower=grad_lower,
        grad_upper=grad_upper,
        lower_distance=float(s_values.min()),
        upper_distance=float(s_values.max()),
        first_neighbor_count=len(rows),
    )


@dataclass
class Violation:
    atom: int
    species: str
    species_pair: SpeciesPair
    distance: Optional[float]
    reason: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "atom": self.atom,
            "species": self.species,
            "species_pair": list(self.species_pair),
            "distance": self.distance,
            "reason": self.reason,
        }


@dataclass
class StructureVerdict:
    structure_id: str
    good: bool
    ternary: bool
    formula: str
    violations: List[Violation] = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "verdict": "good" if self.good else "bad",
            "ternary": self.ternary,
            "formula": self.formula,
            "violations": [v.to_dict() for v in self.violations],
            "error": self.error,
        }


def _is_ternary(s: CrystalStructure) -> bool:
    metals = {symbol for symbol in s.elements if symbol != HYDROGEN}
    return HYDROGEN in s.elements and len(metals) >= 2


def validate_structure(
    s: CrystalStructure, cfg: GeoConfig, structure_id: str = ""
) -> StructureVerdict:
    """
    Check every penalized first-neighbor distance against [d1, d2].

    An atom with no partner of a penalized class inside the cutoff counts as a
    violation, since its first neighbor is farther than d2.

    Args:
        s: Binary or ternary structure
        cfg: Thresholds and penalized pairs
        structure_id: Identifier carried into the verdict

    Returns:
        StructureVerdict, good iff no violations
    """
    species = s.species
    matrix = s.lattice.matrix
    table = _enumerate_pairs(
        wrap_fractional(s.frac_coords), matrix, cfg.cutoff, cfg.max_images,
        radius=first_neighbor_radius(matrix, species, cfg.cutoff),
    )
    first = _first_neighbor_index(table, species)
    elements = s.elements
    violations: List[Violation] = []
    for atom, symbol in enumerate(species):
        for partner in elements:
            pair = species_pair(symbol, partner)
            if not cfg.is_penalized(pair):
                continue
            row = first.get((atom, pair))
            distance = None if row is None else float(table.distances[row])
            if distance is None:
                violations.append(Violation(atom, symbol, pair, None, "no_neighbor_within_cutoff"))
            elif distance < cfg.d1:
                violations.append(Violation(atom, symbol, pair, distance, "below_d1"))
            elif distance > cfg.d2:
                violations.append(Violation(atom, symbol, pair, distance, "above_d2"))
    return StructureVerdict(
        structure_id=structure_id,
        good=not violations,
        ternary=_is_ternary(s),
        formula=species_formula(s),
        violations=violations,
    )


@dataclass
class ValidationReport:
    """Per-structure verdicts; `good_count` counts good ternary structures."""

    per_structure: Dict[str, StructureVerdict]
    d1: float
    d2: float
    cutoff: float

    @property
    def total(self) -> int:
        return len(self.per_structure)

    @property
    def good_count(self) -> int:
        return sum(1 for v in self.per_structure.values() if v.good and v.ternary)

    def to_summary(self) -> Dict[str, Any]:
        return {
            "d1": self.d1,
            "d2": self.d2,
            "cutoff": self.cutoff,
            "total": self.total,
            "good_count": self.good_count,
            "per_structure": {key: v.to_dict() for key, v in self.per_structure.items()},
        }

    @classmethod
    def from_summary(cls, data: Mapping[str, Any]) -> "ValidationReport":
        per_structure: Dict[str, StructureVerdict] = {}
        for key in sorted(data.get("per_structure", {})):
            entry = data["per_structure"][key]
            per_structure[key] = StructureVerdict(
                structure_id=key,
                good=entry["verdict"] == "good",
                ternary=bool(entry.get("ternary", False)),
                formula=entry.get("formula", ""),
                violations=[
                    Violation(
                        atom=v["atom"],
                        species=v["species"],
                        species_pair=tuple(v["species_pair"]),
                        distance=v["distance"],
                        reason=v["reason"],
                    )
                    for v in entry.get("violations", [])
                ],
                error=entry.get("error"),
            )
        return cls(
            per_structure=per_structure,
            d1=float(data.get("d1", config.DEFAULT_D1)),
            d2=float(data.get("d2", config.DEFAULT_D2)),
            cutoff=float(data.get("cutoff", config.DEFAULT_CUTOFF)),
        )

    def to_text(self) -> str:
        lines = [
            "Structure validation report",
            f"d1={self.d1:.3f} A  d2={self.d2:.3f} A  cutoff={self.cutoff:.3f} A",
            "",
            f"{'structure':<40} {'formula':<16} {'ternary':<8} verdict",
        ]
        for key, verdict in self.per_structure.items():
            lines.append(
                f"{key:<40} {verdict.formula:<16} {'yes' if verdict.ternary else 'no':<8} "
                f"{'good' if verdict.good else 'bad'}"
            )
            if verdict.error:
                lines.append(f"    error: {verdict.error}")
            for v in verdict.violations:
                shown = "none within cutoff" if v.distance is None else f"{v.distance:.4f} A"
                lines.append(
                    f"    atom {v.atom} ({v.species}) {'-'.join(v.species_pair)}: {shown} [{v.reason}]"
                )
        lines += ["", f"good ternary structures: {self.good_count} / {self.total}"]
        return "\n".join(lines) + "\n"


def validate_structures(
    structures: Mapping[str, Optional[CrystalStructure]],
    cfg: GeoConfig,
    failures: Optional[Mapping[str, str]] = None,
    workers: int = 1,
) -> ValidationReport:
    """
    Validate many structures; results are ordered by structure id.

    Args:
        structures: id -> structure
        cfg: Thresholds and penalized pairs
        failures: id -> error message for candidates that could not be decoded
        workers: Thread count for fan-out (1 = sequential)

    Returns:
        ValidationReport
    """
    ids = sorted(structures)

    def _one(key: str) -> StructureVerdict:
        try:
            return validate_structure(structures[key], cfg, structure_id=key)
        except HydrideGanError as e:
            logger.warning("structure_not_validated", structure_id=key, error=str(e)[:200])
            return StructureVerdict(
                structure_id=key, good=False, ternary=False, formula="", error=str(e)
            )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(_one, ids))
    else:
        verdicts = [_one(key) for key in ids]

    per_structure = {v.structure_id: v for v in verdicts}
    for key, message in (failures or {}).items():
        per_structure[key] = StructureVerdict(
            structure_id=key, good=False, ternary=False, formula="", error=message
        )
    ordered = {key: per_structure[key] for key in sorted(per_structure)}
    report = ValidationReport(per_structure=ordered, d1=cfg.d1, d2=cfg.d2, cutoff=cfg.cutoff)
    logger.info("structures_validated", total=report.total, good_ternary=report.good_count)
    return report
