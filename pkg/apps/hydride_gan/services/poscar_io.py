"""POSCAR reading and writing, and the canonical in-memory crystal structure."""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog

from apps.hydride_gan.utils.error_handler import (
    CountMismatch,
    InvariantViolation,
    MalformedHeader,
    SingularLattice,
    UnknownCoordinateMode,
)

logger = structlog.get_logger()

SINGULAR_DET = 1e-10
MAX_SPECIES = 3
COORD_DIGITS = 9


@dataclass(frozen=True, eq=False)
class Lattice:
    """Unit cell: rows of `vectors` are the a, b, c lattice vectors (Angstrom)."""

    vectors: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64).reshape(3, 3)
        object.__setattr__(self, "vectors", vectors)
        if not self.scale > 0:
            raise InvariantViolation(f"lattice scale must be > 0, got {self.scale}")
        det = float(np.linalg.det(self.matrix))
        if abs(det) < SINGULAR_DET:
            raise SingularLattice(f"lattice determinant {det:.3e} is singular")
        if det < 0:
            raise InvariantViolation("lattice is left-handed (negative determinant)")

    @property
    def matrix(self) -> np.ndarray:
        """Lattice vectors with the scale applied."""
        return self.vectors * self.scale

    @property
    def volume(self) -> float:
        return float(np.linalg.det(self.matrix))

    @property
    def plane_spacings(self) -> np.ndarray:
        """Distances between adjacent lattice planes along each reciprocal axis."""
        reciprocal = np.linalg.inv(self.matrix).T
        return 1.0 / np.linalg.norm(reciprocal, axis=1)


@dataclass(frozen=True, eq=False)
class AtomSite:
    species: str
    frac: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "frac", np.array(self.frac, dtype=np.float64).reshape(3))


@dataclass(frozen=True, eq=False)
class CrystalStructure:
    """
    Parsed crystal.

    `species_order` holds (symbol, count) pairs in POSCAR order. Invariants are
    checked by `check_invariants`, not at construction, so that `canonicalize`
    can repair grouping of hand-built structures.
    """

    lattice: Lattice
    sites: Tuple[AtomSite, ...]
    species_order: Tuple[Tuple[str, int], ...]
    comment: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        object.__setattr__(
            self, "species_order", tuple((str(sp), int(n)) for sp, n in self.species_order)
        )

    @classmethod
    def from_sites(
        cls, lattice: Lattice, sites: List[AtomSite], comment: str = ""
    ) -> "CrystalStructure":
        """Build a structure whose species order follows first appearance in `sites`."""
        counts: Dict[str, int] = {}
        for site in sites:
            counts[site.species] = counts.get(site.species, 0) + 1
        return cls(lattice=lattice, sites=tuple(sites), species_order=tuple(counts.items()),
                   comment=comment)

    @property
    def num_sites(self) -> int:
        return len(self.sites)

    @property
    def species(self) -> List[str]:
        return [site.species for site in self.sites]

    @property
    def elements(self) -> List[str]:
        return [symbol for symbol, _ in self.species_order]

    @property
    def frac_coords(self) -> np.ndarray:
        if not self.sites:
            return np.zeros((0, 3))
        return np.stack([site.frac for site in self.sites])

    @property
    def cart_coords(self) -> np.ndarray:
        return self.frac_coords @ self.lattice.matrix

    def check_invariants(self) -> None:
        """
        Validate POSCAR-level invariants.

        Raises:
            InvariantViolation: on empty structures, count mismatches, ungrouped
                sites or more than three distinct species
        """
        if not self.sites:
            raise InvariantViolation("structure has no sites")
        total = sum(count for _, count in self.species_order)
        if total != len(self.sites):
            raise InvariantViolation(
                f"species counts sum to {total} but structure has {len(self.sites)} sites"
            )
        symbols = self.elements
        if len(set(symbols)) != len(symbols):
            raise InvariantViolation(f"species listed twice in {symbols}")
        if not 1 <= len(symbols) <= MAX_SPECIES:
            raise InvariantViolation(f"expected 1..{MAX_SPECIES} species, got {len(symbols)}")
        expected = [symbol for symbol, count in self.species_order for _ in range(count)]
        if expected != self.species:
            raise InvariantViolation("sites are not grouped by species in species_order order")
        if any(count < 1 for _, count in self.species_order):
            raise InvariantViolation("species counts must be >= 1")

    def allclose(self, other: "CrystalStructure", atol: float = 1e-9) -> bool:
        """Field-wise comparison; fractional coordinates compare modulo 1."""
        if self.species_order != other.species_order or self.species != other.species:
            return False
        if self.comment.strip() != other.comment.strip():
            return False
        if not np.allclose(self.lattice.matrix, other.lattice.matrix, rtol=0.0, atol=atol):
            return False
        if self.num_sites == 0:
            return True
        delta = self.frac_coords - other.frac_coords
        delta -= np.round(delta)
        return bool(np.all(np.abs(delta) <= atol))


def wrap_fractional(frac: np.ndarray) -> np.ndarray:
    """Wrap fractional coordinates into [0, 1)."""
    frac = np.asarray(frac, dtype=np.float64)
    wrapped = frac - np.floor(frac)
    # x - floor(x) can round up to exactly 1.0 for tiny negative x
    wrapped[wrapped >= 1.0] = 0.0
    return wrapped + 0.0


def canonicalize(s: CrystalStructure) -> CrystalStructure:
    """
    Wrap coordinates into [0, 1) and regroup sites by species.

    Species keep the order of their first appearance in `species_order` (or in the
    sites for species missing from it); intra-species site order is preserved.

    Args:
        s: Structure to canonicalize

    Returns:
        Canonical structure
    """
    order: List[str] = []
    for symbol, _ in s.species_order:
        if symbol not in order:
            order.append(symbol)
    for site in s.sites:
        if site.species not in order:
            order.append(site.species)

    grouped: List[AtomSite] = []
    counts: List[Tuple[str, int]] = []
    for symbol in order:
        members = [site for site in s.sites if site.species == symbol]
        if not members:
            continue
        counts.append((symbol, len(members)))
        grouped.extend(
            AtomSite(species=symbol, frac=wrap_fractional(site.frac[None, :])[0])
            for site in members
        )

    return CrystalStructure(
        lattice=s.lattice,
        sites=tuple(grouped),
        species_order=tuple(counts),
        comment=s.comment,
    )


def _floats(line: str, expected: int, what: str) -> List[float]:
    tokens = line.split()
    if len(tokens) < expected:
        raise MalformedHeader(f"{what}: expected {expected} numbers, got '{line.strip()}'")
    try:
        return [float(token) for token in tokens[:expected]]
    except ValueError as e:
        raise MalformedHeader(f"{what}: non-numeric value in '{line.strip()}'") from e


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _is_count_line(tokens: List[str]) -> bool:
    return bool(tokens) and all(token.isdigit() for token in tokens)


def right_handed(matrix: np.ndarray, frac: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Negating every lattice vector and coordinate describes the same crystal."""
    det = np.linalg.det(matrix)
    if abs(det) < SINGULAR_DET:
        raise SingularLattice(f"lattice determinant {det:.3e} is singular")
    if det < 0:
        logger.debug("left_handed_lattice_flipped", det=float(det))
        return -matrix, -frac
    return matrix, frac


def parse_poscar(text: str) -> CrystalStructure:
    """
    Parse a POSCAR document into a canonical structure with fractional coordinates.

    Supports VASP 5 files (species symbols line) and the older dialect where the
    symbols are read from the comment line. Selective dynamics, velocity and
    predictor blocks are rejected.

    Args:
        text: POSCAR document

    Returns:
        Canonical CrystalStructure

    Raises:
        MalformedHeader, CountMismatch, SingularLattice, UnknownCoordinateMode
    """
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) < 7:
        raise MalformedHeader(f"POSCAR needs at least 7 header lines, got {len(lines)}")

    comment = lines[0].strip()
    scale_tokens = lines[1].split()
    if len(scale_tokens) >= 3 and all(_is_number(token) for token in scale_tokens[:3]):
        raise MalformedHeader("per-axis scale factors are not supported")
    scale = _floats(lines[1], 1, "scale")[0]
    vectors = np.array([_floats(lines[i], 3, f"lattice row {i - 1}") for i in (2, 3, 4)])

    if scale == 0:
        raise MalformedHeader("scale factor must be non-zero")
    if scale < 0:
        # negative scale is the target cell volume
        raw_volume = abs(np.linalg.det(vectors))
        if raw_volume < SINGULAR_DET:
            raise SingularLattice("cannot apply volume scaling to a singular lattice")
        scale = (abs(scale) / raw_volume) ** (1.0 / 3.0)
    matrix = vectors * scale

    cursor = 5
    tokens = lines[cursor].split()
    if _is_count_line(tokens):
        counts = [int(token) for token in tokens]
        symbols = comment.split()[:len(counts)]
        if len(symbols) < len(counts) or not all(symbol.isalpha() for symbol in symbols):
            raise MalformedHeader(
                "no species line and the comment line does not name the species"
            )
        cursor += 1
    else:
        symbols = tokens
        if cursor + 1 >= len(lines):
            raise MalformedHeader("missing counts line")
        count_tokens = lines[cursor + 1].split()
        if not _is_count_line(count_tokens):
            raise MalformedHeader(f"invalid counts line '{lines[cursor + 1].strip()}'")
        counts = [int(token) for token in count_tokens]
        cursor += 2
        if len(symbols) != len(counts):
            raise MalformedHeader(
                f"{len(symbols)} species symbols but {len(counts)} counts"
            )

    if cursor >= len(lines):
        raise MalformedHeader("missing coordinate mode line")
    mode_line = lines[cursor].strip()
    if not mode_line:
        raise UnknownCoordinateMode("empty coordinate mode line")
    mode = mode_line[0].lower()
    if mode == "s":
        raise MalformedHeader("selective dynamics is not supported")
    if mode == "d":
        cartesian = False
    elif mode in ("c", "k"):
        cartesian = True
    else:
        raise UnknownCoordinateMode(f"unknown coordinate mode '{mode_line}'")
    cursor += 1

    block: List[str] = []
    while cursor < len(lines) and lines[cursor].strip():
        block.append(lines[cursor])
        cursor += 1
    if any(line.strip() for line in lines[cursor:]):
        raise MalformedHeader("velocity or predictor blocks are not supported")

    total = sum(counts)
    if len(block) != total:
        raise CountMismatch(f"counts line declares {total} atoms, found {len(block)} rows")

    coords = np.array(
        [_floats(line, 3, f"coordinate row {k + 1}") for k, line in enumerate(block)]
    ).reshape(-1, 3)
    if cartesian:
        if abs(np.linalg.det(matrix)) < SINGULAR_DET:
            raise SingularLattice("singular lattice, cannot convert Cartesian coordinates")
        coords = (coords * scale) @ np.linalg.inv(matrix)

    matrix, coords = right_handed(matrix, coords)
    lattice = Lattice(vectors=matrix, scale=1.0)

    sites: List[AtomSite] = []
    row = 0
    for symbol, count in zip(symbols, counts):
        for _ in range(count):
            sites.append(AtomSite(species=symbol, frac=coords[row]))
            row += 1

    structure = canonicalize(CrystalStructure(
        lattice=lattice,
        sites=tuple(sites),
        species_order=tuple(zip(symbols, counts)),
        comment=comment,
    ))
    structure.check_invariants()
    return structure


def _format_number(value: float) -> str:
    text = f"{value:.{COORD_DIGITS}f}"
    if text.startswith("-") and float(text) == 0.0:
        text = text[1:]
    return text


def _format_fraction(value: float) -> str:
    text = _format_number(value)
    # a coordinate that rounds to 1.0 is the same site as 0.0
    if float(text) >= 1.0:
        text = _format_number(0.0)
    return text


def write_poscar(s: CrystalStructure) -> str:
    """
    Serialize a structure as a Direct-mode POSCAR with scale 1.0.

    Args:
        s: Structure satisfying CrystalStructure invariants

    Returns:
        POSCAR text with LF line endings

    Raises:
        InvariantViolation: if the structure is empty or inconsistent
    """
    s.check_invariants()
    matrix = s.lattice.matrix
    lines = [
        " ".join(s.comment.splitlines()),
        f"  {_format_number(1.0)}",
    ]
    for row in matrix:
        lines.append("  " + " ".join(f"{_format_number(v):>16}" for v in row))
    lines.append("  " + " ".join(f"{symbol:>4}" for symbol, _ in s.species_order))
    lines.append("  " + " ".join(f"{count:>4d}" for _, count in s.species_order))
    lines.append("Direct")
    for site in s.sites:
        wrapped = wrap_fractional(site.frac[None, :])[0]
        lines.append("  " + " ".join(f"{_format_fraction(v):>14}" for v in wrapped))
    return "\n".join(lines) + "\n"


def read_poscar_file(path) -> CrystalStructure:
    """Parse a POSCAR file from disk."""
    with open(path, "r", encoding="utf-8") as f:
        return parse_poscar(f.read())


def write_poscar_file(s: CrystalStructure, path) -> None:
    """Write a structure to disk as POSCAR."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(write_poscar(s))


def species_formula(s: CrystalStructure, hydrogen: Optional[str] = "H") -> str:
    """Compact formula with hydrogen last, e.g. 'Pd4Ni2H6'."""
    parts = [(symbol, count) for symbol, count in s.species_order if symbol != hydrogen]
    parts += [(symbol, count) for symbol, count in s.species_order if symbol == hydrogen]
    return "".join(f"{symbol}{count if count > 1 else ''}" for symbol, count in parts)
