"""Seeded binary-hydride POSCAR corpora on simple cubic prototypes."""
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog

from apps.hydride_gan.services.encoding import HYDROGEN
from apps.hydride_gan.services.poscar_io import (
    AtomSite,
    CrystalStructure,
    Lattice,
    wrap_fractional,
    write_poscar_file,
)
from apps.hydride_gan.utils.error_handler import ConfigError

logger = structlog.get_logger()

MAX_JITTER = 0.02
LATTICE_LIMITS = (2.0, 8.0)

_FCC = [(0.0, 0.0, 0.0), (0.0, 0.5, 0.5), (0.5, 0.0, 0.5), (0.5, 0.5, 0.0)]

# prototype -> (metal sites, hydrogen sites, formula suffix) in the conventional cubic cell
PROTOTYPES: Dict[str, Tuple[List[Tuple[float, float, float]], List[Tuple[float, float, float]], str]] = {
    "rocksalt": (
        _FCC,
        [(0.5, 0.5, 0.5), (0.5, 0.0, 0.0), (0.0, 0.5, 0.0), (0.0, 0.0, 0.5)],
        "H",
    ),
    "fluorite": (
        _FCC,
        [(x, y, z) for x in (0.25, 0.75) for y in (0.25, 0.75) for z in (0.25, 0.75)],
        "H2",
    ),
}


def prototype_structure(
    prototype: str, metal: str, a: float, jitter: Optional[np.ndarray] = None, comment: str = ""
) -> CrystalStructure:
    """Cubic prototype cell with lattice constant `a`; `jitter` is added to the fractional sites."""
    if prototype not in PROTOTYPES:
        raise ConfigError(f"unknown prototype '{prototype}' (choose from {sorted(PROTOTYPES)})")
    metal_sites, h_sites, _ = PROTOTYPES[prototype]
    frac = np.array(metal_sites + h_sites, dtype=np.float64)
    if jitter is not None:
        frac = wrap_fractional(frac + jitter)
    species = [metal] * len(metal_sites) + [HYDROGEN] * len(h_sites)
    return CrystalStructure.from_sites(
        Lattice(np.eye(3) * a),
        [AtomSite(symbol, row) for symbol, row in zip(species, frac)],
        comment=comment,
    )


def make_synthetic_corpus(
    prototype: str,
    metal: str,
    lattice_range: Tuple[float, float],
    count: int,
    seed: int,
    out_dir,
    jitter: float = MAX_JITTER,
) -> Path:
    """
    Write `count` jittered binary-hydride POSCAR files.

    Args:
        prototype: "rocksalt" (MH) or "fluorite" (MH2)
        metal: Metal symbol, e.g. "Pd"
        lattice_range: (low, high) bounds of the uniform lattice constant, within [2, 8] Angstrom
        count: Number of structures (>= 1)
        seed: PRNG seed; the same seed writes the same corpus
        out_dir: Target directory (created if missing)
        jitter: Maximum absolute fractional perturbation per coordinate (<= 0.02)

    Returns:
        The corpus directory
    """
    low, high = float(lattice_range[0]), float(lattice_range[1])
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if not LATTICE_LIMITS[0] <= low <= high <= LATTICE_LIMITS[1]:
        raise ConfigError(
            f"lattice range ({low}, {high}) must lie within {LATTICE_LIMITS} with low <= high"
        )
    if not 0.0 <= jitter <= MAX_JITTER:
        raise ConfigError(f"jitter must be within [0, {MAX_JITTER}], got {jitter}")
    if metal == HYDROGEN:
        raise ConfigError("the metal symbol cannot be hydrogen")
    if prototype not in PROTOTYPES:
        raise ConfigError(f"unknown prototype '{prototype}' (choose from {sorted(PROTOTYPES)})")

    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    metal_sites, h_sites, suffix = PROTOTYPES[prototype]
    n_sites = len(metal_sites) + len(h_sites)
    for k in range(count):
        a = float(rng.uniform(low, high))
        noise = rng.uniform(-jitter, jitter, size=(n_sites, 3))
        structure = prototype_structure(
            prototype, metal, a, noise, comment=f"{metal}{suffix} {prototype} a={a:.4f}"
        )
        write_poscar_file(structure, directory / f"{metal}{suffix}_{prototype}_{k:03d}.vasp")

    logger.info(
        "synthetic_corpus_written",
        prototype=prototype,
        metal=metal,
        count=count,
        seed=seed,
        directory=str(directory),
    )
    return directory
