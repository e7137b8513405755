"""Pytest configuration and fixtures."""
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np
import pytest
import structlog

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from apps.hydride_gan.services.encoding import (
    SAMPLE_SIZE,
    DomainDataset,
    DomainTag,
    default_slot_map,
    encode,
    ternary_labels,
)
from apps.hydride_gan.services.neuralnet import MlpParams, MlpSpec
from apps.hydride_gan.services.poscar_io import AtomSite, CrystalStructure, Lattice
from apps.hydride_gan.services.synthetic_corpus import prototype_structure


def pytest_collection_modifyitems(config, items):
    """Mark everything under tests/unit as a unit test."""
    unit_dir = (Path(__file__).parent / "unit").resolve()
    for item in items:
        if unit_dir in Path(item.path).resolve().parents:
            item.add_marker(pytest.mark.unit)


@pytest.fixture(autouse=True)
def reset_structlog():
    """Reset structlog configuration made by CLI calls."""
    yield
    structlog.reset_defaults()


@pytest.fixture
def rocksalt() -> Callable[..., CrystalStructure]:
    """Builder for ideal rock-salt MH cells."""
    def _build(metal: str = "Pd", a: float = 4.0) -> CrystalStructure:
        return prototype_structure("rocksalt", metal, a, comment=f"{metal}H rocksalt")
    return _build


@pytest.fixture
def random_structure() -> Callable[..., CrystalStructure]:
    """Builder for random right-handed cells with up to `max_atoms` atoms of 1-3 species."""
    def _build(seed: int, max_atoms: int = 8) -> CrystalStructure:
        rng = np.random.default_rng(seed)
        while True:
            matrix = np.diag(rng.uniform(3.0, 6.0, size=3)) + rng.uniform(-0.8, 0.8, size=(3, 3))
            if np.linalg.det(matrix) > 5.0:
                break
        n_atoms = int(rng.integers(1, max_atoms + 1))
        symbols = ["Pd", "Ni", "H"][: int(rng.integers(1, 4))]
        species = sorted(
            (symbols[k % len(symbols)] for k in range(n_atoms)), key=symbols.index
        )
        sites = [AtomSite(symbol, rng.uniform(0.0, 1.0, size=3)) for symbol in species]
        return CrystalStructure.from_sites(Lattice(matrix), sites, comment=f"random {seed}")
    return _build


@pytest.fixture
def binary_datasets(rocksalt):
    """Small AH (PdH) and BH (NiH) datasets on rock-salt cells."""
    def _build(count: int = 4):
        pd = [encode(rocksalt("Pd", 4.0 + 0.02 * k), default_slot_map(DomainTag.AH, "Pd", "Ni"))
              for k in range(count)]
        ni = [encode(rocksalt("Ni", 3.7 + 0.02 * k), default_slot_map(DomainTag.BH, "Pd", "Ni"))
              for k in range(count)]
        labels = ternary_labels("Pd", "Ni")
        pd = [replace(sample, species_labels=labels, provenance={"source": f"PdH_{k:03d}.vasp"})
              for k, sample in enumerate(pd)]
        ni = [replace(sample, species_labels=labels, provenance={"source": f"NiH_{k:03d}.vasp"})
              for k, sample in enumerate(ni)]
        return (
            DomainDataset(pd, DomainTag.AH, "Pd", "Ni", [f"PdH_{k:03d}.vasp" for k in range(count)]),
            DomainDataset(ni, DomainTag.BH, "Pd", "Ni", [f"NiH_{k:03d}.vasp" for k in range(count)]),
        )
    return _build


@pytest.fixture
def identity_generator() -> MlpParams:
    """Single linear layer with identity weights: y = x."""
    spec = MlpSpec((SAMPLE_SIZE, SAMPLE_SIZE), output_activation="linear")
    return MlpParams(spec, [np.eye(SAMPLE_SIZE)], [np.zeros(SAMPLE_SIZE)])


@pytest.fixture
def half_discriminator() -> MlpParams:
    """Discriminator whose output is exactly 0.5 for every input."""
    spec = MlpSpec((SAMPLE_SIZE, 8, 1), output_activation="sigmoid")
    rng = np.random.default_rng(7)
    return MlpParams(
        spec,
        [rng.normal(size=(8, SAMPLE_SIZE)), np.zeros((1, 8))],
        [np.zeros(8), np.zeros(1)],
    )
