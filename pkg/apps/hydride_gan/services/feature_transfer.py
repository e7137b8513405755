"""Build the ternary step-2 domains by filling placeholder blocks with generated metals."""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import structlog

from apps.hydride_gan.services.crossgan import STEP1, GanStepModel, generate
from apps.hydride_gan.services.encoding import (
    H_BLOCK,
    HYDROGEN,
    METAL_A_BLOCK,
    METAL_B_BLOCK,
    DomainDataset,
    DomainTag,
    EncodedSample,
)
from apps.hydride_gan.services.poscar_io import wrap_fractional
from apps.hydride_gan.utils.error_handler import (
    AllSamplesDropped,
    EmptyTransfer,
    InvariantViolation,
    SlotNotEmpty,
)

logger = structlog.get_logger()

# binary source domain -> (ternary target domain, placeholder block to fill)
TRANSFER_ROUTES = {
    DomainTag.AH: (DomainTag.AHBG, METAL_B_BLOCK),
    DomainTag.BH: (DomainTag.BHAG, METAL_A_BLOCK),
}


def _route(direction: DomainTag) -> Tuple[DomainTag, int]:
    direction = DomainTag(direction)
    for target, block in TRANSFER_ROUTES.values():
        if target == direction:
            return target, block
    raise InvariantViolation(f"'{direction.value}' is not a transfer target (AHBg or BHAg)")


def transfer(
    original: EncodedSample,
    generated: EncodedSample,
    direction: DomainTag,
    threshold: Optional[float] = None,
) -> EncodedSample:
    """
    Fill the original's empty metal block with the same block of its generated twin.

    The lattice, hydrogen and own-metal blocks are copied bit for bit; only the
    placeholder block changes. Its rows are the generated rows above the
    threshold, compacted to the top and wrapped into [0, 1).

    Args:
        original: Binary sample with known occupancy
        generated: Step-1 output for that same sample
        direction: Target domain, AHBg (fills block 3) or BHAg (fills block 2)
        threshold: Padding threshold for the generated rows

    Returns:
        Ternary sample tagged with transfer provenance

    Raises:
        SlotNotEmpty: the original's placeholder block is occupied
        EmptyTransfer: the generated block has no row above the threshold
    """
    target, block = _route(direction)
    if original.occupancy is None:
        raise InvariantViolation("feature transfer needs an original sample with occupancy")
    if original.occupancy[block] != 0:
        raise SlotNotEmpty(
            f"block {block} of the original already holds {original.occupancy[block]} atoms"
        )
    rows = generated.atom_rows(block, threshold)
    if rows.size == 0:
        raise EmptyTransfer(f"generated sample has no atoms in block {block}")

    blocks = original.blocks.copy()
    blocks[block] = 0.0
    blocks[block, :rows.size] = wrap_fractional(generated.blocks[block, rows])
    occupancy = list(original.occupancy)
    occupancy[block] = int(rows.size)
    return EncodedSample(
        blocks=blocks,
        occupancy=tuple(occupancy),
        species_labels=original.species_labels,
        comment=original.comment,
        provenance={
            "source": original.provenance.get("source"),
            "domain": target.value,
            "filled_block": block,
            "step1_checksum": generated.provenance.get("model_checksum"),
        },
    )


@dataclass
class TransferLog:
    """Kept and dropped sources per target domain."""

    kept: Dict[str, List[str]] = field(default_factory=dict)
    dropped: Dict[str, List[str]] = field(default_factory=dict)
    step1_checksum: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step1_checksum": self.step1_checksum,
            "kept": self.kept,
            "dropped": self.dropped,
            "kept_counts": {k: len(v) for k, v in self.kept.items()},
            "dropped_counts": {k: len(v) for k, v in self.dropped.items()},
        }


def _transfer_domain(
    dataset: DomainDataset,
    model: GanStepModel,
    threshold: Optional[float],
    log: TransferLog,
) -> DomainDataset:
    target, _ = TRANSFER_ROUTES[dataset.domain_tag]
    kept_samples: List[EncodedSample] = []
    kept_sources: List[str] = []
    dropped: List[str] = []
    for source, original, generated in zip(dataset.sources, dataset.samples,
                                           generate(model, dataset)):
        try:
            sample = transfer(original, generated, target, threshold)
        except EmptyTransfer:
            dropped.append(source)
            continue
        kept_samples.append(sample)
        kept_sources.append(source)

    log.kept[target.value] = kept_sources
    log.dropped[target.value] = dropped
    if dropped:
        logger.warning(
            "transfer_samples_dropped",
            domain=target.value,
            dropped=len(dropped),
            kept=len(kept_samples),
        )
    if not kept_samples:
        raise AllSamplesDropped(
            f"every {dataset.domain_tag.value} sample was dropped while building {target.value}"
        )
    return DomainDataset(
        samples=kept_samples,
        domain_tag=target,
        element_a=dataset.element_a,
        element_b=dataset.element_b,
        sources=kept_sources,
        slot_map={HYDROGEN: H_BLOCK, dataset.element_a: METAL_A_BLOCK,
                  dataset.element_b: METAL_B_BLOCK},
    )


def build_step2_datasets(
    data_a: DomainDataset,
    data_b: DomainDataset,
    step1_model: GanStepModel,
    threshold: Optional[float] = None,
) -> Tuple[DomainDataset, DomainDataset, TransferLog]:
    """
    Generate with the step-1 model and transfer sample by sample.

    Args:
        data_a: AH domain
        data_b: BH domain
        step1_model: Trained step-1 model
        threshold: Padding threshold for generated rows

    Returns:
        (AHBg dataset, BHAg dataset, transfer log); sample order follows the inputs

    Raises:
        AllSamplesDropped: a target domain would be empty
    """
    if step1_model.step_tag != STEP1:
        raise InvariantViolation("feature transfer needs the step-1 model")
    log = TransferLog(step1_checksum=step1_model.checksum())
    ahbg = _transfer_domain(data_a, step1_model, threshold, log)
    bhag = _transfer_domain(data_b, step1_model, threshold, log)
    logger.info(
        "step2_datasets_built",
        ahbg=len(ahbg),
        bhag=len(bhag),
        dropped=sum(len(v) for v in log.dropped.values()),
        shape=list(np.shape(ahbg.stack())),
    )
    return ahbg, bhag, log
