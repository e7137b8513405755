"""Unit tests for neighbor search, pair distributions, constraint losses and validation."""
import itertools

import numpy as np
import pytest

from apps.hydride_gan.services.encoding import (
    H_BLOCK,
    METAL_A_BLOCK,
    METAL_B_BLOCK,
    EncodedSample,
    ternary_labels,
)
from apps.hydride_gan.services.geometry import (
    GeoConfig,
    GeoMode,
    ValidationReport,
    geo_losses,
    first_neighbor_radius,
    image_offsets,
    neighbor_distances,
    pair_distribution,
    species_pair,
    validate_structure,
    validate_structures,
)
from apps.hydride_gan.services.neuralnet import numeric_gradient, relative_error
from apps.hydride_gan.services.poscar_io import AtomSite, CrystalStructure, Lattice
from apps.hydride_gan.utils.error_handler import (
    ConfigError,
    ImageSearchTooLarge,
    NoAtoms,
    SingularLattice,
)

LABELS = ternary_labels("Pd", "Ni")
SKEWED = np.array([[3.1, 0.2, 0.1], [0.3, 3.4, -0.2], [0.1, 0.25, 3.7]])


def _sample(matrix, rows_by_block):
    blocks = np.zeros((4, 18, 3))
    blocks[0, :3] = matrix
    occupancy = [3, 0, 0, 0]
    for block, rows in rows_by_block.items():
        blocks[block, :len(rows)] = rows
        occupancy[block] = len(rows)
    return EncodedSample(blocks, tuple(occupancy), LABELS)


def _brute_force_pairs(s: CrystalStructure, cutoff: float):
    reach = int(np.ceil(cutoff / s.lattice.plane_spacings.min())) + 1
    found = []
    frac = s.frac_coords
    for i, j in itertools.product(range(s.num_sites), repeat=2):
        for image in itertools.product(range(-reach, reach + 1), repeat=3):
            if i == j and image == (0, 0, 0):
                continue
            vector = (frac[j] - frac[i] + np.array(image)) @ s.lattice.matrix
            distance = float(np.linalg.norm(vector))
            if distance <= cutoff:
                found.append((i, j, image, round(distance, 9)))
    return sorted(found)


class TestGeoConfig:
    """Test cases for GeoConfig."""

    def test_defaults(self):
        """Test the configured default thresholds."""
        cfg = GeoConfig()
        assert (cfg.d1, cfg.d2, cfg.cutoff) == (1.8, 3.0, 8.0)

    @pytest.mark.parametrize("d1,d2,cutoff", [(0.0, 3.0, 8.0), (3.0, 1.8, 8.0), (1.8, 9.0, 8.0)])
    def test_invalid_thresholds(self, d1, d2, cutoff):
        """Test 0 < d1 < d2 <= cutoff."""
        with pytest.raises(ConfigError):
            GeoConfig(d1=d1, d2=d2, cutoff=cutoff)

    def test_default_penalized_pairs(self):
        """Test that metal-hydrogen pairs are the only unpenalized class."""
        cfg = GeoConfig()
        assert cfg.is_penalized(("H", "H"))
        assert cfg.is_penalized(("Pd", "Ni"))
        assert cfg.is_penalized(("Pd", "Pd"))
        assert not cfg.is_penalized(("Pd", "H"))
        assert not cfg.is_penalized(("H", "Ni"))

    def test_for_elements_matches_default(self):
        """Test the explicit penalized set."""
        explicit = GeoConfig.for_elements("Pd", "Ni")
        for pair in [("H", "H"), ("Ni", "Pd"), ("Pd", "Pd"), ("Ni", "Ni"), ("H", "Pd")]:
            assert explicit.is_penalized(pair) == GeoConfig().is_penalized(pair)

    def test_dict_round_trip(self):
        """Test serialization."""
        cfg = GeoConfig.for_elements("Mg", "Ti", d1=1.5, d2=3.2, cutoff=7.0)
        assert GeoConfig.from_dict(cfg.to_dict()) == cfg

    def test_mode_names(self):
        """Test the command-line names of the loss modes."""
        assert GeoMode("paper") is GeoMode.LITERAL
        assert [m.value for m in GeoMode] == ["paper", "hinge", "off"]

    def test_species_pair_is_unordered(self):
        """Test canonical pair ordering."""
        assert species_pair("Pd", "H") == species_pair("H", "Pd") == ("H", "Pd")


class TestNeighborDistances:
    """Test cases for the periodic neighbor search."""

    def test_rocksalt_first_neighbors(self, rocksalt):
        """Test the metal-hydrogen shell of rock-salt PdH at a = 4."""
        report = neighbor_distances(rocksalt("Pd", 4.0))
        assert report.first_distance(0, ("Pd", "H")) == pytest.approx(2.0)
        assert report.multiplicity(0, ("Pd", "H")) == 6
        assert report.first_distance(0, ("Pd", "Pd")) == pytest.approx(4.0 / np.sqrt(2.0))
        assert report.multiplicity(0, ("Pd", "Pd")) == 12
        assert min(report.first_distances) == pytest.approx(2.0)

    def test_single_atom_sees_its_images(self):
        """Test that a one-atom cell pairs with its own periodic images."""
        s = CrystalStructure.from_sites(Lattice(np.eye(3) * 2.0), [AtomSite("H", [0, 0, 0])])
        report = neighbor_distances(s, cutoff=2.5)
        assert len(report.pairs) == 6
        assert all(p.i == p.j == 0 for p in report.pairs)
        assert report.first_distance(0, ("H", "H")) == pytest.approx(2.0)

    def test_distance_at_cutoff_is_included(self):
        """Test the closed cutoff boundary."""
        s = CrystalStructure.from_sites(Lattice(np.eye(3) * 2.0), [AtomSite("H", [0, 0, 0])])
        assert len(neighbor_distances(s, cutoff=2.0).pairs) == 6

    def test_pairs_are_sorted(self, rocksalt):
        """Test (i, j, image) ordering."""
        report = neighbor_distances(rocksalt("Ni", 3.7), cutoff=4.0)
        keys = [(p.i, p.j, p.image) for p in report.pairs]
        assert keys == sorted(keys)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, random_structure, seed):
        """Test the search against a wide brute-force image loop."""
        s = random_structure(seed, max_atoms=8)
        cutoff = 4.5
        report = neighbor_distances(s, cutoff=cutoff)
        found = sorted((p.i, p.j, p.image, round(p.distance, 9)) for p in report.pairs)
        assert found == _brute_force_pairs(s, cutoff)

    def test_skewed_cell_needs_more_images(self):
        """Test that strongly sheared cells still find every pair."""
        matrix = np.array([[3.0, 0.0, 0.0], [2.9, 1.0, 0.0], [0.0, 0.0, 3.0]])
        s = CrystalStructure.from_sites(
            Lattice(matrix), [AtomSite("H", [0.1, 0.2, 0.3]), AtomSite("H", [0.6, 0.7, 0.1])]
        )
        found = sorted((p.i, p.j, p.image, round(p.distance, 9))
                       for p in neighbor_distances(s, cutoff=3.5).pairs)
        assert found == _brute_force_pairs(s, 3.5)

    def test_no_atoms(self):
        """Test that an empty structure is rejected."""
        with pytest.raises(NoAtoms):
            neighbor_distances(CrystalStructure(Lattice(np.eye(3)), (), ()))

    def test_image_offsets_bound(self):
        """Test the per-axis image bound floor(cutoff / spacing) + 1."""
        offsets = image_offsets(np.eye(3) * 4.0, 8.0)
        assert offsets.shape == (7 ** 3, 3)
        assert np.abs(offsets).max() == 3

    def test_image_offsets_limit(self):
        """Test the image-count ceiling."""
        with pytest.raises(ImageSearchTooLarge):
            image_offsets(np.eye(3) * 0.5, 8.0, max_images=1000)

    def test_image_offsets_singular(self):
        """Test that a singular lattice is rejected."""
        with pytest.raises(SingularLattice):
            image_offsets(np.zeros((3, 3)), 8.0)


class TestPairDistribution:
    """Test cases for pair_distribution."""

    def test_counts_sum_to_pairs_per_atom(self, rocksalt):
        """Test the histogram normalization."""
        s = rocksalt("Pd", 4.0)
        pdf = pair_distribution(s, bin_width=0.1, cutoff=5.0)
        report = neighbor_distances(s, cutoff=5.0)
        assert pdf.counts.sum() == pytest.approx(len(report.pairs) / s.num_sites)
        assert pdf.counts.shape == (50,)

    def test_first_shell_bin(self, rocksalt):
        """Test that the 2.0 A shell lands in the bin starting at 2.0."""
        pdf = pair_distribution(rocksalt("Pd", 4.0), bin_width=0.1, cutoff=3.0,
                                pair=("H", "Pd"))
        assert pdf.counts[20] == pytest.approx(6.0)
        assert pdf.counts.sum() == pytest.approx(6.0)
        assert pdf.species_pair == ("H", "Pd")

    def test_to_text(self, rocksalt):
        """Test the two-column text format."""
        text = pair_distribution(rocksalt("Pd", 4.0), bin_width=0.5, cutoff=3.0).to_text()
        lines = text.splitlines()
        assert lines[0].startswith("# distance_A count_per_atom")
        assert len(lines) == 7
        assert lines[1].split()[0] == "0.0000"

    def test_invalid_bin_width(self, rocksalt):
        """Test that a non-positive bin width is a config error."""
        with pytest.raises(ConfigError):
            pair_distribution(rocksalt(), bin_width=0.0)


class TestGeoLosses:
    """Test cases for the geometric constraint losses."""

    def test_single_distance_values(self):
        """Test S = {2.0}: lower = (1.8 - 2)^2, upper = -(3 - 2)^2."""
        e = _sample(np.eye(3) * 2.0, {H_BLOCK: [[0.0, 0.0, 0.0]]})
        result = geo_losses(e, GeoConfig(), GeoMode.LITERAL)
        assert result.lower == pytest.approx(0.04)
        assert result.upper == pytest.approx(-1.0)
        assert result.lower_distance == pytest.approx(2.0)
        assert result.first_neighbor_count == 1

    def test_literal_picks_closest_to_thresholds(self):
        """Test that the literal losses use the distances nearest to d1 and d2."""
        e = _sample(np.diag([2.0, 2.0, 2.0]), {
            H_BLOCK: [[0.0, 0.0, 0.0]],
            METAL_A_BLOCK: [[0.5, 0.5, 0.5]],
        })
        cfg = GeoConfig(d1=1.8, d2=3.0, cutoff=4.0)
        result = geo_losses(e, cfg, GeoMode.LITERAL)
        # H-H and Pd-Pd first neighbors are both 2.0; Pd-H is not penalized
        assert result.first_neighbor_count == 2
        assert result.lower == pytest.approx(0.04)
        assert result.upper == pytest.approx(-1.0)

    def test_hinge_is_zero_inside_band(self):
        """Test that distances inside [d1, d2] cost nothing in hinge mode."""
        e = _sample(np.eye(3) * 2.5, {H_BLOCK: [[0.0, 0.0, 0.0]]})
        result = geo_losses(e, GeoConfig(), GeoMode.HINGE)
        assert result.total == 0.0
        assert not result.gradient.any()

    def test_hinge_penalizes_short_and_long(self):
        """Test hinge sums over violating distances."""
        short = geo_losses(_sample(np.eye(3) * 1.5, {H_BLOCK: [[0, 0, 0]]}), GeoConfig(),
                           GeoMode.HINGE)
        assert short.lower == pytest.approx(0.09)
        assert short.upper == 0.0
        long = geo_losses(_sample(np.eye(3) * 3.5, {H_BLOCK: [[0, 0, 0]]}), GeoConfig(),
                          GeoMode.HINGE)
        assert long.lower == 0.0
        assert long.upper == pytest.approx(0.25)

    def test_off_mode(self):
        """Test that mode off returns zeros without searching."""
        e = _sample(np.eye(3) * 2.0, {H_BLOCK: [[0.0, 0.0, 0.0]]})
        result = geo_losses(e, GeoConfig(), GeoMode.OFF)
        assert result.total == 0.0

    def test_no_penalized_pairs(self):
        """Test that a cutoff below every penalized distance leaves S empty."""
        e = _sample(np.eye(3) * 6.0, {H_BLOCK: [[0.0, 0.0, 0.0]], METAL_A_BLOCK: [[0.3, 0, 0]]})
        result = geo_losses(e, GeoConfig(d1=1.0, d2=2.0, cutoff=3.0), GeoMode.LITERAL)
        assert result.no_penalized_pairs
        assert result.total == 0.0

    def test_no_atoms(self):
        """Test that an all-padding generated sample raises NoAtoms."""
        blocks = np.zeros((4, 18, 3))
        blocks[0, :3] = np.eye(3) * 4.0
        e = EncodedSample.from_flat(blocks.reshape(-1), LABELS)
        with pytest.raises(NoAtoms):
            geo_losses(e, GeoConfig())

    @pytest.mark.parametrize("mode", [GeoMode.LITERAL, GeoMode.HINGE])
    def test_gradient_matches_finite_differences(self, mode):
        """Test the analytic gradient against central differences."""
        e = _sample(SKEWED, {
            H_BLOCK: [[0.1, 0.2, 0.3], [0.55, 0.45, 0.6]],
            METAL_A_BLOCK: [[0.3, 0.7, 0.2]],
            METAL_B_BLOCK: [[0.8, 0.15, 0.75]],
        })
        cfg = GeoConfig(d1=2.2, d2=2.6, cutoff=6.0)
        # generated form, so padding rows may be perturbed below the threshold
        generated = EncodedSample.from_flat(e.flatten(), LABELS)
        result = geo_losses(generated, cfg, mode)

        def total(blocks):
            return geo_losses(EncodedSample.from_flat(blocks.reshape(-1), LABELS), cfg, mode).total

        numeric = numeric_gradient(total, e.blocks.copy(), h=1e-6)
        assert result.first_neighbor_count > 0
        assert relative_error(result.gradient, numeric) < 1e-5

    def test_gradient_only_touches_occupied_rows(self):
        """Test that padding rows get no gradient."""
        e = _sample(SKEWED, {H_BLOCK: [[0.1, 0.2, 0.3], [0.55, 0.45, 0.6]]})
        result = geo_losses(e, GeoConfig(d1=2.2, d2=2.6, cutoff=6.0), GeoMode.HINGE)
        assert not result.gradient[H_BLOCK, 2:].any()
        assert not result.gradient[METAL_A_BLOCK].any()
        assert not result.gradient[0, 3:].any()


class TestValidation:
    """Test cases for structure validation."""

    def test_rocksalt_is_good(self, rocksalt):
        """Test that rock-salt PdH at a = 4 passes."""
        verdict = validate_structure(rocksalt("Pd", 4.0), GeoConfig(), "PdH")
        assert verdict.good
        assert not verdict.ternary
        assert verdict.formula == "Pd4H4"

    def test_compressed_cell_fails_below_d1(self, rocksalt):
        """Test that a = 2.4 puts H-H and Pd-Pd below d1."""
        verdict = validate_structure(rocksalt("Pd", 2.4), GeoConfig())
        assert not verdict.good
        assert {v.reason for v in verdict.violations} == {"below_d1"}
        assert {v.species_pair for v in verdict.violations} == {("H", "H"), ("Pd", "Pd")}

    def test_expanded_cell_fails_above_d2(self, rocksalt):
        """Test that a = 4.6 puts the first H-H distance above d2."""
        verdict = validate_structure(rocksalt("Pd", 4.6), GeoConfig())
        assert not verdict.good
        assert {v.reason for v in verdict.violations} == {"above_d2"}

    def test_missing_neighbor_within_cutoff(self):
        """Test that an isolated species pair counts as a violation."""
        s = CrystalStructure.from_sites(Lattice(np.eye(3) * 9.0), [
            AtomSite("Pd", [0, 0, 0]), AtomSite("H", [0.2, 0, 0])
        ])
        verdict = validate_structure(s, GeoConfig())
        assert not verdict.good
        assert {v.reason for v in verdict.violations} == {"no_neighbor_within_cutoff"}

    def test_ternary_detection(self):
        """Test that two metals plus hydrogen is ternary."""
        s = CrystalStructure.from_sites(Lattice(np.eye(3) * 2.5), [
            AtomSite("Pd", [0, 0, 0]), AtomSite("Ni", [0.5, 0.5, 0.5]),
            AtomSite("H", [0.5, 0.0, 0.0]),
        ])
        verdict = validate_structure(s, GeoConfig())
        assert verdict.ternary
        assert verdict.good
        assert verdict.formula == "PdNiH"

    def test_validate_structures_counts_good_ternary(self, rocksalt):
        """Test the report counts and ordering."""
        ternary = CrystalStructure.from_sites(Lattice(np.eye(3) * 2.5), [
            AtomSite("Pd", [0, 0, 0]), AtomSite("Ni", [0.5, 0.5, 0.5]),
            AtomSite("H", [0.5, 0.0, 0.0]),
        ])
        report = validate_structures(
            {"b_binary": rocksalt("Pd", 4.0), "a_ternary": ternary},
            GeoConfig(),
            failures={"c_broken": "NoAtoms: all coordinate blocks are empty"},
            workers=2,
        )
        assert list(report.per_structure) == ["a_ternary", "b_binary", "c_broken"]
        assert report.total == 3
        assert report.good_count == 1
        assert report.per_structure["c_broken"].error.startswith("NoAtoms")
        assert report.to_text().rstrip().endswith("good ternary structures: 1 / 3")

    def test_summary_round_trip(self, rocksalt):
        """Test that a report can be rebuilt from its summary."""
        report = validate_structures(
            {"x": rocksalt("Pd", 2.4), "y": rocksalt("Pd", 4.0)}, GeoConfig()
        )
        rebuilt = ValidationReport.from_summary(report.to_summary())
        assert rebuilt.to_summary() == report.to_summary()
        assert rebuilt.to_text() == report.to_text()


def _random_sample(seed: int):
    rng = np.random.default_rng(seed)
    matrix = np.diag(rng.uniform(3.0, 5.0, size=3)) + rng.uniform(-0.5, 0.5, size=(3, 3))
    return _sample(matrix, {
        H_BLOCK: rng.uniform(0.0, 1.0, size=(int(rng.integers(1, 5)), 3)),
        METAL_A_BLOCK: rng.uniform(0.0, 1.0, size=(int(rng.integers(1, 4)), 3)),
        METAL_B_BLOCK: rng.uniform(0.0, 1.0, size=(int(rng.integers(0, 3)), 3)),
    })


def _scaled(e: EncodedSample, factor: float) -> EncodedSample:
    blocks = e.blocks.copy()
    blocks[0, :3] *= factor
    return EncodedSample(blocks, e.occupancy, e.species_labels)


class TestFirstNeighborRadius:
    """Test cases for the narrowed first-neighbor search."""

    def test_half_body_diagonal(self):
        """Test the radius of a cubic cell where every species has two atoms."""
        radius = first_neighbor_radius(np.eye(3) * 4.0, ["H", "H", "Pd", "Pd"], 8.0)
        assert radius == pytest.approx(2.0 * np.sqrt(3.0))

    def test_lone_atom_reaches_shortest_vector(self):
        """Test that a species with a single atom widens the radius to the shortest lattice vector."""
        matrix = np.diag([4.0, 5.0, 6.0])
        radius = first_neighbor_radius(matrix, ["H", "H", "Pd"], 20.0)
        assert radius == pytest.approx(0.5 * np.sqrt(16.0 + 25.0 + 36.0))
        flat = np.diag([4.0, 4.0, 0.5])
        assert first_neighbor_radius(flat, ["Pd", "H", "H"], 20.0) == pytest.approx(4.0)

    def test_capped_by_cutoff(self):
        """Test that the radius never exceeds the cutoff."""
        assert first_neighbor_radius(np.eye(3) * 10.0, ["H", "Pd"], 5.0) == 5.0

    @pytest.mark.parametrize("seed", range(20))
    def test_validation_matches_full_search(self, random_structure, seed):
        """Test that validation sees the first neighbors a full-cutoff search finds."""
        s = random_structure(seed, max_atoms=6)
        cfg = GeoConfig(d1=1.8, d2=3.0, cutoff=8.0)
        report = neighbor_distances(s, cutoff=cfg.cutoff)
        expected = []
        for atom, symbol in enumerate(s.species):
            for partner in s.elements:
                pair = species_pair(symbol, partner)
                if not cfg.is_penalized(pair):
                    continue
                distance = report.first_distance(atom, pair)
                if distance is None or not cfg.d1 <= distance <= cfg.d2:
                    expected.append((atom, pair, distance))
        verdict = validate_structure(s, cfg)
        found = [(v.atom, v.species_pair, v.distance) for v in verdict.violations]
        assert [key[:2] for key in found] == [key[:2] for key in expected]
        for (_, _, got), (_, _, want) in zip(found, expected):
            if want is None:
                assert got is None
            else:
                assert got == pytest.approx(want, rel=1e-12)

    def test_single_atom_species_keeps_self_images(self):
        """Test a lone hydrogen whose first H-H neighbor is its own image."""
        matrix = np.diag([2.6, 6.0, 6.0])
        s = CrystalStructure.from_sites(Lattice(matrix), [
            AtomSite("Pd", [0.0, 0.0, 0.0]),
            AtomSite("Pd", [0.5, 0.5, 0.5]),
            AtomSite("H", [0.5, 0.0, 0.0]),
        ])
        verdict = validate_structure(s, GeoConfig(d1=1.8, d2=3.0, cutoff=8.0))
        assert not [v for v in verdict.violations if v.species_pair == ("H", "H")]
        full = neighbor_distances(s, cutoff=8.0)
        assert full.first_distance(2, ("H", "H")) == pytest.approx(2.6)

    @pytest.mark.parametrize("seed", range(10))
    def test_geo_losses_use_full_first_neighbors(self, seed):
        """Test that the hinge loss equals the one rebuilt from a full-cutoff search."""
        e = _random_sample(seed)
        cfg = GeoConfig(d1=1.8, d2=3.0, cutoff=8.0)
        result = geo_losses(e, cfg, GeoMode.HINGE)
        species, frac = [], []
        for block in (H_BLOCK, METAL_A_BLOCK, METAL_B_BLOCK):
            for row in range(e.occupancy[block]):
                species.append(LABELS[block])
                frac.append(e.blocks[block, row])
        s = CrystalStructure.from_sites(
            Lattice(e.blocks[0, :3]), [AtomSite(sym, f) for sym, f in zip(species, frac)]
        )
        report = neighbor_distances(s, cutoff=cfg.cutoff)
        values = np.array([
            first.distance for first in report.per_atom_first.values()
            if cfg.is_penalized(first.species_pair)
        ])
        assert result.first_neighbor_count == values.size
        assert result.lower == pytest.approx(np.sum(np.maximum(cfg.d1 - values, 0.0) ** 2))
        assert result.upper == pytest.approx(np.sum(np.maximum(values - cfg.d2, 0.0) ** 2))


class TestGeometryProperties:
    """Invariance and consistency properties over random cells."""

    CFG = GeoConfig(d1=1.8, d2=3.0, cutoff=8.0)

    @pytest.mark.parametrize("mode", [GeoMode.LITERAL, GeoMode.HINGE])
    @pytest.mark.parametrize("seed", range(10))
    def test_losses_ignore_rigid_translation(self, seed, mode):
        """Test that shifting every atom by one fractional vector leaves the losses unchanged."""
        e = _random_sample(seed)
        shift = np.random.default_rng(100 + seed).uniform(0.0, 1.0, size=3)
        blocks = e.blocks.copy()
        for block in (H_BLOCK, METAL_A_BLOCK, METAL_B_BLOCK):
            count = e.occupancy[block]
            blocks[block, :count] = np.mod(blocks[block, :count] + shift, 1.0)
        moved = EncodedSample(blocks, e.occupancy, e.species_labels)
        before = geo_losses(e, self.CFG, mode)
        after = geo_losses(moved, self.CFG, mode)
        assert after.lower == pytest.approx(before.lower, rel=1e-9, abs=1e-12)
        assert after.upper == pytest.approx(before.upper, rel=1e-9, abs=1e-12)
        assert after.first_neighbor_count == before.first_neighbor_count

    @pytest.mark.parametrize("seed", range(10))
    def test_hinge_is_monotone_in_lattice_scale(self, seed):
        """Test that growing the cell never raises the lower term nor lowers the upper term."""
        e = _random_sample(seed)
        results = [geo_losses(_scaled(e, f), self.CFG, GeoMode.HINGE)
                   for f in (0.6, 0.8, 1.0, 1.2, 1.4)]
        lowers = [r.lower for r in results]
        uppers = [r.upper for r in results]
        assert all(b <= a + 1e-12 for a, b in zip(lowers, lowers[1:]))
        assert all(b >= a - 1e-12 for a, b in zip(uppers, uppers[1:]))

    @pytest.mark.parametrize("seed", range(10))
    def test_first_distances_scale_with_lattice(self, seed):
        """Test that uniform scaling multiplies every first-neighbor distance."""
        e = _random_sample(seed)
        base = geo_losses(e, self.CFG, GeoMode.HINGE)
        grown = geo_losses(_scaled(e, 1.3), self.CFG, GeoMode.HINGE)
        assert grown.lower_distance == pytest.approx(1.3 * base.lower_distance)
        assert grown.upper_distance == pytest.approx(1.3 * base.upper_distance)

    @pytest.mark.parametrize("seed", range(20))
    def test_pair_distribution_agrees_with_neighbors(self, random_structure, seed):
        """Test that histogram bins count exactly the listed neighbor distances."""
        s = random_structure(seed, max_atoms=8)
        width, cutoff = 0.25, 5.0
        pdf = pair_distribution(s, bin_width=width, cutoff=cutoff)
        report = neighbor_distances(s, cutoff=cutoff)
        expected = np.zeros_like(pdf.counts)
        for p in report.pairs:
            expected[min(int(np.floor(p.distance / width + 1e-9)), expected.size - 1)] += 1.0
        assert np.allclose(pdf.counts * s.num_sites, expected)
        per_pair = sum(
            pair_distribution(s, bin_width=width, cutoff=cutoff, pair=pair).counts
            for pair in {p.species_pair for p in report.pairs}
        )
        assert np.allclose(per_pair, pdf.counts)
