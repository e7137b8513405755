"""End-to-end integration tests for the pipeline on small synthetic corpora."""
import json
import time

import numpy as np
import pytest

from apps.hydride_gan.main import main
from apps.hydride_gan.services.crossgan import TrainLog
from apps.hydride_gan.services.encoding import METAL_A_BLOCK, METAL_B_BLOCK, load_dataset
from apps.hydride_gan.services.pipeline import (
    ArtifactLayout,
    Method,
    RunConfig,
    project_root,
    report,
    run_pipeline,
)
from apps.hydride_gan.services.poscar_io import read_poscar_file
from apps.hydride_gan.services.synthetic_corpus import make_synthetic_corpus
from apps.hydride_gan.utils.error_handler import ConfigError

TINY_HYPER = {
    "epochs": 2,
    "batch_size": 4,
    "hidden_layers": 1,
    "hidden_units": 16,
    "learning_rate": 0.001,
    "geo": {"d1": 1.8, "d2": 3.0, "cutoff": 5.0},
}

TWO_STEP_STAGES = {"encode", "train_step1", "transfer", "train_step2", "generate", "decode",
                   "validate", "pdf"}


def _loss_rows(path) -> list:
    """CSV rows without the trailing wall-clock field."""
    return [line.rsplit(",", 1)[0] for line in path.read_text(encoding="utf-8").splitlines()]


@pytest.fixture(scope="module")
def corpora(tmp_path_factory):
    """Four PdH and four NiH rock-salt cells."""
    root = tmp_path_factory.mktemp("corpora")
    make_synthetic_corpus("rocksalt", "Pd", (3.9, 4.1), 4, seed=0, out_dir=root / "PdH")
    make_synthetic_corpus("rocksalt", "Ni", (3.6, 3.8), 4, seed=1, out_dir=root / "NiH")
    return root


def _config(corpora, output_dir, **overrides) -> RunConfig:
    data = {
        "domain_a_dir": str(corpora / "PdH"),
        "domain_b_dir": str(corpora / "NiH"),
        "element_a": "Pd",
        "element_b": "Ni",
        "output_dir": str(output_dir),
        "hyper": dict(TINY_HYPER),
    }
    data.update(overrides)
    return RunConfig.from_dict(data)


@pytest.mark.integration
def test_crystalgan_run_writes_every_artifact(corpora, tmp_path):
    """Test the full two-step method: stages, datasets, models and candidates."""
    (run_dir,) = run_pipeline(_config(corpora, tmp_path))
    layout = ArtifactLayout(run_dir)
    assert run_dir == tmp_path / "crystalgan" / "seed_0"

    manifest = json.loads(layout.manifest.read_text())
    assert set(manifest["stages"]) == TWO_STEP_STAGES
    assert all(entry["status"] == "completed" for entry in manifest["stages"].values())
    assert {"dataset_AH", "dataset_BH", "step1_model", "step2_model"} <= set(manifest["checksums"])

    for name in ("AH.npz", "BH.npz", "AH.json", "BH.json", "normalizer.json"):
        assert (layout.datasets / name).exists()
    for name in ("AHBg.npz", "BHAg.npz", "manifest.json"):
        assert (layout.transfer / name).exists()
    transfer_manifest = json.loads((layout.transfer / "manifest.json").read_text())
    assert transfer_manifest["step1_checksum"] == manifest["checksums"]["step1_model"]

    log = TrainLog.from_csv(layout.step2 / "train_log.csv")
    assert [r["epoch"] for r in log.records] == [1, 2]

    summary = json.loads((layout.validation / "summary.json").read_text())
    assert summary["total"] == len(summary["per_structure"])
    assert 0 < summary["total"] <= 8
    assert summary["good_count"] == manifest["good_count"]
    assert (layout.validation / "report.txt").read_text().startswith("Structure validation report")
    for path in layout.generated.glob("*.vasp"):
        read_poscar_file(path)


@pytest.mark.integration
def test_same_seed_same_outputs(corpora, tmp_path):
    """Test that equal seeds write identical candidates and training logs."""
    first, = run_pipeline(_config(corpora, tmp_path / "a"))
    second, = run_pipeline(_config(corpora, tmp_path / "b"))
    for relative in ("step1/train_log.csv", "step2/train_log.csv"):
        assert _loss_rows(first / relative) == _loss_rows(second / relative)
    summary = "validation/summary.json"
    assert (first / summary).read_bytes() == (second / summary).read_bytes()
    names = sorted(p.name for p in (first / "generated").glob("*.vasp"))
    assert names == sorted(p.name for p in (second / "generated").glob("*.vasp"))
    for name in names:
        assert (first / "generated" / name).read_bytes() == (second / "generated" / name).read_bytes()


@pytest.mark.integration
def test_different_seeds_use_disjoint_directories(corpora, tmp_path):
    """Test that seeds run sequentially into their own directories."""
    dirs = run_pipeline(_config(corpora, tmp_path, seeds=[0, 1]))
    assert [d.name for d in dirs] == ["seed_0", "seed_1"]
    logs = [(d / "step1" / "train_log.csv").read_bytes() for d in dirs]
    assert logs[0] != logs[1]


@pytest.mark.integration
@pytest.mark.parametrize("method", [m.value for m in Method])
def test_every_method_produces_a_summary(corpora, tmp_path, method):
    """Test that all four methods end in a validation summary."""
    (run_dir,) = run_pipeline(_config(corpora, tmp_path, method=method))
    summary = json.loads((run_dir / "validation" / "summary.json").read_text())
    assert summary["total"] >= 1
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["method"] == method
    if method in ("classic_gan", "discogan"):
        assert manifest["stages"]["baseline"]["status"] == "completed"
        assert not (run_dir / "step2" / "model.npz").exists()


@pytest.mark.integration
def test_unconstrained_run_records_zero_geometry(corpora, tmp_path):
    """Test that the unconstrained variant never evaluates geometry terms."""
    (run_dir,) = run_pipeline(_config(corpora, tmp_path, method="crystalgan_noconstraints"))
    log = TrainLog.from_csv(run_dir / "step2" / "train_log.csv")
    assert all(r["geo_lower"] == 0.0 and r["geo_upper"] == 0.0 for r in log.records)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["hyper"]["geo_lower_weight"] == 0.0


@pytest.mark.integration
def test_invalid_paths_fail_before_writing(corpora, tmp_path):
    """Test that a missing domain directory is a config error and nothing is written."""
    cfg = _config(corpora, tmp_path / "out", domain_b_dir=str(tmp_path / "missing"))
    with pytest.raises(ConfigError):
        run_pipeline(cfg)
    assert not (tmp_path / "out").exists()


@pytest.mark.integration
def test_cli_run_and_report(corpora, tmp_path, capsys):
    """Test run and report through the command line."""
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps(_config(corpora, tmp_path / "out").to_dict()))
    assert main(["run", "--config", str(config_path), "--seed", "3"]) == 0
    run_dir = tmp_path / "out" / "crystalgan" / "seed_3"
    assert capsys.readouterr().out.strip() == str(run_dir)

    assert main(["report", str(run_dir), "--out", str(tmp_path / "table.json")]) == 0
    table = capsys.readouterr().out.splitlines()
    assert table[1].split()[:4] == ["Pd-Ni-H", "0", "0", "0"]
    summary = json.loads((tmp_path / "table.json").read_text())
    assert summary["systems"]["Pd-Ni-H"]["crystalgan"]["seeds"] == [3]


@pytest.mark.integration
def test_stage_commands_match_full_run(corpora, tmp_path):
    """Test that running the stages one by one gives the full run's candidates."""
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps(_config(corpora, tmp_path / "staged").to_dict()))
    for command in ("encode", "train-step1", "transfer", "train-step2", "generate", "validate"):
        assert main([command, "--config", str(config_path)]) == 0
    staged = tmp_path / "staged" / "crystalgan" / "seed_0"
    (full,) = run_pipeline(_config(corpora, tmp_path / "full"))
    names = sorted(p.name for p in (full / "generated").glob("*.vasp"))
    assert names == sorted(p.name for p in (staged / "generated").glob("*.vasp"))
    for name in names:
        assert (full / "generated" / name).read_bytes() == (staged / "generated" / name).read_bytes()


@pytest.mark.integration
def test_transfer_keeps_original_blocks(corpora, tmp_path):
    """Test that every transferred sample differs from its source only in the filled block."""
    (run_dir,) = run_pipeline(_config(corpora, tmp_path))
    checked = 0
    for source_name, target_name, filled in (("AH", "AHBg", METAL_B_BLOCK),
                                             ("BH", "BHAg", METAL_A_BLOCK)):
        source = load_dataset(run_dir / "datasets" / f"{source_name}.npz")
        target = load_dataset(run_dir / "transfer" / f"{target_name}.npz")
        originals = dict(zip(source.sources, source.samples))
        kept = [block for block in range(4) if block != filled]
        for name, sample in zip(target.sources, target.samples):
            original = originals[name]
            assert np.array_equal(sample.blocks[kept], original.blocks[kept])
            assert sample.occupancy[filled] >= 1
            assert not original.blocks[filled].any()
            assert not sample.blocks[filled, sample.occupancy[filled]:].any()
            checked += 1
    assert checked >= 2


@pytest.fixture(scope="module")
def desk_corpora(tmp_path_factory):
    """Thirty-five PdH and thirty-five NiH rock-salt cells."""
    root = tmp_path_factory.mktemp("desk")
    make_synthetic_corpus("rocksalt", "Pd", (3.9, 4.1), 35, seed=0, out_dir=root / "PdH")
    make_synthetic_corpus("rocksalt", "Ni", (3.6, 3.8), 35, seed=1, out_dir=root / "NiH")
    return root


def _desk_hyper() -> dict:
    rules = json.loads((project_root / "rules" / "desk_scale.json").read_text(encoding="utf-8"))
    return rules["hyper"]


def _median_drop(log: TrainLog) -> bool:
    """Median generator loss of the last tenth of epochs below that of the first tenth."""
    losses = log.column("gen_total")
    tenth = max(len(losses) // 10, 1)
    return float(np.median(losses[-tenth:])) < float(np.median(losses[:tenth]))


@pytest.mark.integration
@pytest.mark.slow
def test_desk_scale_seed_runtime(desk_corpora, tmp_path):
    """Test one constrained seed at desk scale with the reference network size."""
    cfg = _config(desk_corpora, tmp_path, hyper={"epochs": 200, "batch_size": 35})
    assert (cfg.hyper.hidden_layers, cfg.hyper.hidden_units) == (5, 100)
    started = time.perf_counter()
    (run_dir,) = run_pipeline(cfg)
    elapsed = time.perf_counter() - started
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert all(entry["status"] == "completed" for entry in manifest["stages"].values())
    assert elapsed < 600.0
    log = TrainLog.from_csv(run_dir / "step2" / "train_log.csv")
    assert log.seed == 0
    assert log.wall_clock_seconds < elapsed


@pytest.mark.integration
@pytest.mark.slow
def test_desk_scale_method_comparison(desk_corpora, tmp_path):
    """Test the five-seed desk-scale comparison of all four methods."""
    seeds = [0, 1, 2, 3, 4]
    dirs = {}
    for method in Method:
        dirs[method] = run_pipeline(_config(desk_corpora, tmp_path, method=method.value,
                                            seeds=seeds, hyper=_desk_hyper()))
        for run_dir in dirs[method]:
            assert (run_dir / "validation" / "summary.json").exists()

    summary = report([d for runs in dirs.values() for d in runs]).to_summary()
    cells = summary["systems"]["Pd-Ni-H"]
    assert set(cells) == {m.value for m in Method}
    good = {m: [cells[m.value]["per_seed"][str(seed)] for seed in seeds] for m in Method}

    constrained = [TrainLog.from_csv(d / "step2" / "train_log.csv")
                   for d in dirs[Method.TWO_STEP]]
    assert sum(_median_drop(log) for log in constrained) >= 4
    assert sum(
        c >= u for c, u in zip(good[Method.TWO_STEP], good[Method.TWO_STEP_UNCONSTRAINED])
    ) >= 3
    assert sum(g <= c for g, c in zip(good[Method.CLASSIC_GAN], good[Method.TWO_STEP])) >= 4
