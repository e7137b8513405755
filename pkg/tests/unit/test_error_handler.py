"""Unit tests for error classification and exit codes."""
import pytest

from apps.hydride_gan.utils.error_handler import (
    AllSamplesDropped,
    ConfigError,
    CountMismatch,
    DatasetFileError,
    EmptyDirectory,
    ErrorHandler,
    HydrideGanError,
    MissingReport,
    NoPenalizedPairs,
    NonFiniteLoss,
    SingularLattice,
    StageFailure,
    StaleCache,
    TooManyAtoms,
)


class TestClassify:
    """Test cases for ErrorHandler.classify."""

    @pytest.mark.parametrize("error,expected", [
        (ConfigError("bad"), "config"),
        (CountMismatch("3 != 4"), "input_data"),
        (EmptyDirectory("empty"), "input_data"),
        (DatasetFileError("PdH.vasp", CountMismatch("3 != 4")), "input_data"),
        (SingularLattice("flat"), "structure"),
        (TooManyAtoms("19 atoms"), "structure"),
        (NoPenalizedPairs("none"), "geometry"),
        (NonFiniteLoss(3, 1, {"gen_total": float("nan")}), "divergence"),
        (StaleCache("stale"), "training"),
        (AllSamplesDropped("all"), "transfer"),
        (MissingReport("missing"), "report"),
        (FileNotFoundError("x"), "filesystem"),
        (RuntimeError("boom"), "unknown"),
    ])
    def test_classify(self, error, expected):
        """Test error type strings."""
        assert ErrorHandler.classify(error) == expected

    def test_stage_failure_uses_cause(self):
        """Test that a stage failure is classified by its cause."""
        failure = StageFailure("transfer", AllSamplesDropped("all AH samples dropped"))
        assert ErrorHandler.classify(failure) == "transfer"
        assert "stage 'transfer' failed" in str(failure)


class TestExitCodes:
    """Test cases for ErrorHandler.exit_code_for."""

    def test_success(self):
        """Test exit code 0."""
        assert ErrorHandler.exit_code_for(None) == 0

    def test_config_error(self):
        """Test exit code 1."""
        assert ErrorHandler.exit_code_for(ConfigError("bad path")) == 1

    @pytest.mark.parametrize("error", [
        StageFailure("encode", EmptyDirectory("empty")),
        MissingReport("missing"),
        HydrideGanError("other"),
    ])
    def test_stage_errors(self, error):
        """Test exit code 2."""
        assert ErrorHandler.exit_code_for(error) == 2


class TestDescribe:
    """Test cases for ErrorHandler.describe."""

    def test_plain_error(self):
        """Test the message of a plain error."""
        assert ErrorHandler.describe(ConfigError("seeds empty")) == "[config] seeds empty"

    def test_stage_failure(self):
        """Test that stage failures name the stage."""
        message = ErrorHandler.describe(StageFailure("encode", EmptyDirectory("no files")))
        assert message == "[input_data] stage 'encode': no files"

    def test_divergence_hint(self):
        """Test the hint for diverged training."""
        cause = NonFiniteLoss(5, 0, {"disc_total": float("inf")})
        message = ErrorHandler.describe(StageFailure("train_step1", cause))
        assert message.startswith("[divergence] stage 'train_step1': non-finite loss at epoch 5")
        assert message.endswith("(try a lower learning rate or fewer hidden layers)")

    def test_dataset_file_error_keeps_filename(self):
        """Test that the failing file name is part of the message."""
        error = DatasetFileError("NiH_003.vasp", CountMismatch("expected 8 rows"))
        assert error.filename == "NiH_003.vasp"
        assert ErrorHandler.describe(error) == (
            "[input_data] NiH_003.vasp: CountMismatch: expected 8 rows"
        )
