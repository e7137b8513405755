"""Configuration module for the hydride GAN pipeline."""
import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
env_path = Path(__file__).parent.parent.parent / ".env"
load_dotenv(env_path)


class Config:
    """Application configuration."""

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FORMAT: str = os.getenv("LOG_FORMAT", "json")
    LOG_EVERY: int = int(os.getenv("LOG_EVERY", "50"))

    # Artifacts
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "artifacts")

    # Training defaults
    DEFAULT_EPOCHS: int = int(os.getenv("DEFAULT_EPOCHS", "1000"))
    DEFAULT_BATCH_SIZE: int = int(os.getenv("DEFAULT_BATCH_SIZE", "35"))
    DEFAULT_LEARNING_RATE: float = float(os.getenv("DEFAULT_LEARNING_RATE", "0.0001"))
    DEFAULT_BETA1: float = float(os.getenv("DEFAULT_BETA1", "0.5"))
    HIDDEN_LAYERS: int = int(os.getenv("HIDDEN_LAYERS", "5"))
    HIDDEN_UNITS: int = int(os.getenv("HIDDEN_UNITS", "100"))

    # Geometry (Angstrom)
    DEFAULT_D1: float = float(os.getenv("DEFAULT_D1", "1.8"))
    DEFAULT_D2: float = float(os.getenv("DEFAULT_D2", "3.0"))
    DEFAULT_CUTOFF: float = float(os.getenv("DEFAULT_CUTOFF", "8.0"))

    # Encoding
    DECODE_THRESHOLD: float = float(os.getenv("DECODE_THRESHOLD", "0.05"))


config = Config()


def validate_config():
    """Validate configured defaults."""
    if not 0 < config.DEFAULT_D1 < config.DEFAULT_D2 <= config.DEFAULT_CUTOFF:
        raise ValueError(
            "Geometry defaults must satisfy 0 < DEFAULT_D1 < DEFAULT_D2 <= DEFAULT_CUTOFF."
        )
    if config.DEFAULT_EPOCHS < 1 or config.DEFAULT_BATCH_SIZE < 1:
        raise ValueError("DEFAULT_EPOCHS and DEFAULT_BATCH_SIZE must be >= 1.")
    if config.LOG_FORMAT not in ("json", "console"):
        raise ValueError("LOG_FORMAT must be 'json' or 'console'.")
