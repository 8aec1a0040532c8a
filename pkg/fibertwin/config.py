"""Application configuration module."""

import os

from dotenv import load_dotenv

from fibertwin import __version__

load_dotenv()


class Config:
    """Application configuration class."""

    # Output configuration (the only environment override)
    OUTPUT_DIR: str = os.getenv("FIBERTWIN_OUTPUT_DIR", "out")

    # Logging configuration
    LOG_LEVEL: str = "INFO"

    # Reproducibility
    DEFAULT_SEED: int = 20250101
    DEFAULT_THREADS: int = 1
    TOOL_VERSION: str = __version__

    @classmethod
    def validate(cls) -> None:
        """Validate configuration values."""
        invalid_fields = []
        if not cls.OUTPUT_DIR or not cls.OUTPUT_DIR.strip():
            invalid_fields.append("OUTPUT_DIR")
        if cls.DEFAULT_THREADS < 1:
            invalid_fields.append("DEFAULT_THREADS")

        if invalid_fields:
            raise ValueError(f"Invalid configuration values: {', '.join(invalid_fields)}")


# Create global config instance
config = Config()
