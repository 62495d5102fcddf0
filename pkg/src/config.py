import os

from dotenv import load_dotenv

from src.utils.errors import ConfigurationError

load_dotenv()


class Config:
    LOG_LEVEL = os.getenv("XLIGN_LOG_LEVEL", "INFO").upper()
    OUTPUT_DIR = os.getenv("XLIGN_OUTPUT_DIR", "runs")
    SEED_ENV = "XLIGN_SEED"
    JOBS_ENV = "XLIGN_JOBS"

    @classmethod
    def seed_override(cls) -> int | None:
        raw = os.getenv(cls.SEED_ENV)
        if raw is None or raw.strip() == "":
            return None
        try:
            seed = int(raw)
        except ValueError:
            raise ConfigurationError(f"{cls.SEED_ENV} must be an unsigned integer, got {raw!r}")
        if seed < 0:
            raise ConfigurationError(f"{cls.SEED_ENV} must be an unsigned integer, got {raw!r}")
        return seed

    @classmethod
    def jobs(cls) -> int:
        raw = os.getenv(cls.JOBS_ENV)
        if raw is None or raw.strip() == "":
            return 1
        try:
            jobs = int(raw)
        except ValueError:
            raise ConfigurationError(f"{cls.JOBS_ENV} must be a positive integer, got {raw!r}")
        if jobs < 1:
            raise ConfigurationError(f"{cls.JOBS_ENV} must be a positive integer, got {raw!r}")
        return jobs


def resolve_seed(file_seed: int, flag_seed: int | None = None) -> int:
    if flag_seed is not None:
        return flag_seed
    env_seed = Config.seed_override()
    if env_seed is not None:
        return env_seed
    return file_seed
