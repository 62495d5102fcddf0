import json
import logging
from pathlib import Path

from rich.console import Console

from src.config import Config

BASE_DIR = Path(__file__).resolve().parent


def path_in(*parts):
    return BASE_DIR.joinpath(*parts)


DATA_DIR = path_in("data", "json")

SETTINGS_PATH = BASE_DIR.parent / "settings.json"
with open(SETTINGS_PATH, "r", encoding="utf-8") as f:
    settings = json.load(f)

PIVOT = settings.get("pivot_language", "en")
PAD_ID = int(settings.get("pad_id", 0))
N_RESERVED = int(settings.get("reserved_ids", 9))
PROMPT_TOKEN_IDS = tuple(settings.get("prompt_token_ids", range(1, N_RESERVED)))
DEFAULT_PROMPT = tuple(settings.get("default_prompt", (1, 2, 3)))
CHECKPOINT_FORMAT_VERSION = int(settings.get("checkpoint_format_version", 1))
EVAL_CHUNK_SIZE = int(settings.get("eval_chunk_size", 256))
SHOW_PROGRESS = bool(settings.get("show_progress", True))

console = Console()


def configure_logging(level: str | None = None):
    logging.basicConfig(
        level=(level or Config.LOG_LEVEL),
        format='%(asctime)s [%(levelname)s] %(name)s: %(message)s',
        datefmt='%H:%M:%S'
    )
