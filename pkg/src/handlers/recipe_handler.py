import json
from pathlib import Path
from typing import Any, Union

from src.extensions import DATA_DIR
from src.utils.errors import ConfigurationError


class RecipeHandler:
    """Shipped run configurations under src/data/json, addressable by name."""

    @staticmethod
    def load_json(filename: str) -> Union[list[Any], dict[str, Any]]:
        file_path = DATA_DIR / filename
        with open(file_path, "r", encoding="utf-8") as f:
            return json.load(f)

    @staticmethod
    def list_recipes() -> list[str]:
        return sorted(p.stem for p in DATA_DIR.glob("*.json"))

    @staticmethod
    def resolve(config_ref: str) -> dict[str, Any]:
        """Load a config from a path, or from a shipped recipe when no such file exists."""
        path = Path(config_ref)
        if path.is_file():
            try:
                with open(path, "r", encoding="utf-8") as f:
                    data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})")
        else:
            name = path.stem if path.suffix == ".json" else config_ref
            if name not in RecipeHandler.list_recipes():
                raise ConfigurationError(
                    f"Config '{config_ref}' is neither a file nor a shipped recipe ({', '.join(RecipeHandler.list_recipes())})"
                )
            data = RecipeHandler.load_json(f"{name}.json")
        if not isinstance(data, dict):
            raise ConfigurationError(f"Config '{config_ref}' must be a JSON object")
        return data
