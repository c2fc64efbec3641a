import hashlib
import json
from modules.schema import *
from loguru import logger
import yaml
from pydantic import ValidationError
from utils.resource_path import get_resource_path

config_path = get_resource_path("config.yml")

# fields that only steer where and how loudly a run reports
NON_SEMANTIC_FIELDS = {"output_dir", "log_level"}


def load_config(path: str | None = None) -> ApplicationConfig | None:
    """
    Loads the application configuration from a YAML file.
    If the file is not found or parsing fails, returns None.

    :param path: Path to the YAML file; defaults to ``config.yml`` in the project root.
    :type path: str | None
    :return: The validated configuration, or None on failure.
    :rtype: ApplicationConfig | None
    """
    path = path or config_path
    logger.info(f"Loading config from {path}...")
    try:
        with open(path, "r", encoding="utf-8") as f:
            config_data = yaml.safe_load(f) or {}
            return ApplicationConfig(**config_data)
    except FileNotFoundError:
        logger.error(f"Config file not found at {path}!")
        return None
    except yaml.YAMLError as e:
        logger.error(f"Error parsing config file at {path}: {e}")
        return None
    except ValidationError as e:
        logger.error(f"Config file at {path} does not match the schema: {e}")
        return None
    except Exception as e:
        logger.error(f"An unexpected error occurred while loading config: {e}")
        return None


def config_hash(config: ApplicationConfig) -> str:
    """
    Hashes the semantic part of a configuration.

    :param config: The configuration to hash.
    :type config: ApplicationConfig
    :return: Hex SHA-256 digest that changes iff a semantic field changes.
    :rtype: str
    """
    payload = config.model_dump(mode="json", exclude=NON_SEMANTIC_FIELDS)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
