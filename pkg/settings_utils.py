import json
import os
import logging
from dotenv import load_dotenv

# Configure logging
logger = logging.getLogger(__name__)

SETTINGS_FILE = "claw_settings.json"
ENV_PREFIX = "CLAW_"

DEFAULTS = {
    "output_dir": "runs",
    "profiles_dir": "profiles",
    "scenarios_dir": "scenarios",
    "log_level": "INFO",
    "dx": 0.002,
    "fv_dx": 0.004,
    "tol_blowup": 1e10,
    "terminal_tol": 1e-6,
}

# --- Coercion ---

def _coerce(key: str, raw):
    """Casts a raw value to the type of its default; returns None when it does not parse."""
    default = DEFAULTS[key]
    try:
        if isinstance(default, float):
            value = float(raw)
            return value if value > 0 else None
        return str(raw)
    except (TypeError, ValueError):
        return None

# --- Core Logic ---

def load_settings(path: str = SETTINGS_FILE, use_env: bool = True):
    """
    Loads settings.
    1. Starts from DEFAULTS.
    2. Applies the JSON file on disk, if any.
    3. Applies .env and CLAW_* environment variables (environment wins).

    Returns:
        dict: every key of DEFAULTS plus "sources", mapping each key to
        "default", "file" or "env".
    """
    settings = dict(DEFAULTS)
    sources = {k: "default" for k in DEFAULTS}

    if os.path.exists(path):
        try:
            with open(path, "r") as f:
                disk_data = json.load(f)
            if not isinstance(disk_data, dict):
                raise ValueError("settings file must hold a JSON object")
            for key, raw in disk_data.items():
                if key not in DEFAULTS:
                    logger.warning(f"Ignoring unknown setting '{key}' in {path}")
                    continue
                value = _coerce(key, raw)
                if value is None:
                    logger.warning(f"Ignoring invalid value for '{key}' in {path}: {raw!r}")
                    continue
                settings[key] = value
                sources[key] = "file"
        except Exception as e:
            logger.warning(f"Error loading settings: {e}")

    if use_env:
        load_dotenv(override=False)
        for key in DEFAULTS:
            raw = os.getenv(ENV_PREFIX + key.upper())
            if raw is None or raw == "":
                continue
            value = _coerce(key, raw)
            if value is None:
                logger.warning(f"Ignoring invalid {ENV_PREFIX}{key.upper()}={raw!r}")
                continue
            settings[key] = value
            sources[key] = "env"

    settings["sources"] = sources
    return settings

def save_settings(settings: dict, path: str = SETTINGS_FILE) -> bool:
    """Writes file-level settings atomically; values that came from the environment are not persisted."""
    sources = settings.get("sources", {})
    to_save = {}
    for key in DEFAULTS:
        if key not in settings or sources.get(key) == "env":
            continue
        value = _coerce(key, settings[key])
        if value is not None:
            to_save[key] = value
    tmp = path + ".tmp"
    try:
        with open(tmp, "w") as f:
            json.dump(to_save, f, indent=4)
        os.replace(tmp, path)
        return True
    except Exception as e:
        logger.warning(f"Error saving settings: {e}")
        return False

def configure_logging(settings: dict):
    """Root handler for the entry points; library modules only create loggers."""
    level = getattr(logging, str(settings.get("log_level", "INFO")).upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
