import logging
import pathlib
import sys

import yaml
from dynaconf import Dynaconf

from biasfilter.errors import ConfigError

CONFIG_PATH = pathlib.Path(__file__).parent
ROOT_DIR = CONFIG_PATH.parent.parent

# Settings come from the yaml files only, environment variables are never read.
settings = Dynaconf(
    settings_files=[CONFIG_PATH / "settings.yaml", CONFIG_PATH / ".secrets.yaml"],
    loaders=False,
)


DEBUG = settings.general.get("debug", False)
LOGGING_LEVEL = logging.DEBUG if DEBUG else settings.general.get("logging_level", "INFO")

package_logger = logging.getLogger("biasfilter")
package_logger.setLevel(LOGGING_LEVEL)

stream_formatter = logging.Formatter("%(levelname)s - %(message)s")
stream_handler = logging.StreamHandler()
stream_handler.setFormatter(stream_formatter)
package_logger.addHandler(stream_handler)

FILE_FORMATTER = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

DEFAULT_LOGFILE = "snake.log"


def get_logger(name):
    """Returns the logger of a biasfilter component, e.g. 'fusion' -> 'biasfilter.fusion'."""
    return logging.getLogger(f"biasfilter.{name}")


def add_file_logger(logfile, name=None):
    r"""
    Adds logging to file.

    Parameters
    ----------
    logfile : str or pathlib.Path
        Path of the logfile. Records are appended.
    name : str
        Component to log to the file. If None, all biasfilter records go to the file.

    Returns
    -------
    logger : logging.Logger
    """
    logger = get_logger(name) if name else package_logger
    handler = logging.FileHandler(logfile)
    handler.setFormatter(FILE_FORMATTER)
    logger.addHandler(handler)
    return logger


def add_snake_logger(rulename):
    """
    Adds logging to file for a pipeline script.

    The logfile is the first script argument ending with ".log", DEFAULT_LOGFILE otherwise.
    Records of the biasfilter package are written to the same file.
    """
    logfile = next((item for item in sys.argv if item.endswith(".log")), DEFAULT_LOGFILE)
    add_file_logger(logfile)
    logger = logging.getLogger(rulename)
    handler = logging.FileHandler(logfile)
    handler.setFormatter(FILE_FORMATTER)
    logger.addHandler(handler)
    logger.setLevel(LOGGING_LEVEL)
    return logger


def load_yaml(file_path):
    with open(file_path, "r") as yaml_file:
        yaml_data = yaml.load(yaml_file, Loader=yaml.FullLoader)

    return yaml_data


def get_section(name):
    r"""
    Returns the defaults of a settings section as plain dict.

    Parameters
    ----------
    name : str
        Section in settings.yaml, e.g. 'train'

    Returns
    -------
    dict
    """
    section = settings.get(name)
    if section is None:
        raise ConfigError(f"There is no settings section '{name}'.")
    return {key.lower(): value for key, value in section.to_dict().items()}


def _coerce(key, value, default):
    if default is None or isinstance(value, type(default)) and not isinstance(value, str):
        return value
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("true", "yes", "1"):
            return True
        if text in ("false", "no", "0"):
            return False
        raise ConfigError(f"Cannot interpret '{value}' as boolean for key '{key}'.")
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                items = [item.strip() for item in value.strip("[]").split(",") if item.strip()]
            else:
                items = list(value)
            item_type = type(default[0]) if default else str
            return [item_type(item) for item in items]
    except ValueError:
        raise ConfigError(f"Cannot interpret '{value}' for key '{key}'.")
    return str(value)


def read_flat_config(path):
    r"""
    Reads a flat config file with one `key = value` pair per line.

    Blank lines and lines starting with '#' are ignored. Trailing comments are not supported.

    Parameters
    ----------
    path : str or pathlib.Path

    Returns
    -------
    dict
    """
    path = pathlib.Path(path)
    if path.suffix in (".yml", ".yaml"):
        data = load_yaml(path) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"Config file '{path}' does not contain a mapping.")
        return {str(key).lower(): value for key, value in data.items()}

    values = {}
    with open(path, "r", encoding="utf-8") as config_file:
        for number, line in enumerate(config_file, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{number}: expected 'key = value', got '{line}'.")
            key, value = line.split("=", 1)
            values[key.strip().lower()] = value.strip()
    return values


class RunConfig(dict):
    r"""
    Settings of one subcommand run.

    Starts from the subcommand's section in settings.yaml, is updated by a flat config file and
    finally by command line overrides. Keys unknown to the section are rejected.
    """

    def __init__(self, subcommand, values):
        super().__init__(values)
        self.subcommand = subcommand

    def __getattr__(self, key):
        try:
            return self[key]
        except KeyError:
            raise AttributeError(key)

    @classmethod
    def load(cls, subcommand, path=None, overrides=None):
        r"""
        Parameters
        ----------
        subcommand : str
            Name of the settings section
        path : str or None
            Flat `key = value` config file
        overrides : dict or None
            Values from the command line. None values are ignored.

        Returns
        -------
        RunConfig
        """
        defaults = get_section(subcommand)
        values = dict(defaults)

        updates = []
        if path is not None:
            updates.append(read_flat_config(path))
        if overrides:
            updates.append({k: v for k, v in overrides.items() if v is not None})

        for update in updates:
            unknown = sorted(set(update).difference(defaults))
            if unknown:
                raise ConfigError(
                    f"Unknown keys for '{subcommand}': {unknown}. Known keys: {sorted(defaults)}"
                )
            for key, value in update.items():
                values[key] = _coerce(key, value, defaults[key])

        return cls(subcommand, values)
