import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

from stereosparse.core.errors import StereoSparseError

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = "config.resolved.json"

class ParsingError(StereoSparseError):
    """Raised when a run configuration cannot be parsed."""
    pass

def normalize_key(key: str) -> str:
    """Map a flag name ('--n-train', 'n-train') to its config key ('n_train')."""
    return key.lstrip("-").replace("-", "_").lower()

def parse_config_string(text: str, allowed: Optional[Iterable[str]] = None) -> Dict[str, Any]:
    """Parse a flat JSON config object, rejecting keys outside `allowed`."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        logger.error(f"Failed to parse configuration: {e}")
        raise ParsingError(f"Failed to parse configuration: {e}")
    if not isinstance(data, dict):
        raise ParsingError("Configuration must be a JSON object")
    values = {normalize_key(k): v for k, v in data.items()}
    if allowed is not None:
        unknown = sorted(set(values) - set(allowed))
        if unknown:
            raise ParsingError(f"Unknown configuration keys: {', '.join(unknown)}")
    return values

def parse_config_file(path: Union[str, Path], allowed: Optional[Iterable[str]] = None) -> Dict[str, Any]:
    """Read and parse a JSON config file."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParsingError(f"Cannot read configuration {path}: {e}")
    return parse_config_string(text, allowed)

def resolve_config(defaults: Mapping[str, Any],
                   file_values: Mapping[str, Any],
                   flag_values: Mapping[str, Any]) -> Dict[str, Any]:
    """Merge defaults < config file < explicit command-line flags."""
    resolved = dict(defaults)
    resolved.update(file_values)
    resolved.update(flag_values)
    return resolved

def write_resolved_config(resolved: Mapping[str, Any], out_dir: Union[str, Path]) -> Path:
    """Echo the resolved configuration into the output directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RESOLVED_CONFIG_NAME
    path.write_text(json.dumps(dict(resolved), sort_keys=True, indent=2) + "\n")
    logger.debug(f"Wrote resolved configuration to {path}")
    return path
