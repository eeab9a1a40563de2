"""
CSV tables and JSON summaries written by the command-line runs.

Both writers are deterministic: the same inputs give byte-identical files.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Mapping, Sequence, Union

import numpy as np
import pandas as pd

from . import __version__

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def plain(value: Any) -> Any:
    """
    JSON-ready copy of a value: numpy scalars and arrays become Python values,
    non-finite floats become None.
    """
    if isinstance(value, Mapping):
        return {str(key): plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [plain(item) for item in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_table(path: Union[str, Path], columns: Mapping[str, Sequence]) -> Path:
    """
    Write equally long columns as CSV, in the given column order.

    Args:
        path (str or Path): Target file; parent directories are created
        columns (mapping): Column name to values

    Returns:
        Path: The written file

    Raises:
        ValueError: If the columns differ in length
    """
    lengths = {name: len(values) for name, values in columns.items()}
    if len(set(lengths.values())) > 1:
        raise ValueError(f"columns differ in length: {lengths}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({name: list(values) for name, values in columns.items()})
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"wrote {len(frame)} rows to {path}")
    return path


def write_summary(path: Union[str, Path], payload: Mapping[str, Any],
                  config: Mapping[str, Any]) -> Path:
    """
    Write a JSON summary embedding the effective config and the package version.

    Args:
        path (str or Path): Target file; parent directories are created
        payload (mapping): Study results
        config (mapping): Effective configuration

    Returns:
        Path: The written file
    """
    document: Dict[str, Any] = dict(plain(payload))
    document["config"] = plain(config)
    document["version"] = __version__
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, sort_keys=True, indent=2, allow_nan=False) + "\n",
                    encoding="utf-8")
    logger.info(f"wrote summary to {path}")
    return path


def read_table(path: Union[str, Path]) -> pd.DataFrame:
    """Read a table written by :func:`write_table`."""
    return pd.read_csv(path)
