"""
Report and Data File Utility

This module provides functions for reading and writing the files the command
line tools exchange: JSON reports (checked against the report schema shipped in
schemas/), and CSV tables of marginals, 1D fields, box fields, couplings and
potentials.

Readers log the problem and return None instead of raising, so callers can map
a missing or malformed file to a clean exit code.
"""

import os
import json
import logging
import math

import numpy as np
import pandas as pd

from src.mmot1d import DiscreteMarginal
from src.pde import FieldBundle
from src.rearrange import BoxField

DEFAULT_SCHEMA_FILE = os.path.join("schemas", "report.schema.json")
FLOAT_FORMAT = "%.17g"
JSON_TYPES = {
    "object": dict,
    "array": list,
    "string": str,
    "boolean": bool,
    "null": type(None),
}


def get_project_root():
    """Directory that holds src/ and schemas/."""
    return os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def get_output_path(output_dir, name):
    """Path of a named output file, creating the directory if needed."""
    os.makedirs(output_dir, exist_ok=True)
    return os.path.join(output_dir, name)


def load_json(path):
    """Load a JSON document, or None when it cannot be read."""
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except FileNotFoundError:
        logging.error(f"File not found: {path}")
    except PermissionError:
        logging.error(f"Permission denied to read file: {path}")
    except (json.JSONDecodeError, IOError) as e:
        logging.error(f"Error loading JSON from {path}: {e}")
    return None


def save_json(data, path):
    """Write data as indented JSON; returns False on failure."""
    try:
        with open(path, 'w') as f:
            json.dump(to_jsonable(data), f, indent=2)
        return True
    except (IOError, TypeError, ValueError) as e:
        logging.error(f"Error saving JSON to {path}: {e}")
        return False


def to_jsonable(value):
    """Convert numpy scalars and arrays to JSON types; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _matches(value, type_names):
    if isinstance(type_names, str):
        type_names = [type_names]
    for name in type_names:
        if name == "integer":
            if isinstance(value, int) and not isinstance(value, bool):
                return True
        elif name == "number":
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                return True
        elif isinstance(value, JSON_TYPES[name]):
            return True
    return False


def load_schema(schema_file=None):
    """Load the report schema (defaults to the one shipped with the project)."""
    path = schema_file or os.path.join(get_project_root(), DEFAULT_SCHEMA_FILE)
    return load_json(path)


def validate_report(report, schema=None):
    """
    Check a report against the required keys and top-level property types of
    the schema.

    Args:
        report : report dict
        schema : schema dict; the shipped schema when None

    Returns:
        List of problems, empty when the report is valid
    """
    schema = schema if schema is not None else load_schema()
    if schema is None:
        return ["report schema could not be loaded"]
    if not isinstance(report, dict):
        return ["report must be a JSON object"]
    problems = [f"missing key '{key}'" for key in schema.get("required", []) if key not in report]
    for key, rule in schema.get("properties", {}).items():
        if key in report and "type" in rule and not _matches(report[key], rule["type"]):
            problems.append(f"key '{key}' should be of type {rule['type']}")
    return problems


def save_report(report, output_dir, name="report.json"):
    """
    Validate and write a report.

    Returns:
        Path of the written report, or None when it is invalid or cannot be written
    """
    report = to_jsonable(report)
    problems = validate_report(report)
    if problems:
        logging.error(f"Report does not match the schema: {'; '.join(problems)}")
        return None
    try:
        path = get_output_path(output_dir, name)
    except (PermissionError, OSError) as e:
        logging.error(f"Cannot create output directory {output_dir}: {e}")
        return None
    if not save_json(report, path):
        return None
    logging.info(f"Report saved to {path}")
    return path


def save_frame(frame, path):
    """Write a table as CSV with full double precision."""
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        return True
    except (PermissionError, IOError) as e:
        logging.error(f"Error saving table to {path}: {e}")
        return False


def load_frame(path):
    """Read a CSV table, or None when it cannot be read."""
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        logging.error(f"File not found: {path}")
    except PermissionError:
        logging.error(f"Permission denied to read file: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, IOError) as e:
        logging.error(f"Error reading table from {path}: {e}")
    return None


def save_frames(frames, output_dir, prefix=""):
    """Write a dict of tables as <prefix><name>.csv; returns the written paths."""
    paths = []
    for name, frame in frames.items():
        path = get_output_path(output_dir, f"{prefix}{name}.csv")
        if save_frame(frame, path):
            paths.append(path)
    return paths


def load_marginal_csv(path):
    """Read a marginal from columns atom, weight (weights are normalized)."""
    frame = load_frame(path)
    if frame is None:
        return None
    if not {"atom", "weight"} <= set(frame.columns):
        logging.error(f"{path}: expected columns 'atom' and 'weight', got {list(frame.columns)}")
        return None
    try:
        frame = frame.sort_values("atom")
        weights = frame["weight"].to_numpy(dtype=float)
        return DiscreteMarginal(frame["atom"].to_numpy(dtype=float), weights / weights.sum())
    except (ValueError, TypeError) as e:
        logging.error(f"{path}: invalid marginal: {e}")
        return None


def save_field_csv(field, path):
    return save_frame(field.to_frame(), path)


def load_field_csv(path):
    """Read a 1D field from columns x, u1, ..., um."""
    frame = load_frame(path)
    if frame is None:
        return None
    try:
        return FieldBundle.from_frame(frame)
    except (ValueError, TypeError) as e:
        logging.error(f"{path}: invalid field: {e}")
        return None


def save_box_field_csv(field, path):
    return save_frame(field.to_frame(), path)


def load_box_field_csv(path):
    """Read a box field from columns x1[,x2], xN, u1, ..., um."""
    frame = load_frame(path)
    if frame is None:
        return None
    try:
        return BoxField.from_frame(frame)
    except (ValueError, TypeError) as e:
        logging.error(f"{path}: invalid box field: {e}")
        return None
