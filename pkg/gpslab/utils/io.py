"""
Artifact writers shared by the CLI and the model serializers.

  * YAML documents (manifests, summaries, model containers) are dumped
    with a float representer that always prints 17 significant digits.
  * Traces are tab-separated columnar text with a `#`-prefixed header.
  * Configurations travel as digit strings ("0011", "0132").
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from gpslab.core.config import settings
from gpslab.core.exceptions import FormatError, InvalidArgumentError


CONFIG_DTYPE = np.int8


def format_float(value: float) -> str:
    """17-significant-digit text that reads back as a float."""
    value = float(value)
    if math.isnan(value):
        return ".nan"
    if math.isinf(value):
        return ".inf" if value > 0 else "-.inf"
    text = f"{value:.{settings.FLOAT_DIGITS}g}"
    if "." not in text:
        mantissa, sep, exponent = text.partition("e")
        text = f"{mantissa}.0{sep}{exponent}"
    return text


class ArtifactDumper(yaml.SafeDumper):
    pass


def _represent_float(dumper: yaml.SafeDumper, value: float):
    return dumper.represent_scalar("tag:yaml.org,2002:float", format_float(value))


def _represent_ndarray(dumper: yaml.SafeDumper, value: np.ndarray):
    return dumper.represent_list(value.tolist())


ArtifactDumper.add_representer(float, _represent_float)
ArtifactDumper.add_representer(np.float64, _represent_float)
ArtifactDumper.add_representer(np.float32, _represent_float)
ArtifactDumper.add_multi_representer(np.integer, lambda d, v: d.represent_int(int(v)))
ArtifactDumper.add_representer(np.bool_, lambda d, v: d.represent_bool(bool(v)))
ArtifactDumper.add_representer(np.ndarray, _represent_ndarray)
ArtifactDumper.add_representer(tuple, lambda d, v: d.represent_list(list(v)))


def dump_yaml(document: Mapping[str, Any]) -> str:
    return yaml.dump(dict(document), Dumper=ArtifactDumper, sort_keys=False, default_flow_style=False)


def write_yaml(path: str | Path, document: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_yaml(document), encoding="utf-8")
    return path


def read_yaml(path: str | Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            document = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise FormatError(f"Malformed YAML document: {exc}", path=str(path))
    if not isinstance(document, dict):
        raise FormatError("Expected a mapping at the top level", path=str(path))
    return document


def check_container(document: Mapping[str, Any], fmt: str, version: int) -> None:
    """Validate the `format`/`version` header of a versioned container."""
    if document.get("format") != fmt:
        raise FormatError(f"Expected format '{fmt}', got '{document.get('format')}'")
    if int(document.get("version", -1)) > version:
        raise FormatError(f"Unsupported {fmt} version {document.get('version')}")


def complex_pairs(values: Iterable[complex]) -> list[list[float]]:
    return [[float(np.real(v)), float(np.imag(v))] for v in values]


def complex_from_pairs(pairs: Sequence[Sequence[float]]) -> np.ndarray:
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return arr[:, 0] + 1j * arr[:, 1]


# ---------------------------------------------------------------------------
# Columnar traces
# ---------------------------------------------------------------------------

def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, (complex, np.complexfloating)):
        return f"{format_float(value.real)}{'+' if value.imag >= 0 else '-'}{format_float(abs(value.imag))}j"
    return str(value)


def write_columns(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# " + "\t".join(header)]
    lines.extend("\t".join(_cell(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_records(path: str | Path, records: Sequence[Mapping[str, Any]], header: Sequence[str] | None = None) -> Path:
    """Columnar text from a list of dict records sharing the same keys."""
    if header is None:
        header = list(records[0].keys()) if records else []
    return write_columns(path, header, ([r.get(k, "") for k in header] for r in records))


# ---------------------------------------------------------------------------
# Configuration strings
# ---------------------------------------------------------------------------

def config_to_string(x: Sequence[int]) -> str:
    return "".join(str(int(v)) for v in x)


def config_from_string(text: str) -> np.ndarray:
    text = text.strip()
    if not text.isdigit():
        raise InvalidArgumentError(f"Configuration string must be digits, got '{text}'", field="config")
    return np.fromiter((int(c) for c in text), dtype=CONFIG_DTYPE, count=len(text))
