"""
FCIDUMP reader/writer for AbInitioSpec.

File convention: integrals in chemists' notation (ij|kl) with 1-based
orbital indices; `i j 0 0` lines are one-electron integrals, `0 0 0 0`
is the core energy, `i 0 0 0` orbital energies are skipped.
"""
from __future__ import annotations

import itertools
import logging
import re
from pathlib import Path

import numpy as np

from gpslab.core.exceptions import FormatError
from gpslab.models.config_space import SectorSpec
from gpslab.models.hamiltonian import AbInitioSpec
from gpslab.utils.io import format_float

logger = logging.getLogger(__name__)

_HEADER_FIELD = re.compile(r"\b(NORB|NELEC|MS2)\s*=\s*(-?\d+)", re.IGNORECASE)
_HEADER_END = re.compile(r"^\s*(&END|/)\s*$", re.IGNORECASE)

WRITE_TOL = 1e-15


def _eight_fold(i: int, j: int, k: int, l: int) -> set[tuple[int, int, int, int]]:
    return {
        (i, j, k, l), (j, i, k, l), (i, j, l, k), (j, i, l, k),
        (k, l, i, j), (l, k, i, j), (k, l, j, i), (l, k, j, i),
    }


def chemist_to_internal(chemist: np.ndarray) -> np.ndarray:
    """(pq|rs)[p,q,r,s] -> h2[i,j,k,l] = (il|jk)."""
    return np.ascontiguousarray(np.transpose(chemist, (0, 2, 3, 1)))


def load_fcidump(path: str | Path) -> AbInitioSpec:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"Cannot read FCIDUMP: {exc}", path=str(path))

    header: dict[str, int] = {}
    body_start = None
    for lineno, line in enumerate(lines, start=1):
        for key, value in _HEADER_FIELD.findall(line):
            header[key.upper()] = int(value)
        if _HEADER_END.match(line):
            body_start = lineno
            break
    if body_start is None:
        raise FormatError("FCIDUMP header is not terminated by &END", path=str(path))
    for key in ("NORB", "NELEC"):
        if key not in header:
            raise FormatError(f"FCIDUMP header lacks {key}", path=str(path))

    norb = header["NORB"]
    nelec = header["NELEC"]
    ms2 = header.get("MS2", 0)
    if norb < 1 or (nelec + ms2) % 2 or not 0 <= (nelec + ms2) // 2 <= norb or not 0 <= (nelec - ms2) // 2 <= norb:
        raise FormatError(f"Inconsistent header NORB={norb} NELEC={nelec} MS2={ms2}", path=str(path))

    h1 = np.zeros((norb, norb))
    chemist = np.zeros((norb, norb, norb, norb))
    core = 0.0
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise FormatError(f"Expected 'value i j k l', got '{line.strip()}'", path=str(path), line=lineno)
        try:
            value = float(parts[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(p) for p in parts[1:])
        except ValueError:
            raise FormatError(f"Unparseable integral line '{line.strip()}'", path=str(path), line=lineno)
        if not np.isfinite(value):
            raise FormatError("Non-finite integral", path=str(path), line=lineno)
        if any(not 0 <= idx <= norb for idx in (i, j, k, l)):
            raise FormatError(f"Orbital index outside [0, {norb}]", path=str(path), line=lineno)

        if i == j == k == l == 0:
            core = value
        elif k == 0 and l == 0:
            if j == 0:
                continue  # orbital energy
            h1[i - 1, j - 1] = h1[j - 1, i - 1] = value
        elif 0 in (i, j, k, l):
            raise FormatError(f"Partially zero orbital indices in '{line.strip()}'", path=str(path), line=lineno)
        else:
            for p, q, r, s in _eight_fold(i - 1, j - 1, k - 1, l - 1):
                chemist[p, q, r, s] = value

    sector = SectorSpec((nelec + ms2) // 2, (nelec - ms2) // 2)
    logger.info(f"Loaded FCIDUMP {path.name}: NORB={norb} NELEC={nelec} MS2={ms2}")
    return AbInitioSpec(h1, chemist_to_internal(chemist), core, sector)


def write_fcidump(path: str | Path, spec: AbInitioSpec) -> Path:
    """Header, unique two-electron entries, one-electron entries, core energy."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    norb = spec.n_sites
    n_up = spec.sector.n_up if spec.sector and spec.sector.n_up is not None else 0
    n_down = spec.sector.n_down if spec.sector and spec.sector.n_down is not None else 0
    chemist = spec.chemist

    lines = [
        f" &FCI NORB={norb:4d},NELEC={n_up + n_down:2d},MS2={n_up - n_down},",
        "  ORBSYM=" + "1," * norb,
        "  ISYM=1,",
        " &END",
    ]
    for i, j in itertools.combinations_with_replacement(range(norb), 2):
        for k, l in itertools.combinations_with_replacement(range(norb), 2):
            if (j, i) < (l, k):
                continue
            value = chemist[j, i, l, k]
            if abs(value) > WRITE_TOL:
                lines.append(f" {format_float(value)} {j + 1:4d} {i + 1:4d} {l + 1:4d} {k + 1:4d}")
    for i, j in itertools.combinations_with_replacement(range(norb), 2):
        value = spec.h1[j, i]
        if abs(value) > WRITE_TOL:
            lines.append(f" {format_float(value)} {j + 1:4d} {i + 1:4d}    0    0")
    lines.append(f" {format_float(spec.core_energy)}    0    0    0    0")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
