"""CSV datasets with a JSON role map, and atomic file output.

The role map is a JSON object::

    {"roles": {"y": "outcome", "a0": "trt0", ..., "x0": ["age", "sex"], "v": []},
     "support": "full"}

Scalar roles (``y``, ``a0``, ``a1``) name one column; the others name one column
or a list. ``support`` is ``"full"``, ``"monotone"`` or a list of ``[a0, a1]``
pairs and defaults to full.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import InputError, PanelDataset, TreatmentSupport, dataset_from_columns

CANONICAL_ORDER = ("y", "a0", "a1", "z0", "z1", "w0", "w1", "x0", "x1", "v")
ROLEMAP_KEYS = {"roles", "support"}


def fmt_number(x: float) -> str:
    """17 significant digits, enough to round-trip a double."""
    return format(float(x), ".17g")


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _role_columns(data: PanelDataset) -> list[tuple[str, str, np.ndarray]]:
    """(role, column name, values) in canonical order."""
    out = []
    for role in CANONICAL_ORDER:
        arr = getattr(data, role)
        if arr.ndim == 1:
            out.append((role, role, arr))
            continue
        k = arr.shape[1]
        for j in range(k):
            out.append((role, role if k == 1 else f"{role}_{j + 1}", arr[:, j]))
    return out


def dataset_to_csv(data: PanelDataset) -> str:
    cols = _role_columns(data)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([name for _, name, _ in cols])
    formatters = [(lambda v: str(int(v))) if role in ("a0", "a1") else fmt_number for role, _, _ in cols]
    for i in range(data.n):
        writer.writerow([f(vals[i]) for f, (_, _, vals) in zip(formatters, cols)])
    return buf.getvalue()


def role_map(data: PanelDataset) -> dict:
    roles: dict = {}
    for role, name, _ in _role_columns(data):
        if role in ("y", "a0", "a1"):
            roles[role] = name
        else:
            roles.setdefault(role, []).append(name)
    roles.setdefault("v", [])
    return {"roles": roles, "support": data.support.to_json()}


def write_dataset(data: PanelDataset, csv_path, roles_path) -> None:
    atomic_write(csv_path, dataset_to_csv(data))
    atomic_write(roles_path, json.dumps(role_map(data), indent=2) + "\n")


def read_role_map(path) -> tuple[dict, TreatmentSupport]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"role map not found: {path}")
    try:
        spec = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"role map {path} is not valid JSON: {exc}") from exc
    if not isinstance(spec, dict) or "roles" not in spec:
        raise InputError(f"role map {path} must be an object with a 'roles' entry")
    unknown = set(spec) - ROLEMAP_KEYS
    if unknown:
        raise InputError(f"unknown role map keys in {path}: {sorted(unknown)}")
    return spec["roles"], TreatmentSupport.parse(spec.get("support"))


def read_csv_columns(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"dataset not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"dataset {path} is empty") from None
        if len(set(header)) != len(header):
            raise InputError(f"dataset {path} has duplicate column names")
        rows = list(reader)
    values = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values.append([float(x) for x in row])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
    mat = np.array(values, dtype=float).reshape(len(values), len(header))
    return {name: mat[:, j] for j, name in enumerate(header)}


def read_dataset(csv_path, roles_path) -> PanelDataset:
    roles, support = read_role_map(roles_path)
    return dataset_from_columns(read_csv_columns(csv_path), roles, support)
