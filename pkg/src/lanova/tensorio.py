"""On-disk formats.

Tensor files carry a ``dims:`` header line with the mode sizes and then
one value per line in mode-1-fastest order.  Plain CSV holds a matrix
with rows as mode 1.  Study configurations are flat ``key = value``
files with ``#`` comments.
"""

from __future__ import annotations

import math

import numpy as np

from .tensors import DenseTensor, as_array

__all__ = [
    "read_tensor_file",
    "write_tensor_file",
    "read_csv_matrix",
    "write_csv_matrix",
    "load_input",
    "read_config",
    "logit_transform",
]


def read_tensor_file(path) -> DenseTensor:
    """Read a headered tensor file.

    Raises ValueError with the offending detail on a malformed header,
    a value-count mismatch, or non-finite values.
    """
    with open(path) as handle:
        header = handle.readline()
        if not header.startswith("dims:"):
            raise ValueError(f"{path}: expected a 'dims:' header line")
        try:
            dims = tuple(int(tok) for tok in header.split(":", 1)[1].split())
        except ValueError:
            raise ValueError(f"{path}: dims header must hold integers") from None
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"{path}: dims must be positive, got {dims}")
        try:
            values = np.loadtxt(handle, dtype=float, ndmin=1)
        except ValueError as exc:
            raise ValueError(f"{path}: unreadable values ({exc})") from None
    if values.ndim != 1 or values.size != math.prod(dims):
        raise ValueError(
            f"{path}: expected {math.prod(dims)} values for dims {dims}, "
            f"got {values.size}"
        )
    if not np.isfinite(values).all():
        raise ValueError(f"{path}: non-finite values in tensor file")
    return DenseTensor(dims, values)


def write_tensor_file(path, data) -> None:
    tensor = data if isinstance(data, DenseTensor) else DenseTensor.from_array(data)
    with open(path, "w") as handle:
        handle.write("dims: " + " ".join(str(d) for d in tensor.dims) + "\n")
        for value in tensor.values:
            handle.write(f"{value:.17g}\n")


def read_csv_matrix(path) -> DenseTensor:
    """Read a plain comma-delimited matrix; rows become mode 1."""
    try:
        arr = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    except ValueError as exc:
        raise ValueError(f"{path}: unreadable CSV matrix ({exc})") from None
    if not np.isfinite(arr).all():
        raise ValueError(f"{path}: non-finite values in CSV matrix")
    return DenseTensor.from_array(arr)


def write_csv_matrix(path, data) -> None:
    arr = as_array(data)
    if arr.ndim != 2:
        raise ValueError("CSV output is matrix-only; use a tensor file")
    np.savetxt(path, arr, delimiter=",", fmt="%.17g")


def load_input(path, fmt: str | None = None) -> DenseTensor:
    """Read a data file, sniffing the format from the extension.

    ``fmt`` forces "csv" or "tensor"; otherwise a .csv suffix selects
    CSV and anything else the headered tensor format.
    """
    if fmt is None:
        fmt = "csv" if str(path).lower().endswith(".csv") else "tensor"
    if fmt == "csv":
        return read_csv_matrix(path)
    if fmt == "tensor":
        return read_tensor_file(path)
    raise ValueError(f"unknown input format {fmt!r}")


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def logit_transform(data) -> DenseTensor:
    """log(x / (1 - x)) elementwise; values must lie strictly in (0, 1)."""
    arr = as_array(data)
    if not ((arr > 0.0) & (arr < 1.0)).all():
        raise ValueError("logit transform requires values strictly in (0, 1)")
    return DenseTensor.from_array(np.log(arr / (1.0 - arr)))
