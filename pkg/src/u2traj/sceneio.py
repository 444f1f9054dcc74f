"""Text file formats for scenes and generated mode sets.

Scene file: one header line, then T*N records, row-major (t outer, n inner):

    U2SCENE 1 T=<int> N=<int> dt=<float> bounds=<x0,x1,y0,y1> units=<tag> [key=value ...]
    t n x y m

Coordinates are fixed decimal with 9 fractional digits; m is 0 or 1.

Mode-set file: same header family with K and the per-mode error vector when
present, then one mask block and K mode blocks.  Mode means/variances are
written with 17 significant digits so the rank-network input tensor round
trips bit-exactly:

    U2MODESET 1 T=.. N=.. K=.. dt=.. bounds=.. units=.. [e=p1,p2,..] [key=value ..]
    mask
    t n m
    mode <k>
    t n mx my vx vy

Readers reject unknown versions, truncated files, and malformed records
with distinct errors naming the offending line.
"""

from __future__ import annotations

import os

import numpy as np

from .data import Bounds, Scene
from .errors import (
    FormatVersionError,
    MalformedRecordError,
    ParameterError,
    TruncatedFileError,
)
from .sampling import ModeSet, PosteriorField

__all__ = ["write_scene", "read_scene", "write_modeset", "read_modeset"]

SCENE_MAGIC = "U2SCENE"
MODESET_MAGIC = "U2MODESET"
FORMAT_VERSION = 1


def _fmt_bounds(b: Bounds) -> str:
    return ",".join(f"{v:.9f}" for v in (b.x_min, b.x_max, b.y_min, b.y_max))


def _parse_header(line: str, magic: str, required: tuple[str, ...]):
    tokens = line.split()
    if len(tokens) < 2 or tokens[0] != magic:
        raise FormatVersionError(f"expected {magic} header", line=1)
    try:
        version = int(tokens[1])
    except ValueError:
        raise FormatVersionError(f"bad version field {tokens[1]!r}", line=1)
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"unsupported {magic} version {version} (supported: {FORMAT_VERSION})", line=1
        )
    fields: dict[str, str] = {}
    for tok in tokens[2:]:
        if "=" not in tok:
            raise MalformedRecordError(f"bad header token {tok!r}", line=1)
        key, value = tok.split("=", 1)
        fields[key] = value
    for key in required:
        if key not in fields:
            raise MalformedRecordError(f"header missing {key!r}", line=1)
    return fields


def _parse_bounds(text: str) -> Bounds:
    parts = text.split(",")
    if len(parts) != 4:
        raise MalformedRecordError(f"bounds must have 4 values, got {text!r}", line=1)
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise MalformedRecordError(f"non-numeric bounds {text!r}", line=1)
    return Bounds(*vals)


def _header_extras(meta: dict, skip: tuple[str, ...]) -> str:
    extras = []
    for key, value in meta.items():
        if key in skip:
            continue
        text = str(value)
        if " " in text or "=" in key:
            raise ParameterError(f"meta {key!r} cannot contain spaces in a header")
        extras.append(f"{key}={text}")
    return (" " + " ".join(extras)) if extras else ""


def write_scene(path: str | os.PathLike, scene: Scene) -> None:
    """Write one scene; ``scene.meta`` string tags go into the header."""
    T, N = scene.T, scene.N
    units = scene.meta.get("units", "court")
    header = (
        f"{SCENE_MAGIC} {FORMAT_VERSION} T={T} N={N} dt={scene.dt:.9f} "
        f"bounds={_fmt_bounds(scene.bounds)} units={units}"
        + _header_extras(scene.meta, skip=("units",))
    )
    lines = [header]
    for t in range(T):
        for n in range(N):
            x, y = scene.x[t, n]
            lines.append(f"{t + 1} {n + 1} {x:.9f} {y:.9f} {int(scene.mask[t, n])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _record_fields(line: str, lineno: int, count: int) -> list[str]:
    parts = line.split()
    if len(parts) != count:
        raise MalformedRecordError(
            f"expected {count} fields, got {len(parts)}", line=lineno
        )
    return parts


def _parse_tn(parts: list[str], lineno: int, T: int, N: int) -> tuple[int, int]:
    try:
        t, n = int(parts[0]), int(parts[1])
    except ValueError:
        raise MalformedRecordError("non-integer t/n field", line=lineno)
    if not (1 <= t <= T and 1 <= n <= N):
        raise MalformedRecordError(f"t/n indices ({t},{n}) out of range", line=lineno)
    return t - 1, n - 1


def _parse_floats(parts: list[str], lineno: int) -> list[float]:
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise MalformedRecordError("non-numeric coordinate field", line=lineno)


def _parse_mask_value(text: str, lineno: int) -> float:
    if text not in ("0", "1"):
        raise MalformedRecordError(f"mask value must be 0 or 1, got {text!r}", line=lineno)
    return float(text)


def read_scene(path: str | os.PathLike) -> Scene:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TruncatedFileError("empty file", line=1)
    fields = _parse_header(lines[0], SCENE_MAGIC, ("T", "N", "dt", "bounds", "units"))
    try:
        T, N = int(fields["T"]), int(fields["N"])
        dt = float(fields["dt"])
    except ValueError:
        raise MalformedRecordError("non-numeric T/N/dt in header", line=1)
    bounds = _parse_bounds(fields["bounds"])
    expected = T * N
    if len(lines) - 1 < expected:
        raise TruncatedFileError(
            f"expected {expected} records, file ends after {len(lines) - 1}",
            line=len(lines),
        )
    if len(lines) - 1 > expected:
        raise MalformedRecordError(
            f"expected {expected} records, found more", line=expected + 2
        )
    x = np.zeros((T, N, 2))
    mask = np.zeros((T, N))
    seen = np.zeros((T, N), dtype=bool)
    for i, line in enumerate(lines[1:], start=2):
        parts = _record_fields(line, i, 5)
        t, n = _parse_tn(parts[:2], i, T, N)
        x[t, n] = _parse_floats(parts[2:4], i)
        mask[t, n] = _parse_mask_value(parts[4], i)
        seen[t, n] = True
    if not seen.all():
        raise TruncatedFileError("duplicate records leave some (t, n) unset", line=len(lines))
    meta = {k: v for k, v in fields.items() if k not in ("T", "N", "dt", "bounds")}
    return Scene(x=x, mask=mask, dt=dt, bounds=bounds, meta=meta)


def write_modeset(
    path: str | os.PathLike,
    modes: ModeSet,
    mask: np.ndarray,
    dt: float = 0.16,
    bounds: Bounds | None = None,
    meta: dict | None = None,
) -> None:
    """Write a mode set with its shared conditioning mask."""
    if modes.K < 1:
        raise ParameterError("cannot write an empty mode set")
    T, N = modes.fields[0].mean.shape[:2]
    bounds = bounds if bounds is not None else Bounds(-1.0, 1.0, -1.0, 1.0)
    meta = dict(meta or {})
    units = meta.pop("units", "model")
    header = (
        f"{MODESET_MAGIC} {FORMAT_VERSION} T={T} N={N} K={modes.K} dt={dt:.9f} "
        f"bounds={_fmt_bounds(bounds)} units={units}"
    )
    if modes.e is not None:
        header += " e=" + ",".join(f"{v:.17g}" for v in modes.e)
    header += _header_extras(meta, skip=())
    lines = [header, "mask"]
    mask = np.asarray(mask)
    for t in range(T):
        for n in range(N):
            lines.append(f"{t + 1} {n + 1} {int(mask[t, n])}")
    for k, fld in enumerate(modes.fields):
        lines.append(f"mode {k + 1}")
        for t in range(T):
            for n in range(N):
                mx, my = fld.mean[t, n]
                vx, vy = fld.var[t, n]
                lines.append(
                    f"{t + 1} {n + 1} {mx:.17g} {my:.17g} {vx:.17g} {vy:.17g}"
                )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_modeset(path: str | os.PathLike):
    """Read a mode set; returns (ModeSet, mask, header-meta dict)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TruncatedFileError("empty file", line=1)
    fields = _parse_header(
        lines[0], MODESET_MAGIC, ("T", "N", "K", "dt", "bounds", "units")
    )
    try:
        T, N, K = int(fields["T"]), int(fields["N"]), int(fields["K"])
        dt = float(fields["dt"])
    except ValueError:
        raise MalformedRecordError("non-numeric T/N/K/dt in header", line=1)
    bounds = _parse_bounds(fields["bounds"])
    e = None
    if "e" in fields:
        try:
            e = np.array([float(p) for p in fields["e"].split(",")])
        except ValueError:
            raise MalformedRecordError("non-numeric e vector in header", line=1)
        if e.shape != (K,):
            raise MalformedRecordError(f"e vector length {e.size} != K={K}", line=1)

    block = T * N
    expected_lines = 1 + (1 + block) * (K + 1)
    if len(lines) < expected_lines:
        raise TruncatedFileError(
            f"expected {expected_lines} lines, file ends after {len(lines)}",
            line=len(lines),
        )
    if len(lines) > expected_lines:
        raise MalformedRecordError("trailing content after final mode block", line=expected_lines + 1)

    pos = 1
    if lines[pos].strip() != "mask":
        raise MalformedRecordError("expected 'mask' block marker", line=pos + 1)
    pos += 1
    mask = np.zeros((T, N))
    for i in range(block):
        lineno = pos + i + 1
        parts = _record_fields(lines[pos + i], lineno, 3)
        t, n = _parse_tn(parts[:2], lineno, T, N)
        mask[t, n] = _parse_mask_value(parts[2], lineno)
    pos += block

    fields_out: list[PosteriorField] = []
    for k in range(K):
        lineno = pos + 1
        marker = lines[pos].split()
        if len(marker) != 2 or marker[0] != "mode" or marker[1] != str(k + 1):
            raise MalformedRecordError(f"expected 'mode {k + 1}' marker", line=lineno)
        pos += 1
        mean = np.zeros((T, N, 2))
        var = np.zeros((T, N, 2))
        for i in range(block):
            lineno = pos + i + 1
            parts = _record_fields(lines[pos + i], lineno, 6)
            t, n = _parse_tn(parts[:2], lineno, T, N)
            vals = _parse_floats(parts[2:], lineno)
            mean[t, n] = vals[:2]
            var[t, n] = vals[2:]
            if var[t, n, 0] < 0 or var[t, n, 1] < 0:
                raise MalformedRecordError("negative variance", line=lineno)
        pos += block
        fields_out.append(PosteriorField(mean=mean, var=var))

    meta = {
        k: v for k, v in fields.items() if k not in ("T", "N", "K", "dt", "bounds", "e")
    }
    meta["dt"] = dt
    meta["bounds"] = bounds
    return ModeSet(fields=fields_out, e=e), mask, meta
