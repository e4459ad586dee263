"""Reservoir grid geometry and rock property fields.

Cell arrays are flat, ordered x-fastest (the SPE10 convention): the cell with
1-based indices ``(i, j)`` lives at flat position ``(j - 1) * nx + (i - 1)``.
``RockField.as_2d`` reshapes to ``(ny, nx)`` so that row ``j - 1`` holds the
cells with y-index ``j``.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import ndimage

SPE10_DIMS = (60, 220, 85)


class FieldError(ValueError):
    """Invalid grid, window or rock data."""


class Spe10ParseError(FieldError):
    """Malformed token in an SPE10 ASCII file."""

    def __init__(self, token, line, column):
        super().__init__(f"cannot parse token {token!r} at line {line}, column {column}")
        self.token = token
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Grid:
    """Uniform 2D Cartesian grid (lengths in metres)."""

    nx: int
    ny: int
    dx: float = 32.0
    dy: float = 32.0
    dz: float = 0.6096

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise FieldError(f"grid needs at least one cell per axis, got {self.nx}x{self.ny}")
        if min(self.dx, self.dy, self.dz) <= 0:
            raise FieldError("cell dimensions must be positive")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def extent(self) -> tuple[float, float]:
        return self.nx * self.dx, self.ny * self.dy

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy * self.dz

    def flat_index(self, i: int, j: int) -> int:
        """Flat array position of 1-based cell ``(i, j)``."""
        self._check(i, j)
        return (j - 1) * self.nx + (i - 1)

    def _check(self, i, j):
        if not (1 <= i <= self.nx and 1 <= j <= self.ny):
            raise IndexError(f"cell ({i}, {j}) outside {self.nx}x{self.ny} grid")


def cell_center(grid: Grid, i: int, j: int) -> tuple[float, float]:
    """Coordinates in metres of the centre of 1-based cell ``(i, j)``."""
    grid._check(i, j)
    return (i - 0.5) * grid.dx, (j - 0.5) * grid.dy


@dataclass(frozen=True)
class FieldWindow:
    """Rectangular areal window into a layered dataset.

    ``layer`` is 1-based; offsets are 0-based cell counts from the origin.
    """

    layer: int = 3
    i_offset: int = 0
    j_offset: int = 0
    width: int = 60
    height: int = 50

    def check_fits(self, dims):
        nx, ny, nz = dims
        if not 1 <= self.layer <= nz:
            raise FieldError(f"layer {self.layer} outside 1..{nz}")
        if self.i_offset < 0 or self.j_offset < 0 or self.width < 1 or self.height < 1:
            raise FieldError(f"invalid window {self}")
        if self.i_offset + self.width > nx or self.j_offset + self.height > ny:
            raise FieldError(f"window {self} does not fit inside {nx}x{ny}")

    def then(self, inner: FieldWindow) -> FieldWindow:
        """Window equivalent to applying ``inner`` to the result of this one."""
        if inner.i_offset + inner.width > self.width or inner.j_offset + inner.height > self.height:
            raise FieldError(f"window {inner} does not fit inside {self.width}x{self.height}")
        return FieldWindow(self.layer, self.i_offset + inner.i_offset, self.j_offset + inner.j_offset,
                           inner.width, inner.height)


@dataclass(frozen=True, eq=False)
class RockField:
    """Per-cell porosity (fraction) and permeability (mD) on a grid."""

    grid: Grid
    porosity: np.ndarray
    perm_x: np.ndarray
    perm_y: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.grid.n_cells
        perm_y = self.perm_x if self.perm_y is None else self.perm_y
        arrays = {}
        for name, values in (("porosity", self.porosity), ("perm_x", self.perm_x), ("perm_y", perm_y)):
            a = np.array(values, dtype=float).reshape(-1)
            if a.size != n:
                raise FieldError(f"{name} has {a.size} values, grid has {n} cells")
            a.setflags(write=False)
            arrays[name] = a
        if np.any(~(arrays["perm_x"] > 0)) or np.any(~(arrays["perm_y"] > 0)):
            raise FieldError("permeability must be strictly positive")
        phi = arrays["porosity"]
        if np.any(~((phi > 0) & (phi <= 1))):
            raise FieldError("porosity must lie in (0, 1]")
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    def as_2d(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).reshape(self.grid.ny, self.grid.nx)

    def subfield(self, i_offset: int, j_offset: int, width: int, height: int) -> RockField:
        """Rectangular sub-field; offsets are 0-based cell counts."""
        g = self.grid
        FieldWindow(1, i_offset, j_offset, width, height).check_fits((g.nx, g.ny, 1))
        sl = (slice(j_offset, j_offset + height), slice(i_offset, i_offset + width))
        sub = Grid(width, height, g.dx, g.dy, g.dz)
        return RockField(sub, self.as_2d(self.porosity)[sl], self.as_2d(self.perm_x)[sl],
                         self.as_2d(self.perm_y)[sl])

    def equals(self, other: RockField) -> bool:
        """Value equality (``==`` is identity so fields can key caches)."""
        return (self.grid == other.grid
                and np.array_equal(self.porosity, other.porosity)
                and np.array_equal(self.perm_x, other.perm_x)
                and np.array_equal(self.perm_y, other.perm_y))


# --------------------------------------------------------------------------
# SPE10 ASCII layout

def _read_text(source) -> str:
    # str is content, never a path; pass a Path to read a file
    if isinstance(source, os.PathLike):
        return Path(source).read_text()
    if isinstance(source, str):
        return source
    if isinstance(source, bytes):
        return source.decode("ascii")
    data = source.read()
    return data.decode("ascii") if isinstance(data, bytes) else data


def parse_spe10_values(source) -> np.ndarray:
    """Parse whitespace-separated decimals from text, bytes, a path or a stream.

    Raises ``Spe10ParseError`` naming the first malformed token.
    """
    text = _read_text(source)
    try:
        return np.array(text.split(), dtype=float)
    except ValueError:
        pass
    for lineno, line in enumerate(text.splitlines(), start=1):
        col = 0
        for token in line.split():
            col = line.index(token, col)
            try:
                float(token)
            except ValueError:
                raise Spe10ParseError(token, lineno, col + 1) from None
            col += len(token)
    raise FieldError("unparseable SPE10 data")  # pragma: no cover


def _layer(values, dims, layer, what):
    nx, ny, nz = dims
    n = nx * ny * nz
    if values.size != n:
        raise FieldError(f"{what}: expected {n} values for dims {dims}, got {values.size}")
    return values.reshape(nz, ny, nx)[layer - 1]


def load_spe10_layer(source, window: FieldWindow, grid: Grid, dims=SPE10_DIMS,
                     porosity_source=None, default_porosity: float = 0.2) -> RockField:
    """Cut one areal window out of an SPE10-layout permeability file.

    The permeability source holds one block (isotropic) or the kx, ky[, kz]
    blocks back to back, each x-fastest then y then z. kz is ignored. Without a
    porosity source every cell gets ``default_porosity``.
    """
    window.check_fits(dims)
    if (grid.nx, grid.ny) != (window.width, window.height):
        raise FieldError(f"grid {grid.nx}x{grid.ny} does not match window {window.width}x{window.height}")
    values = parse_spe10_values(source)
    n = dims[0] * dims[1] * dims[2]
    if values.size not in (n, 2 * n, 3 * n):
        raise FieldError(f"expected {n}, {2 * n} or {3 * n} permeability values for dims {dims}, "
                         f"got {values.size}")
    blocks = values.reshape(-1, n)
    sl = (slice(window.j_offset, window.j_offset + window.height),
          slice(window.i_offset, window.i_offset + window.width))
    kx = _layer(blocks[0], dims, window.layer, "kx")[sl]
    ky = _layer(blocks[1], dims, window.layer, "ky")[sl] if len(blocks) > 1 else kx
    if porosity_source is None:
        phi = np.full(kx.shape, default_porosity)
    else:
        phi = _layer(parse_spe10_values(porosity_source), dims, window.layer, "porosity")[sl]
    if np.any(kx <= 0) or np.any(ky <= 0):
        raise FieldError("permeability values must be strictly positive inside the window")
    return RockField(grid, phi, kx, ky)


def format_spe10_values(values, per_line: int = 6) -> str:
    """Shortest round-trip decimal text, ``per_line`` tokens per line."""
    tokens = [repr(float(v)) for v in np.asarray(values, dtype=float).reshape(-1)]
    lines = (" ".join(tokens[k:k + per_line]) for k in range(0, len(tokens), per_line))
    return "\n".join(lines) + "\n"


def write_spe10_dataset(rock: RockField, directory, stem: str = "field") -> Path:
    """Write perm (kx, ky, kz=ky blocks), porosity and a sidecar YAML; return the sidecar path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    perm_name, phi_name = f"{stem}_perm.dat", f"{stem}_phi.dat"
    perm = np.concatenate([rock.perm_x, rock.perm_y, rock.perm_y])
    (directory / perm_name).write_text(format_spe10_values(perm))
    (directory / phi_name).write_text(format_spe10_values(rock.porosity))
    g = rock.grid
    sidecar = {"dims": [g.nx, g.ny, 1], "perm": perm_name, "porosity": phi_name,
               "dx": g.dx, "dy": g.dy, "dz": g.dz}
    path = directory / f"{stem}.yaml"
    path.write_text(yaml.safe_dump(sidecar, sort_keys=False))
    return path


def read_sidecar(path) -> dict:
    path = Path(path)
    meta = yaml.safe_load(path.read_text()) or {}
    if "dims" not in meta or "perm" not in meta:
        raise FieldError(f"{path}: sidecar must declare 'dims' and 'perm'")
    dims = tuple(int(d) for d in meta["dims"])
    if len(dims) != 3:
        raise FieldError(f"{path}: dims must have three entries")
    out = dict(meta, dims=dims, perm=path.parent / meta["perm"])
    if meta.get("porosity"):
        out["porosity"] = path.parent / meta["porosity"]
    return out


def load_spe10_dataset(sidecar_path, window: FieldWindow | None = None, grid: Grid | None = None) -> RockField:
    """Load a windowed layer using the dimensions declared by a sidecar YAML."""
    meta = read_sidecar(sidecar_path)
    dims = meta["dims"]
    if window is None:
        window = FieldWindow(1, 0, 0, dims[0], dims[1])
    if grid is None:
        grid = Grid(window.width, window.height, meta.get("dx", 32.0), meta.get("dy", 32.0),
                    meta.get("dz", 0.6096))
    return load_spe10_layer(meta["perm"], window, grid, dims, meta.get("porosity"))


# --------------------------------------------------------------------------
# synthetic heterogeneity

POROSITY_RANGE = (0.05, 0.35)


def generate_synthetic_field(seed: int, grid: Grid, log_mean: float, log_sigma: float,
                             smoothing_radius: int) -> RockField:
    """Smoothed log-normal permeability with porosity tied to log-perm.

    Log-permeability is ``log_mean + log_sigma * box(noise)`` where ``noise`` is
    i.i.d. standard normal and ``box`` is a (2r+1)^2 moving average with
    reflecting edges. Porosity maps the normalised log-perm affinely onto
    ``POROSITY_RANGE``.
    """
    if log_sigma < 0 or smoothing_radius < 0:
        raise FieldError("log_sigma and smoothing_radius must be non-negative")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((grid.ny, grid.nx))
    if smoothing_radius > 0:
        noise = ndimage.uniform_filter(noise, size=2 * smoothing_radius + 1, mode="reflect")
    log_k = log_mean + log_sigma * noise
    lo, hi = POROSITY_RANGE
    span = log_k.max() - log_k.min()
    if span > 0:
        phi = lo + (hi - lo) * (log_k - log_k.min()) / span
    else:
        phi = np.full(log_k.shape, 0.5 * (lo + hi))
    k = np.exp(log_k)
    return RockField(grid, phi, k, k.copy())


def rock_to_text(rock: RockField) -> tuple[str, str]:
    """SPE10-layout text of (permeability blocks, porosity) for in-memory round trips."""
    perm = np.concatenate([rock.perm_x, rock.perm_y, rock.perm_y])
    return format_spe10_values(perm), format_spe10_values(rock.porosity)


def rock_from_text(perm_text: str, phi_text: str, grid: Grid) -> RockField:
    window = FieldWindow(1, 0, 0, grid.nx, grid.ny)
    return load_spe10_layer(io.StringIO(perm_text), window, grid, (grid.nx, grid.ny, 1),
                            io.StringIO(phi_text))
