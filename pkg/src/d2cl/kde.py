"""Bivariate KDE "causal images" for ordered variable pairs.

Channel 0 holds Gaussian product-kernel density values on a regular grid
(first variable on the horizontal axis, second on the vertical axis);
channels 1 and 2 are fixed linear coordinate ramps in [-1, 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .graph import DomainError

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DegenerateColumnError(DomainError):
    def __init__(self, node, message=None):
        self.node = node
        super().__init__(message or f"column {node} is degenerate (zero variance or too short)")


@dataclass(frozen=True)
class GridSpec:
    resolution: int = 32
    range_mult: float = 4.0

    def __post_init__(self):
        if self.resolution < 2:
            raise DomainError("grid resolution must be at least 2")


@dataclass(frozen=True, eq=False)
class CausalImage:
    tensor: np.ndarray                 # (3, H, W)
    pair: tuple[int, int]
    bandwidths: tuple[float, float]
    x_grid: np.ndarray
    y_grid: np.ndarray

    @property
    def density(self) -> np.ndarray:
        return self.tensor[0]

    def cell_area(self) -> float:
        return float((self.x_grid[1] - self.x_grid[0]) * (self.y_grid[1] - self.y_grid[0]))

    def mass(self) -> float:
        """Riemann sum of the density channel times the cell area."""
        return float(self.tensor[0].sum() * self.cell_area())


def silverman_bandwidth(column, node=None) -> float:
    """Bivariate Silverman rule per axis: ``h = std * n ** (-1/6)``."""
    x = np.asarray(column, dtype=np.float64)
    n = x.size
    if n < 2:
        raise DegenerateColumnError(node, f"column {node} has fewer than 2 samples")
    sd = x.std(ddof=1)
    if not np.isfinite(sd) or sd <= 0.0:
        raise DegenerateColumnError(node)
    return float(sd * n ** (-1.0 / 6.0))


def axis_grid(column, h: float, grid: GridSpec) -> np.ndarray:
    x = np.asarray(column, dtype=np.float64)
    pad = grid.range_mult * h
    return np.linspace(x.min() - pad, x.max() + pad, grid.resolution)


def kernel_matrix(column, h: float, points) -> np.ndarray:
    """``K[g, r] = phi((points[g] - column[r]) / h) / h``."""
    u = (np.asarray(points)[:, None] - np.asarray(column)[None, :]) / h
    return np.exp(-0.5 * u * u) * (_INV_SQRT_2PI / h)


def kde_grid(xi, xj, hx: float, hy: float, x_grid, y_grid) -> np.ndarray:
    """Product-kernel KDE of ``(xi, xj)`` on ``y_grid x x_grid`` (rows = y)."""
    kx = kernel_matrix(xi, hx, x_grid)
    ky = kernel_matrix(xj, hy, y_grid)
    return ky @ kx.T / len(xi)


def positional_channels(grid: GridSpec) -> np.ndarray:
    """Two ramps: channel 0 varies along x (columns), channel 1 along y (rows)."""
    r = np.linspace(-1.0, 1.0, grid.resolution)
    xs = np.broadcast_to(r[None, :], (grid.resolution, grid.resolution))
    return np.stack([xs, xs.T]).copy()


def kde_image(X, i: int, j: int, grid: GridSpec = GridSpec(),
              bandwidths: tuple[float, float] | None = None) -> CausalImage:
    """Causal image for the ordered pair ``(i, j)``: ``X_i`` horizontal, ``X_j`` vertical."""
    if i == j:
        raise DomainError("kde_image needs two distinct variables")
    X = np.asarray(X, dtype=np.float64)
    xi, xj = X[:, i], X[:, j]
    if bandwidths is None:
        hx = silverman_bandwidth(xi, node=i)
        hy = silverman_bandwidth(xj, node=j)
    else:
        hx, hy = (float(b) for b in bandwidths)
    xg = axis_grid(xi, hx, grid)
    yg = axis_grid(xj, hy, grid)
    dens = kde_grid(xi, xj, hx, hy, xg, yg)
    tensor = np.concatenate([dens[None], positional_channels(grid)])
    return CausalImage(tensor, (i, j), (hx, hy), xg, yg)


class ImageBank:
    """Per-column kernel matrices so that any pair's density is one matmul.

    Degenerate columns are recorded in ``degenerate`` instead of raising;
    asking for a pair that involves one raises :class:`DegenerateColumnError`.
    """

    def __init__(self, X, grid: GridSpec = GridSpec(), dtype=np.float32,
                 cache_bytes: int = 512 * 2**20):
        X = np.asarray(X, dtype=np.float64)
        self._blocks = {}
        block_bytes = X.shape[1] * grid.resolution ** 2 * np.dtype(dtype).itemsize
        self._max_blocks = max(1, cache_bytes // max(block_bytes, 1))
        self.grid = grid
        self.n, self.p = X.shape
        H = grid.resolution
        self.bandwidths = np.full(self.p, np.nan)
        self.grids = np.zeros((self.p, H))
        self.kernels = np.zeros((self.p, H, self.n), dtype=dtype)
        self.degenerate = np.zeros(self.p, dtype=bool)
        for c in range(self.p):
            try:
                h = silverman_bandwidth(X[:, c], node=c)
            except DegenerateColumnError:
                self.degenerate[c] = True
                continue
            self.bandwidths[c] = h
            self.grids[c] = axis_grid(X[:, c], h, grid)
            kern = kernel_matrix(X[:, c], h, self.grids[c])
            # far tails would underflow to subnormals, which cripple GEMM speed
            kern[kern < kern.max() * 1e-12] = 0.0
            self.kernels[c] = kern
        spacing = self.grids[:, 1] - self.grids[:, 0]
        # scales densities to mean ~1 over the grid regardless of data units
        self._unit = spacing * H
        self.positional = positional_channels(grid).astype(dtype)

    def _check(self, i, j):
        bad = self.degenerate[i] | self.degenerate[j]
        if np.any(bad):
            ii = np.atleast_1d(i)[np.atleast_1d(bad)]
            jj = np.atleast_1d(j)[np.atleast_1d(bad)]
            node = int(ii[0]) if self.degenerate[ii[0]] else int(jj[0])
            raise DegenerateColumnError(node)

    def source_block(self, i: int) -> np.ndarray:
        """Densities of ``(i, j)`` for every ``j`` as one GEMM, shape ``(p, H, W)``; cached."""
        blk = self._blocks.get(i)
        if blk is None:
            H = self.grid.resolution
            flat = self.kernels.reshape(self.p * H, self.n)
            blk = (flat @ self.kernels[i].T).reshape(self.p, H, H)
            blk /= self.n
            if len(self._blocks) >= self._max_blocks:
                self._blocks.pop(next(iter(self._blocks)))
            self._blocks[i] = blk
        return blk

    def densities(self, i, j) -> np.ndarray:
        """Raw KDE values for arrays of pairs, shape ``(B, H, W)``."""
        i = np.atleast_1d(i)
        j = np.atleast_1d(j)
        self._check(i, j)
        out = np.empty((i.size, self.grid.resolution, self.grid.resolution), dtype=self.kernels.dtype)
        for src in np.unique(i):
            sel = i == src
            out[sel] = self.source_block(int(src))[j[sel]]
        return out

    def network_input(self, i, j) -> np.ndarray:
        """``(B, 3, H, W)`` tensors with density rescaled to grid-cell units."""
        i = np.atleast_1d(i)
        j = np.atleast_1d(j)
        dens = self.densities(i, j)
        dens *= (self._unit[i] * self._unit[j]).astype(dens.dtype)[:, None, None]
        B = dens.shape[0]
        pos = np.broadcast_to(self.positional, (B,) + self.positional.shape)
        return np.concatenate([dens[:, None], pos], axis=1)

    def image(self, i: int, j: int) -> CausalImage:
        dens = self.densities(i, j)[0].astype(np.float64)
        tensor = np.concatenate([dens[None], positional_channels(self.grid)])
        return CausalImage(tensor, (i, j), (self.bandwidths[i], self.bandwidths[j]),
                           self.grids[i].copy(), self.grids[j].copy())


# -- binary image cache --------------------------------------------------------

_HEADER = struct.Struct("<qiiidd")


def write_image_record(fh, k: int, img: CausalImage) -> None:
    """Append one record: ``k, H, W, C`` and both bandwidths, then C*H*W float32."""
    C, H, W = img.tensor.shape
    fh.write(_HEADER.pack(int(k), H, W, C, *map(float, img.bandwidths)))
    fh.write(np.ascontiguousarray(img.tensor, dtype="<f4").tobytes())


def read_image_records(fh):
    """Yield ``(k, tensor, bandwidths)`` until end of file."""
    while True:
        head = fh.read(_HEADER.size)
        if not head:
            return
        if len(head) != _HEADER.size:
            raise DomainError("truncated image record header")
        k, H, W, C, hx, hy = _HEADER.unpack(head)
        nbytes = 4 * C * H * W
        body = fh.read(nbytes)
        if len(body) != nbytes:
            raise DomainError(f"truncated image record for pair {k}")
        yield k, np.frombuffer(body, dtype="<f4").reshape(C, H, W), (hx, hy)
