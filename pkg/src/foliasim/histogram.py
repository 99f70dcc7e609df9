"""Cell-indexed occupation counts and their CSV / PGM exports."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .manifold import CellGrid


@dataclass
class OccupationHistogram:
    grid: CellGrid
    counts: np.ndarray
    total_samples: int = 0
    burn_in_discarded: int = 0

    @classmethod
    def empty(cls, grid: CellGrid) -> OccupationHistogram:
        return cls(grid, np.zeros(grid.cell_count, dtype=np.int64))

    def add_points(self, X: np.ndarray) -> None:
        if len(X) == 0:
            return
        self.counts += np.bincount(self.grid.indices(X), minlength=self.grid.cell_count)
        self.total_samples += len(X)

    def merge(self, other: OccupationHistogram) -> None:
        if other.grid != self.grid:
            raise ValueError("cannot merge histograms on different grids")
        self.counts += other.counts
        self.total_samples += other.total_samples
        self.burn_in_discarded += other.burn_in_discarded

    @property
    def weights(self) -> np.ndarray:
        if self.total_samples == 0:
            return np.zeros(self.grid.cell_count)
        return self.counts / self.total_samples

    @property
    def occupied(self) -> np.ndarray:
        return np.flatnonzero(self.counts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("cell_id,count,weight\n")
        w = self.weights
        for i, (c, wt) in enumerate(zip(self.counts.tolist(), w.tolist())):
            buf.write(f"{i},{c},{wt:.12g}\n")
        return buf.getvalue()

    def to_pgm(self) -> bytes:
        """Binary P5 image: height = resolution[0], width = resolution[1], row-major cells.

        Counts are rescaled linearly so the largest count maps to 255.
        """
        r0, r1 = self.grid.resolution
        top = int(self.counts.max()) if self.counts.size else 0
        if top > 0:
            pix = (self.counts.astype(np.float64) * 255.0 / top).round().astype(np.uint8)
        else:
            pix = np.zeros(self.grid.cell_count, dtype=np.uint8)
        return f"P5\n{r1} {r0}\n255\n".encode("ascii") + pix.tobytes()

    def summary(self) -> dict:
        return {
            "grid": {**self.grid.manifold.to_json(), "resolution": list(self.grid.resolution)},
            "cell_count": self.grid.cell_count,
            "total_samples": int(self.total_samples),
            "burn_in_discarded": int(self.burn_in_discarded),
            "occupied_cells": int(np.count_nonzero(self.counts)),
            "coverage_fraction": float(np.count_nonzero(self.counts) / self.grid.cell_count),
        }
