"""The replicate-by-generation matrix of population sizes and its CSV form."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataValidationError, ParameterError
from .laws import ancestor_from_dict, offspring_from_dict

PANEL_HEADER = ("replicate", "generation", "z")


@dataclass(frozen=True, eq=False)
class Panel:
    """Generation sizes ``z[j, l - generation0]`` for replicates ``j``.

    ``generation0`` is the generation index of the first column (0 for
    simulated panels).  Laws and seed are provenance only.
    """

    z: np.ndarray
    generation0: int = 0
    offspring: Optional[object] = None
    ancestor: Optional[object] = None
    seed: Optional[int] = None
    labels: Optional[tuple] = field(default=None)

    def __post_init__(self):
        z = np.asarray(self.z)
        if z.ndim == 1:
            z = z[None, :]
        if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
            raise DataValidationError(f"panel must be a nonempty 2-D array, got shape {z.shape}")
        if not np.all(np.isfinite(z)):
            raise DataValidationError("panel contains non-finite values")
        if np.any(z <= 0):
            raise DataValidationError("panel entries must be positive")
        z = z.copy()
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def J(self) -> int:
        return self.z.shape[0]

    @property
    def last_generation(self) -> int:
        return self.generation0 + self.z.shape[1] - 1

    def columns(self, start: int, stop: int) -> np.ndarray:
        """Columns for generations ``start..stop`` inclusive, as float."""
        if start < self.generation0 or stop > self.last_generation or start > stop:
            raise ParameterError(
                f"generations {start}..{stop} outside panel range "
                f"{self.generation0}..{self.last_generation}"
            )
        a = start - self.generation0
        return self.z[:, a : stop - self.generation0 + 1].astype(float)

    def take(self, rows) -> "Panel":
        return Panel(self.z[np.asarray(rows)], self.generation0, self.offspring, self.ancestor, self.seed)

    def __eq__(self, other):
        if not isinstance(other, Panel):
            return NotImplemented
        return self.generation0 == other.generation0 and np.array_equal(self.z, other.z)

    __hash__ = None


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.name + ".json")


def write_panel_csv(panel: Panel, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PANEL_HEADER)
        for j in range(panel.J):
            for c, value in enumerate(panel.z[j]):
                w.writerow((j, panel.generation0 + c, int(value)))
    meta = {
        "offspring": panel.offspring.to_dict() if panel.offspring is not None else None,
        "ancestor": panel.ancestor.to_dict() if panel.ancestor is not None else None,
        "seed": panel.seed,
        "J": panel.J,
        "generation0": panel.generation0,
        "last_generation": panel.last_generation,
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_panel_csv(path) -> Panel:
    """Read a ``replicate,generation,z`` CSV (and its sidecar JSON if present)."""
    path = Path(path)
    rows: dict[str, list[tuple[int, int]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataValidationError(f"{path}: no rows")
        if tuple(h.strip() for h in header) != PANEL_HEADER:
            raise DataValidationError(f"{path}: expected header {','.join(PANEL_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 3:
                raise DataValidationError(f"{path}:{lineno}: expected 3 fields")
            rep, gen, z = (s.strip() for s in rec)
            try:
                g, v = int(gen), int(z)
            except ValueError:
                raise DataValidationError(f"{path}:{lineno}: generation and z must be integers") from None
            if v < 1:
                raise DataValidationError(f"{path}:{lineno}: z must be >= 1, got {v}")
            seq = rows.setdefault(rep, [])
            if seq and g != seq[-1][0] + 1:
                raise DataValidationError(f"{path}:{lineno}: generations must be consecutive and increasing")
            seq.append((g, v))
    if not rows:
        raise DataValidationError(f"{path}: no rows")
    first = next(iter(rows.values()))
    gens = [g for g, _ in first]
    for rep, seq in rows.items():
        if [g for g, _ in seq] != gens:
            raise DataValidationError(f"{path}: replicate {rep!r} covers different generations (ragged panel)")
    z = np.array([[v for _, v in seq] for seq in rows.values()], dtype=np.int64)
    offspring = ancestor = seed = None
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        if meta.get("offspring"):
            offspring = offspring_from_dict(meta["offspring"])
        if meta.get("ancestor"):
            ancestor = ancestor_from_dict(meta["ancestor"])
        seed = meta.get("seed")
    return Panel(z, gens[0], offspring, ancestor, seed, labels=tuple(rows))
