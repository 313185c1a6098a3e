"""Per-iteration convergence records shared by the solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["ConvergenceTrace"]


@dataclass
class ConvergenceTrace:
    """A named-column table of per-iteration solver diagnostics."""

    columns: tuple[str, ...]
    rows: list[tuple[float, ...]] = field(default_factory=list)

    def append(self, *values: float) -> None:
        if len(values) != len(self.columns):
            raise ValueError(
                f"row has {len(values)} values for {len(self.columns)} columns"
            )
        self.rows.append(tuple(float(v) for v in values))

    def last(self, column: str) -> float:
        if not self.rows:
            raise IndexError("trace is empty")
        return self.rows[-1][self.columns.index(column)]

    def column(self, column: str) -> list[float]:
        i = self.columns.index(column)
        return [row[i] for row in self.rows]

    def __len__(self) -> int:
        return len(self.rows)
