"""Alphabet grid: the label <-> (row, column) bijection behind the auxiliary tasks."""

from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
from pathlib import Path
import re

from fidel_mtl.errors import GridFormatError, GridLookupError, GridValidationError


DEFAULT_GRID_PATH = Path(__file__).resolve().parent / "default_grid.csv"
DIRECTIVE_RE = re.compile(r"^#\s*grid:\s*(?P<body>.*)$")


@dataclass(frozen=True)
class GridEntry:
    label: int
    row: int
    col: int
    glyph: str = ""


@dataclass
class AlphabetGrid:
    num_labels: int
    num_rows: int
    num_cols: int
    entries: list[GridEntry]
    _by_label: dict[int, GridEntry] = field(init=False, repr=False)
    _by_cell: dict[tuple[int, int], GridEntry] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._by_label = {}
        self._by_cell = {}
        for entry in self.entries:
            self._by_label.setdefault(entry.label, entry)
            self._by_cell.setdefault((entry.row, entry.col), entry)

    @property
    def head_sizes(self) -> tuple[int, int, int]:
        return (self.num_labels, self.num_rows, self.num_cols)

    def glyph_name(self, label: int) -> str:
        return self._entry(label).glyph

    def _entry(self, label: int) -> GridEntry:
        if not 1 <= label <= self.num_labels or label not in self._by_label:
            raise GridLookupError(f"label {label} out of range 1..{self.num_labels}")
        return self._by_label[label]

    def digest(self) -> str:
        canonical = "\n".join(
            f"{entry.label},{entry.row},{entry.col},{entry.glyph}"
            for entry in sorted(self.entries, key=lambda item: item.label)
        )
        header = f"{self.num_labels},{self.num_rows},{self.num_cols}\n"
        return hashlib.sha256((header + canonical).encode("utf-8")).hexdigest()


def label_to_grid(grid: AlphabetGrid, label: int) -> tuple[int, int]:
    entry = grid._entry(label)
    return entry.row, entry.col


def grid_to_label(grid: AlphabetGrid, row: int, col: int) -> int | None:
    if not 1 <= row <= grid.num_rows or not 1 <= col <= grid.num_cols:
        raise GridLookupError(f"cell ({row},{col}) outside the {grid.num_rows}x{grid.num_cols} grid")
    entry = grid._by_cell.get((row, col))
    return entry.label if entry is not None else None


def validate_grid(grid: AlphabetGrid) -> list[str]:
    """Return every invariant violation, not just the first."""
    violations: list[str] = []
    seen_labels: set[int] = set()
    seen_cells: set[tuple[int, int]] = set()

    for entry in grid.entries:
        if not 1 <= entry.label <= grid.num_labels:
            violations.append(f"label out of range: {entry.label} (expected 1..{grid.num_labels})")
        elif entry.label in seen_labels:
            violations.append(f"duplicate label {entry.label}")
        seen_labels.add(entry.label)

        if not 1 <= entry.row <= grid.num_rows:
            violations.append(f"row out of range for label {entry.label}: {entry.row} (expected 1..{grid.num_rows})")
        if not 1 <= entry.col <= grid.num_cols:
            violations.append(f"col out of range for label {entry.label}: {entry.col} (expected 1..{grid.num_cols})")

        cell = (entry.row, entry.col)
        if cell in seen_cells:
            violations.append(f"duplicate cell ({entry.row},{entry.col})")
        seen_cells.add(cell)

    missing = sorted(set(range(1, grid.num_labels + 1)) - seen_labels)
    if missing:
        preview = ", ".join(str(label) for label in missing[:10])
        suffix = "..." if len(missing) > 10 else ""
        violations.append(f"missing labels: {preview}{suffix}")
    return violations


def _parse_directive(body: str, line_number: int) -> dict[str, int]:
    values: dict[str, int] = {}
    for token in body.split():
        key, sep, raw = token.partition("=")
        if not sep or key not in {"labels", "rows", "cols"}:
            raise GridFormatError(f"unknown grid directive '{token}'", line_number)
        try:
            values[key] = int(raw)
        except ValueError as exc:
            raise GridFormatError(f"grid directive '{token}' is not an integer", line_number) from exc
    return values


def parse_grid(text: str) -> AlphabetGrid:
    """Parse ``label,row,col[,glyphName]`` lines without enforcing invariants."""
    entries: list[GridEntry] = []
    declared: dict[str, int] = {}

    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip().lstrip("\ufeff")
        if not stripped:
            continue
        if stripped.startswith("#"):
            match = DIRECTIVE_RE.match(stripped)
            if match:
                declared.update(_parse_directive(match.group("body"), line_number))
            continue

        parts = [part.strip() for part in stripped.split(",")]
        if len(parts) not in (3, 4):
            raise GridFormatError(f"expected 'label,row,col[,glyphName]', got '{stripped}'", line_number)
        try:
            label, row, col = (int(part) for part in parts[:3])
        except ValueError as exc:
            raise GridFormatError(f"label, row and col must be integers in '{stripped}'", line_number) from exc
        entries.append(GridEntry(label=label, row=row, col=col, glyph=parts[3] if len(parts) == 4 else ""))

    return AlphabetGrid(
        num_labels=declared.get("labels", len(entries)),
        num_rows=declared.get("rows", max((entry.row for entry in entries), default=0)),
        num_cols=declared.get("cols", max((entry.col for entry in entries), default=0)),
        entries=entries,
    )


def load_grid(path: Path | None = None, strict: bool = True) -> AlphabetGrid:
    grid = parse_grid((path or DEFAULT_GRID_PATH).read_text(encoding="utf-8"))
    if strict:
        violations = validate_grid(grid)
        if violations:
            raise GridValidationError(violations)
    return grid


def load_default_grid() -> AlphabetGrid:
    return load_grid(DEFAULT_GRID_PATH)


def make_regular_grid(num_rows: int, num_cols: int) -> AlphabetGrid:
    """Fully occupied grid with label = (row - 1) * num_cols + col."""
    entries = [
        GridEntry(label=(row - 1) * num_cols + col, row=row, col=col, glyph=f"r{row}c{col}")
        for row in range(1, num_rows + 1)
        for col in range(1, num_cols + 1)
    ]
    return AlphabetGrid(num_labels=num_rows * num_cols, num_rows=num_rows, num_cols=num_cols, entries=entries)


def format_grid(grid: AlphabetGrid) -> str:
    lines = [
        "# label,row,col,glyphName",
        f"# grid: labels={grid.num_labels} rows={grid.num_rows} cols={grid.num_cols}",
    ]
    for entry in sorted(grid.entries, key=lambda item: item.label):
        lines.append(f"{entry.label},{entry.row},{entry.col},{entry.glyph}" if entry.glyph else f"{entry.label},{entry.row},{entry.col}")
    return "\n".join(lines) + "\n"


def write_grid(grid: AlphabetGrid, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_grid(grid), encoding="utf-8")
