"""
Result rows, preset tables, run manifests and their CSV / JSON writers.

CSV files follow RFC 4180 (header row, CRLF line ends, ``.`` decimal
separator). Floats are written with ``repr`` so they round-trip exactly and
identical runs give byte-identical files. Missing metrics are empty cells.
"""
import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .errors import InvalidInputError, NumericalDivergenceError
from .host import git_revision, host_snapshot

logger = logging.getLogger(__name__)

ROW_COLUMNS = (
    'grid_point', 'algorithm', 'seed', 'round', 'loss', 'grad_norm_sq', 'consensus_error',
    'approx_error', 'accuracy', 'test_loss', 'test_accuracy', 'active_count', 'wallclock',
)
OPTIONAL_COLUMNS = ('approx_error', 'accuracy', 'test_loss', 'test_accuracy')


@dataclass
class ResultRow:
    grid_point: int
    algorithm: str
    seed: int
    round: int
    loss: float
    grad_norm_sq: float
    consensus_error: float
    approx_error: Optional[float]
    accuracy: Optional[float]
    test_loss: Optional[float]
    test_accuracy: Optional[float]
    active_count: int
    wallclock: float

    @classmethod
    def from_record(cls, record, algorithm: str, seed: int, grid_point: int = 0) -> "ResultRow":
        return cls(
            grid_point=grid_point, algorithm=algorithm, seed=seed, round=record.round,
            loss=record.loss, grad_norm_sq=record.grad_norm_sq, consensus_error=record.consensus_error,
            approx_error=record.approx_error, accuracy=record.accuracy, test_loss=record.test_loss,
            test_accuracy=record.test_accuracy, active_count=record.active_count, wallclock=record.wallclock,
        )

    def check(self) -> None:
        for name in ROW_COLUMNS:
            value = getattr(self, name)
            if value is None:
                if name not in OPTIONAL_COLUMNS:
                    raise InvalidInputError(f"result column '{name}' is missing")
            elif isinstance(value, float) and not math.isfinite(value):
                raise NumericalDivergenceError(f"non-finite '{name}' in {self.algorithm} seed {self.seed}",
                                               self.round)


def _cell(value) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _check_order(rows: Sequence[ResultRow]) -> None:
    last: Dict[Tuple, int] = {}
    for row in rows:
        key = (row.grid_point, row.algorithm, row.seed)
        if key in last and row.round <= last[key]:
            raise InvalidInputError(f"rounds not strictly increasing for {key}")
        last[key] = row.round


def rows_to_csv(rows: Sequence[ResultRow]) -> str:
    _check_order(rows)
    buffer = io.StringIO(newline='')
    writer = csv.writer(buffer)
    writer.writerow(ROW_COLUMNS)
    for row in rows:
        row.check()
        writer.writerow([_cell(getattr(row, name)) for name in ROW_COLUMNS])
    return buffer.getvalue()


def write_rows(rows: Sequence[ResultRow], path, fmt: str = 'csv') -> Path:
    """Write result rows as CSV or as a JSON list of objects"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == 'csv':
        with path.open('w', encoding='utf-8', newline='') as f:
            f.write(rows_to_csv(rows))
    elif fmt == 'json':
        _check_order(rows)
        for row in rows:
            row.check()
        path.write_text(json.dumps([asdict(r) for r in rows], indent=2), encoding='utf-8')
    else:
        raise InvalidInputError(f"unknown output format '{fmt}'")
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def read_rows(path) -> List[ResultRow]:
    """Parse a CSV written by ``write_rows``"""
    rows = []
    with Path(path).open('r', encoding='utf-8', newline='') as f:
        for raw in csv.DictReader(f):
            values = {}
            for name in ROW_COLUMNS:
                cell = raw[name]
                if cell == '':
                    values[name] = None
                elif name == 'algorithm':
                    values[name] = cell
                elif name in ('grid_point', 'seed', 'round', 'active_count'):
                    values[name] = int(cell)
                else:
                    values[name] = float(cell)
            rows.append(ResultRow(**values))
    return rows


def summarize(values: Iterable[float]) -> Tuple[float, float]:
    """(mean, sample standard deviation with ddof=1); std is 0 for a single value"""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise InvalidInputError("cannot summarize an empty sequence")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def tail_mean(values: Sequence[float], last: int = 50) -> float:
    """Mean over the final ``last`` entries (all of them if fewer)"""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInputError("no values to average")
    return float(arr[-last:].mean())


@dataclass
class PresetTable:
    """Tabular output of a preset plus the named property checks it evaluated"""
    name: str
    columns: List[str]
    rows: List[dict] = field(default_factory=list)
    checks: Dict[str, bool] = field(default_factory=dict)

    def add(self, **values) -> None:
        missing = set(self.columns) - set(values)
        if missing:
            raise InvalidInputError(f"{self.name}: row lacks columns {sorted(missing)}")
        self.rows.append({c: values[c] for c in self.columns})

    def column(self, name: str) -> list:
        return [row[name] for row in self.rows]

    def where(self, **match) -> List[dict]:
        return [row for row in self.rows if all(row[k] == v for k, v in match.items())]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def write_table(table: PresetTable, path, fmt: str = 'csv') -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == 'csv':
        with path.open('w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(table.columns)
            for row in table.rows:
                writer.writerow([_cell(row[c]) for c in table.columns])
    elif fmt == 'json':
        payload = {'name': table.name, 'columns': table.columns, 'rows': table.rows, 'checks': table.checks}
        path.write_text(json.dumps(payload, indent=2), encoding='utf-8')
    else:
        raise InvalidInputError(f"unknown output format '{fmt}'")
    logger.info(f"Wrote preset table '{table.name}' ({len(table.rows)} rows) to {path}")
    return path


@dataclass
class RunManifest:
    """Everything needed to reproduce an output directory"""
    name: str
    command: str
    seeds: List[int]
    config: dict
    version: str = __version__
    git_revision: str = 'unknown'
    host: dict = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    created: str = ''

    @classmethod
    def create(cls, name: str, command: str, seeds: Sequence[int], config: dict,
               outputs: Sequence[str] = ()) -> "RunManifest":
        return cls(
            name=name, command=command, seeds=[int(s) for s in seeds], config=config,
            git_revision=git_revision(), host=host_snapshot(), outputs=list(outputs),
            created=datetime.now().strftime('%Y-%m-%d %H:%M:%S'),
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


def write_manifest(manifest: RunManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.to_json(), encoding='utf-8')
    return path


def read_manifest(path) -> RunManifest:
    return RunManifest.from_json(Path(path).read_text(encoding='utf-8'))
