import math

import pytest

from fedawe_sim.errors import InvalidInputError, NumericalDivergenceError
from fedawe_sim.results import (ROW_COLUMNS, PresetTable, ResultRow, RunManifest, read_manifest, read_rows,
                                rows_to_csv, summarize, tail_mean, write_manifest, write_rows, write_table)


def _row(round_index=0, loss=0.1, accuracy=None, seed=0):
    return ResultRow(grid_point=0, algorithm='fedawe', seed=seed, round=round_index, loss=loss,
                     grad_norm_sq=0.25, consensus_error=0.0, approx_error=None, accuracy=accuracy,
                     test_loss=None, test_accuracy=None, active_count=3, wallclock=0.0)


class TestCsv:

    def test_header_and_line_ends(self):
        text = rows_to_csv([_row()])
        lines = text.split('\r\n')
        assert lines[0] == ','.join(ROW_COLUMNS)
        assert lines[1] == '0,fedawe,0,0,0.1,0.25,0.0,,,,,3,0.0'

    def test_floats_are_exact(self, tmp_path):
        loss = 1.0 / 3.0
        path = write_rows([_row(loss=loss, accuracy=0.75)], tmp_path / 'rows.csv')
        (row,) = read_rows(path)
        assert row.loss == loss
        assert row.accuracy == 0.75
        assert row.approx_error is None
        assert row.algorithm == 'fedawe' and row.active_count == 3

    def test_non_finite_raises(self):
        with pytest.raises(NumericalDivergenceError) as err:
            rows_to_csv([_row(round_index=4, loss=math.nan)])
        assert err.value.round_index == 4

    def test_rounds_must_increase(self):
        with pytest.raises(InvalidInputError):
            rows_to_csv([_row(round_index=1), _row(round_index=1)])

    def test_rounds_tracked_per_seed(self):
        rows_to_csv([_row(round_index=0, seed=0), _row(round_index=0, seed=1), _row(round_index=1, seed=0)])

    def test_json_format(self, tmp_path):
        path = write_rows([_row(), _row(round_index=1)], tmp_path / 'rows.json', fmt='json')
        assert path.read_text(encoding='utf-8').lstrip().startswith('[')

    def test_unknown_format(self, tmp_path):
        with pytest.raises(InvalidInputError):
            write_rows([_row()], tmp_path / 'rows.xml', fmt='xml')


class TestSummaries:

    def test_summarize(self):
        assert summarize([1.0, 2.0, 3.0]) == pytest.approx((2.0, 1.0))

    def test_single_value_has_zero_spread(self):
        assert summarize([4.0]) == (4.0, 0.0)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            summarize([])

    def test_tail_mean(self):
        assert tail_mean(list(range(100)), last=10) == pytest.approx(94.5)
        assert tail_mean([2.0, 4.0], last=50) == pytest.approx(3.0)


class TestPresetTable:

    def test_rows_and_checks(self, tmp_path):
        table = PresetTable('demo', columns=['p', 'value'])
        table.add(p=0.1, value=1.5)
        table.add(p=0.2, value=2.5)
        table.checks['positive'] = True
        assert table.column('value') == [1.5, 2.5]
        assert table.where(p=0.2) == [{'p': 0.2, 'value': 2.5}]
        assert table.passed
        text = write_table(table, tmp_path / 'demo.csv').read_text(encoding='utf-8')
        assert text.splitlines()[0] == 'p,value'

    def test_missing_column(self):
        table = PresetTable('demo', columns=['p', 'value'])
        with pytest.raises(InvalidInputError):
            table.add(p=0.1)

    def test_failed_check(self):
        table = PresetTable('demo', columns=['p'], checks={'a': True, 'b': False})
        assert not table.passed


class TestManifest:

    def test_round_trip(self, tmp_path):
        manifest = RunManifest.create('demo', 'run --config x.json', [1, 2], {'m': 3}, outputs=['results.csv'])
        path = write_manifest(manifest, tmp_path / 'manifest.json')
        again = read_manifest(path)
        assert again == manifest
        assert again.seeds == [1, 2]
        assert again.created
