'''
File holding the metrics report of one experiment and its CSV / JSON emission.
'''
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from fs_access import atomic_write_text
from uni_chars import *

CSV_COLUMNS = ['defense', 'attack', 'n', 'm', 'partition', 'rounds', 'ER', 'SR', 'TC_seconds', 'seed']
TIMING_FIELDS = ('tc_seconds', 'defense_seconds')


class MetricsReport:
    '''
    Error rate, success rate and time consumption of one run, with the per-round series behind them.

    :param er: Final test error.
    :param sr: Successful rounds over attacked rounds, 0 when nothing was attacked.
    :param tc_seconds: Mean attack generation time of a single attacker.
    :param series: Per-round lists of equal length (test_error, attack_success, bias_delta, accepted, ...).
    :param config: Echo of the full experiment document.
    '''

    def __init__(self, defense: str, attack: str, n: int, m: int, partition: str, rounds: int, seed: int,
                 er: float, sr: float, tc_seconds: float, series: Dict[str, List[Any]], config: Dict[str, Any],
                 version: str, ma: Optional[float] = None, ta: Optional[float] = None) -> None:
        if not 0.0 <= sr <= 1.0:
            raise ValueError(f"{ERROR} Success rate {sr} outside [0, 1]")
        lengths = {key: len(values) for key, values in series.items()}
        if any(length != rounds for length in lengths.values()):
            raise ValueError(f"{ERROR} Series lengths {lengths} do not match {rounds} rounds")
        self.defense = defense
        self.attack = attack
        self.n = n
        self.m = m
        self.partition = partition
        self.rounds = rounds
        self.seed = seed
        self.er = float(er)
        self.sr = float(sr)
        self.tc_seconds = float(tc_seconds)
        self.series = series
        self.config = config
        self.version = version
        self.ma = ma
        self.ta = ta

    def to_dict(self) -> Dict[str, Any]:
        return {
            'version': self.version,
            'defense': self.defense,
            'attack': self.attack,
            'n': self.n,
            'm': self.m,
            'partition': self.partition,
            'rounds': self.rounds,
            'seed': self.seed,
            'ER': self.er,
            'SR': self.sr,
            'TC_seconds': self.tc_seconds,
            'MA': self.ma,
            'TA': self.ta,
            'series': self.series,
            'config': self.config,
        }

    def deterministic_view(self) -> Dict[str, Any]:
        '''
        The report without wall-clock measurements, identical for identical seeds.
        '''
        view = self.to_dict()
        view.pop('TC_seconds')
        view['series'] = {key: values for key, values in self.series.items() if key not in TIMING_FIELDS}
        return view

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> MetricsReport:
        return MetricsReport(data['defense'], data['attack'], data['n'], data['m'], data['partition'],
                             data['rounds'], data['seed'], data['ER'], data['SR'], data['TC_seconds'],
                             data['series'], data['config'], data['version'], data.get('MA'), data.get('TA'))

    def csv_row(self) -> Dict[str, Any]:
        return {'defense': self.defense, 'attack': self.attack, 'n': self.n, 'm': self.m,
                'partition': self.partition, 'rounds': self.rounds, 'ER': repr(self.er), 'SR': repr(self.sr),
                'TC_seconds': repr(self.tc_seconds), 'seed': self.seed}

    def __str__(self) -> str:
        return (f"MetricsReport({self.defense} vs {self.attack}: ER={self.er:.4f}, SR={self.sr:.2f}, "
                f"TC={self.tc_seconds:.6f}s)")

    def __repr__(self) -> str:
        return self.__str__()


def render_csv(reports: Sequence[MetricsReport]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator='\n')
    writer.writeheader()
    for r in reports:
        writer.writerow(r.csv_row())
    return buffer.getvalue()


def render_json(reports: Sequence[MetricsReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"


def emit_report(reports: Sequence[MetricsReport], fmt: str, path: Union[str, Path]) -> Path:
    '''
    Writes the reports atomically, one CSV row or one JSON object per report.

    :param fmt: `csv` or `json`.
    '''
    if not reports:
        raise ValueError(f"{ERROR} Nothing to report")
    if fmt == 'csv':
        content = render_csv(reports)
    elif fmt == 'json':
        content = render_json(reports)
    else:
        raise ValueError(f"{ERROR} Unknown report format '{fmt}'")
    return atomic_write_text(path, content)


def load_reports(path: Union[str, Path]) -> List[MetricsReport]:
    '''
    Reads reports back from a JSON report file, a single report object is accepted as well.
    '''
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{ERROR} Path {path} does not exist!")
    data = json.loads(path.read_text(encoding='utf-8'))
    if isinstance(data, dict):
        data = [data]
    return [MetricsReport.from_dict(d) for d in data]
