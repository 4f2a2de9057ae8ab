"""
CSV readers and writers for exchange records, corrected measurements and
position estimates.

One row per round. Per-anchor columns carry the anchor id as suffix
(t1_s3, t_tdoa_s4, ...); anchors absent from a round are empty cells.
"""
import logging
import math
import os
import re
from typing import Iterable, List, Sequence

import pandas as pd

from config_loader import get_config_value
from uwb_errors import MalformedRecordError, DATA_FILE_INVALID
from ranging_model import AnchorObservation, ExchangeRecord, ExchangeTruth
from corrections import AnchorTerms, CorrectedMeasurement
from position_solver import PositionEstimate, SolveMode

logger = logging.getLogger('RecordIO')

RECORD_COLUMNS = ['round_idx', 'ref_id', 'tag_id',
                  't1_r', 't2_r', 't3_r', 'p2_r',
                  't1_t', 't2_t', 't3_t', 'p1_t', 'p3_t']
ANCHOR_FIELDS = ['t1', 't2', 't3', 'p1', 'p2']
ESTIMATE_COLUMNS = ['round_idx', 'mode', 'x', 'y', 'residual_norm', 'iterations', 'converged',
                    'cov_xx', 'cov_xy', 'cov_yy']


def float_format() -> str:
    return f"%.{get_config_value('CSV_SIGNIFICANT_DIGITS', 15, int)}g"


def write_frame(df: pd.DataFrame, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df.to_csv(path, index=False, float_format=float_format())
    logger.info("Wrote %d rows to %s", len(df), path)


def read_frame(path: str, required: Sequence[str]) -> pd.DataFrame:
    if not os.path.exists(path):
        raise MalformedRecordError(DATA_FILE_INVALID, f"File not found: {path}", {'path': path})
    df = pd.read_csv(path)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise MalformedRecordError(DATA_FILE_INVALID, f"{path}: missing columns {missing}",
                                   {'path': path, 'columns': missing})
    return df


def _suffix_ids(columns: Iterable[str], prefix: str) -> List[int]:
    pattern = re.compile(rf'^{re.escape(prefix)}(\d+)$')
    return sorted(int(m.group(1)) for m in (pattern.match(c) for c in columns) if m)


def records_to_frame(records: Sequence[ExchangeRecord]) -> pd.DataFrame:
    anchor_ids = sorted({a.station_id for r in records for a in r.anchors})
    with_truth = any(r.truth is not None for r in records)
    columns = list(RECORD_COLUMNS)
    for i in anchor_ids:
        columns += [f'{f}_s{i}' for f in ANCHOR_FIELDS]
    if with_truth:
        columns += ['true_x', 'true_y']

    rows = []
    for r in records:
        row = {'round_idx': r.round_idx, 'ref_id': r.reference_id, 'tag_id': r.tag_id,
               't1_r': r.t1_r, 't2_r': r.t2_r, 't3_r': r.t3_r, 'p2_r': r.p2_r,
               't1_t': r.t1_t, 't2_t': r.t2_t, 't3_t': r.t3_t, 'p1_t': r.p1_t, 'p3_t': r.p3_t}
        for a in r.anchors:
            for f in ANCHOR_FIELDS:
                row[f'{f}_s{a.station_id}'] = getattr(a, f)
        if r.truth is not None:
            row['true_x'], row['true_y'] = r.truth.tag_position[0], r.truth.tag_position[1]
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)


def write_records(records: Sequence[ExchangeRecord], path: str) -> None:
    write_frame(records_to_frame(records), path)


def read_records(path: str) -> List[ExchangeRecord]:
    """
    Read an exchange-record CSV.

    An anchor is part of a row when any of its columns is filled; missing
    values of a present anchor stay NaN and fail that anchor's correction.
    """
    df = read_frame(path, RECORD_COLUMNS)
    anchor_ids = _suffix_ids(df.columns, 't1_s')
    records = []
    for row in df.itertuples(index=False):
        values = row._asdict()
        anchors = []
        for i in anchor_ids:
            fields = {f: float(values.get(f'{f}_s{i}', math.nan)) for f in ANCHOR_FIELDS}
            if all(math.isnan(v) for v in fields.values()):
                continue
            anchors.append(AnchorObservation(station_id=i, **fields))
        truth = None
        if 'true_x' in values and not math.isnan(values['true_x']):
            truth = ExchangeTruth(tag_position=(float(values['true_x']), float(values['true_y']), math.nan))
        records.append(ExchangeRecord(
            round_idx=int(values['round_idx']), reference_id=int(values['ref_id']), tag_id=int(values['tag_id']),
            t1_r=float(values['t1_r']), t2_r=float(values['t2_r']), t3_r=float(values['t3_r']),
            p2_r=float(values['p2_r']),
            t1_t=float(values['t1_t']), t2_t=float(values['t2_t']), t3_t=float(values['t3_t']),
            p1_t=float(values['p1_t']), p3_t=float(values['p3_t']),
            anchors=tuple(anchors), truth=truth))
    return records


def corrected_to_frame(corrected: Sequence[CorrectedMeasurement], diagnostics: bool = False) -> pd.DataFrame:
    anchor_ids = sorted({a for c in corrected for a in c.t_tdoa})
    columns = ['round_idx', 'ref_id', 't_toa'] + [f't_tdoa_s{i}' for i in anchor_ids]
    if diagnostics:
        columns += ['t_toa_two_message', 'c13_rt'] + [f'c13_s{i}' for i in anchor_ids] + ['e1', 'e2']
        for i in anchor_ids:
            columns += [f'e3_s{i}', f'e4_s{i}']
        columns += ['k']

    rows = []
    for c in corrected:
        row = {'round_idx': c.round_idx, 'ref_id': c.reference_id, 't_toa': c.t_toa}
        for i, t in c.t_tdoa.items():
            row[f't_tdoa_s{i}'] = t
        if diagnostics:
            row.update({'t_toa_two_message': c.t_toa_two_message, 'c13_rt': c.c13_rt,
                        'e1': c.e1, 'e2': c.e2, 'k': c.k})
            for i, terms in c.anchor_terms.items():
                row[f'c13_s{i}'] = terms.c13_s
                row[f'e3_s{i}'] = terms.e3
                row[f'e4_s{i}'] = terms.e4
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)


def write_corrected(corrected: Sequence[CorrectedMeasurement], path: str, diagnostics: bool = False) -> None:
    write_frame(corrected_to_frame(corrected, diagnostics), path)


def read_corrected(path: str) -> List[CorrectedMeasurement]:
    df = read_frame(path, ['round_idx', 'ref_id', 't_toa'])
    anchor_ids = _suffix_ids(df.columns, 't_tdoa_s')
    result = []
    for row in df.itertuples(index=False):
        values = row._asdict()
        t_tdoa = {i: float(values[f't_tdoa_s{i}']) for i in anchor_ids if not math.isnan(values[f't_tdoa_s{i}'])}
        anchor_terms = {}
        for i in t_tdoa:
            if f'c13_s{i}' in values:
                anchor_terms[i] = AnchorTerms(float(values[f'c13_s{i}']), float(values[f'e3_s{i}']),
                                              float(values[f'e4_s{i}']), math.nan)
        result.append(CorrectedMeasurement(
            round_idx=int(values['round_idx']),
            reference_id=int(values['ref_id']),
            t_toa=float(values['t_toa']),
            t_toa_two_message=float(values.get('t_toa_two_message', math.nan)),
            t_tdoa=t_tdoa,
            c13_rt=float(values.get('c13_rt', math.nan)),
            e1=float(values.get('e1', math.nan)),
            e2=float(values.get('e2', math.nan)),
            k=float(values.get('k', math.nan)),
            anchor_terms=anchor_terms,
        ))
    return result


def estimates_to_frame(estimates: Sequence[PositionEstimate]) -> pd.DataFrame:
    rows = [{'round_idx': e.round_idx, 'mode': e.mode.value,
             'x': e.position[0], 'y': e.position[1],
             'residual_norm': e.residual_norm, 'iterations': e.iterations, 'converged': e.converged,
             'cov_xx': e.covariance[0][0], 'cov_xy': e.covariance[0][1], 'cov_yy': e.covariance[1][1]}
            for e in estimates]
    return pd.DataFrame(rows, columns=ESTIMATE_COLUMNS)


def write_estimates(estimates: Sequence[PositionEstimate], path: str) -> None:
    write_frame(estimates_to_frame(estimates), path)


def read_estimates(path: str) -> List[PositionEstimate]:
    df = read_frame(path, ESTIMATE_COLUMNS)
    result = []
    for row in df.itertuples(index=False):
        try:
            mode = SolveMode(str(row.mode))
        except ValueError:
            raise MalformedRecordError(DATA_FILE_INVALID, f"{path}: unknown mode {row.mode!r}", {'path': path})
        result.append(PositionEstimate(
            position=(float(row.x), float(row.y)),
            residual_norm=float(row.residual_norm),
            iterations=int(row.iterations),
            converged=bool(row.converged),
            covariance=((float(row.cov_xx), float(row.cov_xy)), (float(row.cov_xy), float(row.cov_yy))),
            mode=mode,
            round_idx=int(row.round_idx),
        ))
    return result
