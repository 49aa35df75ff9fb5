"""
Legacy ASCII VTK and CSV writers for meshes, fields and run histories.
"""
import csv
import logging
import os
from typing import Dict, List, Mapping, Optional

import numpy as np

from mesh import Mesh
from models import EstimatorReport, ExportError, IterationLog, RunReport

logger = logging.getLogger(__name__)

VTK_TRIANGLE = 5
HISTORY_COLUMNS = ['round', 'ndofs', 'eta_total', 'p_max', 'p_min', 'iterations', 'n_elements']
INTEGER_COLUMNS = {'round', 'ndofs', 'iterations', 'n_elements', 'element_id', 'iter', 'active_points'}


def _prepare(path: str) -> str:
    path = os.path.abspath(os.path.expanduser(os.fspath(path)))
    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise ExportError(f"Cannot create directory for {path}: {e}", path=path)
    return path


def _number(value) -> str:
    # repr round-trips doubles exactly
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def write_vtk(path: str, mesh: Mesh, point_data: Optional[Mapping[str, np.ndarray]] = None,
              cell_data: Optional[Mapping[str, np.ndarray]] = None, title: str = "cavitation solution") -> str:
    """Unstructured grid of triangles with per-vertex and per-cell scalars"""
    path = _prepare(path)
    point_data = dict(point_data or {})
    cell_data = dict(cell_data or {})
    for name, values in point_data.items():
        if len(values) != mesh.n_vertices:
            raise ExportError(f"Point field '{name}' has {len(values)} values for {mesh.n_vertices} vertices", path)
    for name, values in cell_data.items():
        if len(values) != mesh.n_triangles:
            raise ExportError(f"Cell field '{name}' has {len(values)} values for {mesh.n_triangles} cells", path)

    try:
        with open(path, 'w') as fp:
            fp.write('# vtk DataFile Version 2.0\n')
            fp.write(f'{title}\n')
            fp.write('ASCII\nDATASET UNSTRUCTURED_GRID\n')
            fp.write(f'POINTS {mesh.n_vertices} double\n')
            for x, y in mesh.vertices:
                fp.write(f'{x!r} {y!r} 0.0\n')
            fp.write(f'CELLS {mesh.n_triangles} {4 * mesh.n_triangles}\n')
            for a, b, c in mesh.triangles:
                fp.write(f'3 {a} {b} {c}\n')
            fp.write(f'CELL_TYPES {mesh.n_triangles}\n')
            fp.write(f'{VTK_TRIANGLE}\n' * mesh.n_triangles)
            if point_data:
                fp.write(f'POINT_DATA {mesh.n_vertices}\n')
                for name, values in point_data.items():
                    _write_scalars(fp, name, values)
            if cell_data:
                fp.write(f'CELL_DATA {mesh.n_triangles}\n')
                for name, values in cell_data.items():
                    _write_scalars(fp, name, values)
    except OSError as e:
        raise ExportError(f"Failed to write VTK file {path}: {e}", path=path)
    logger.info(f"Wrote VTK file {path}")
    return path


def _write_scalars(fp, name: str, values):
    fp.write(f'SCALARS {name} double 1\nLOOKUP_TABLE default\n')
    for value in values:
        fp.write(f'{float(value)!r}\n')


def read_vtk_scalars(path: str, name: str) -> np.ndarray:
    """Values of one SCALARS block of a legacy VTK file written by write_vtk"""
    try:
        with open(path) as fp:
            lines = fp.read().splitlines()
    except OSError as e:
        raise ExportError(f"Failed to read VTK file {path}: {e}", path=path)
    counts = {}
    section = None
    for i, line in enumerate(lines):
        if line.startswith('POINT_DATA') or line.startswith('CELL_DATA'):
            section = int(line.split()[1])
        if line.startswith(f'SCALARS {name} ') and section is not None:
            counts[name] = (i + 2, section)
    if name not in counts:
        raise ExportError(f"No scalar field '{name}' in {path}", path=path)
    start, n = counts[name]
    return np.array([float(v) for v in lines[start:start + n]])


def _write_rows(path: str, columns: List[str], rows: List[Dict], comments: Optional[List[str]] = None) -> str:
    path = _prepare(path)
    try:
        with open(path, 'w', newline='') as fp:
            for comment in comments or []:
                fp.write(f'# {comment}\n')
            writer = csv.writer(fp)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_number(row[c]) for c in columns])
    except OSError as e:
        raise ExportError(f"Failed to write CSV file {path}: {e}", path=path)
    return path


def read_csv_rows(path: str) -> List[Dict[str, object]]:
    """Rows of a CSV written by this module, with numeric columns parsed"""
    try:
        with open(path, newline='') as fp:
            lines = [line for line in fp if not line.startswith('#')]
    except OSError as e:
        raise ExportError(f"Failed to read CSV file {path}: {e}", path=path)
    rows = []
    for row in csv.DictReader(lines):
        parsed = {}
        for key, value in row.items():
            if key in INTEGER_COLUMNS:
                parsed[key] = int(value)
            else:
                try:
                    parsed[key] = float(value)
                except ValueError:
                    parsed[key] = value
        rows.append(parsed)
    return rows


def write_history_csv(report: RunReport, path: str) -> str:
    comments = [f"{key}={value}" for key, value in sorted(report.metadata.items())]
    rows = [r.to_dict() for r in report.rounds]
    return _write_rows(path, HISTORY_COLUMNS, rows, comments)


def write_estimator_csv(report: EstimatorReport, path: str) -> str:
    eta = report.eta
    rows = [{'element_id': k, 'term1': report.residual[k], 'term2': report.edge[k],
             'term3': report.violation[k], 'term4': report.complementarity[k], 'eta_K': eta[k]}
            for k in range(report.n_elements)]
    comments = [f"ndofs={report.ndofs}", f"total={report.total!r}", f"method={report.method}"]
    return _write_rows(path, ['element_id', 'term1', 'term2', 'term3', 'term4', 'eta_K'], rows, comments)


def write_iteration_csv(log: IterationLog, path: str) -> str:
    rows = [{'iter': r.iteration, 'increment_norm': r.increment_norm,
             'active_points': r.active_points, 'linres': r.linear_residual} for r in log.records]
    return _write_rows(path, ['iter', 'increment_norm', 'active_points', 'linres'], rows)


def write_summary_csv(rows: List[Dict], path: str) -> str:
    columns = list(rows[0].keys()) if rows else ['parameter', 'value']
    return _write_rows(path, columns, rows)
