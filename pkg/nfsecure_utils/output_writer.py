# Output Writer Module
import logging
import os
import numpy as np
import pandas as pd
import toml
from typing import Any, Dict, List, Optional, Sequence

from .benders_decomposition import Design
from .data_validation import DataValidationError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.12g'
DESIGN_COLUMNS = ['mode', 'status', 'method', 'power_w', 'served', 'schedule', 'planned_trace',
                  'gamma1', 'gamma2', 'seed']


def _gamma_text(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        if not value:
            return "none"
        return f"{_gamma_text(min(value))}-{_gamma_text(max(value))}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6g}"


def output_filename(mode: str, seed: int, gamma1: Any, gamma2: Any, kind: str = "") -> str:
    """<mode>[_<kind>]_seed<seed>_g1-<gamma1>_g2-<gamma2>.csv"""
    stem = mode if not kind else f"{mode}_{kind}"
    return f"{stem}_seed{seed}_g1-{_gamma_text(gamma1)}_g2-{_gamma_text(gamma2)}.csv"


def write_frame(frame: pd.DataFrame, path: str, index: bool = False) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=index, float_format=FLOAT_FORMAT, lineterminator='\n')
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def beampattern_frame(grid: np.ndarray, angles_deg: Sequence[float], distances_m: Sequence[float]) -> pd.DataFrame:
    """Grid as a table: header row of angles in degrees, first column of distances in meters"""
    grid = np.asarray(grid, dtype=float)
    angles_deg = np.asarray(angles_deg, dtype=float)
    distances_m = np.asarray(distances_m, dtype=float)
    if grid.shape != (distances_m.size, angles_deg.size):
        raise DataValidationError(
            f"beampattern grid has shape {grid.shape}, expected ({distances_m.size}, {angles_deg.size})"
        )
    frame = pd.DataFrame(grid, columns=[FLOAT_FORMAT % a for a in angles_deg])
    frame.insert(0, 'distance_m\\angle_deg', distances_m)
    return frame


def design_frame(design: Design, mode: str, gamma1: int, gamma2: float, seed: int) -> pd.DataFrame:
    row = {
        'mode': mode,
        'status': design.status,
        'method': design.method,
        'power_w': design.objective if design.feasible else float("nan"),
        'served': design.served,
        'schedule': "".join(str(int(b)) for b in design.schedule) if design.feasible else "",
        'planned_trace': design.diagnostics.get('planned_trace', float("nan")),
        'gamma1': gamma1,
        'gamma2': gamma2,
        'seed': seed,
    }
    return pd.DataFrame([row], columns=DESIGN_COLUMNS)


def write_summary(summary: Dict[str, Any], path: str) -> str:
    """Scalar metrics as a TOML table"""
    clean = {}
    for key, value in summary.items():
        if isinstance(value, (np.floating, np.integer)):
            value = value.item()
        elif isinstance(value, np.ndarray):
            value = value.tolist()
        clean[key] = value
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        toml.dump({'summary': clean}, f)
    return path


class OutputWriter:
    """Names and writes every table a run produces into one directory"""

    def __init__(self, out_dir: str, mode: str, seed: int, gamma1: Any, gamma2: Any):
        self.out_dir = out_dir
        self.mode = mode
        self.seed = seed
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.written: List[str] = []

    def path(self, kind: str = "") -> str:
        return os.path.join(self.out_dir, output_filename(self.mode, self.seed, self.gamma1, self.gamma2, kind))

    def table(self, frame: pd.DataFrame, kind: str = "") -> str:
        path = write_frame(frame, self.path(kind))
        self.written.append(path)
        return path

    def grid(self, grid: np.ndarray, angles_deg: Sequence[float], distances_m: Sequence[float], kind: str) -> str:
        return self.table(beampattern_frame(grid, angles_deg, distances_m), kind)

    def summary(self, summary: Dict[str, Any], kind: str = "summary") -> str:
        path = self.path(kind)[:-len('.csv')] + '.toml'
        write_summary(summary, path)
        self.written.append(path)
        return path


# Convenience functions
def write_outputs(tables: Dict[str, pd.DataFrame], out_dir: str, mode: str, seed: int, gamma1: Any, gamma2: Any,
                  summary: Optional[Dict[str, Any]] = None) -> List[str]:
    """Write each table as <mode>_<kind>_seed..csv; the empty kind gives the main table"""
    writer = OutputWriter(out_dir, mode, seed, gamma1, gamma2)
    for kind, frame in tables.items():
        writer.table(frame, kind)
    if summary is not None:
        writer.summary(summary)
    return writer.written
