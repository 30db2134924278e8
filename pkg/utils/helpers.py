import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger('symnet')

LOG_FORMAT = '%(levelname)s %(name)s: %(message)s'


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    return str(value)


class LoggingUtils:
    """Utility class for logging operations"""

    _configured = False

    @classmethod
    def configure(cls, level: str = 'INFO') -> None:
        """Install the root handler once; later calls only change the level"""
        numeric = getattr(logging, str(level).upper(), None)
        if not isinstance(numeric, int):
            raise ValueError(f"unknown log level {level!r}")
        root = logging.getLogger()
        if not cls._configured:
            handler = logging.StreamHandler()
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            root.addHandler(handler)
            cls._configured = True
        root.setLevel(numeric)

    @staticmethod
    def log_stage_action(stage_name: str, action: str, details: Optional[Dict[str, Any]] = None) -> None:
        """Structured record of a stage action"""
        details = details or {}
        if details:
            logger.info("%s: %s %s", stage_name, action, json.dumps(details, sort_keys=True, default=_jsonable))
        else:
            logger.info("%s: %s", stage_name, action)

    @staticmethod
    def save_results(results: Dict[str, Any], filename) -> None:
        """Save results to a JSON file; key order is sorted so reruns are byte-identical"""
        path = Path(filename)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(results, f, indent=2, sort_keys=True, default=_jsonable)
            f.write('\n')
        logger.info("results saved to %s", path)


class ReportWriter:
    """Writes the per-command artifacts into one output directory"""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[str] = []

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.path(name)
        LoggingUtils.save_results(payload, path)
        self.written.append(name)
        return path

    def frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.path(name)
        frame.to_csv(path, index=False, float_format='%.9g', lineterminator='\n')
        self.written.append(name)
        return path

    def mark(self, name: str) -> Path:
        """Record a file written by someone else"""
        self.written.append(name)
        return self.path(name)

    def collect(self, suffix: str = '.json') -> Dict[str, Any]:
        """Every JSON report already in the directory, keyed by file stem"""
        reports = {}
        for path in sorted(self.out_dir.glob(f'*{suffix}')):
            with open(path) as fh:
                try:
                    reports[path.stem] = json.load(fh)
                except json.JSONDecodeError:
                    logger.warning("skipping unreadable report %s", path)
        return reports


class DataValidator:
    """Utility class for data validation"""

    @staticmethod
    def validate_trajectory(frame: pd.DataFrame, safe_set, output_maps: Sequence[np.ndarray],
                            initial_modes: Sequence[int], red_limit: Optional[int] = None,
                            red_mode: int = 1) -> Dict[str, Any]:
        """
        Check a closed-loop log against the safe output set and a red-run limit.
        Red runs are counted over the modes in force during each step, i.e. the
        initial modes followed by every logged mode except the last.
        """
        outside = []
        peak = 0.0
        longest = 0
        for i, C1 in enumerate(output_maps):
            cols = [c for c in frame.columns if c.startswith(f'x_{i + 1}_')]
            states = frame[cols].to_numpy(dtype=float)
            if len(states):
                peak = max(peak, float(np.abs(states).max()))
                inside = safe_set.contains(states @ np.atleast_2d(C1).T, tol=1e-9)
                outside += [int(t) for t in frame['time'].to_numpy()[~inside]]

            applied = [initial_modes[i]] + frame[f'mode_{i + 1}'].tolist()[:-1] if len(frame) else []
            run = 0
            for p in applied:
                run = run + 1 if p == red_mode else 0
                longest = max(longest, run)
        fair = red_limit is None or longest <= red_limit
        return {
            'is_valid': not outside and fair,
            'is_safe': not outside,
            'unsafe_times': sorted(set(outside)),
            'peak_state': peak,
            'longest_red_run': longest,
            'total_records': len(frame),
        }
