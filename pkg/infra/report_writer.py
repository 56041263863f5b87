# infra/report_writer.py
import json
import os
from pathlib import Path

import numpy as np
import pandas as pd

from config import Config
from infra.utils import get_logger, utc_now_iso


class ReportWriter:
    """
    JSON / CSV 리포트 출력기.
    모든 JSON 리포트에는 schema_version 과 generated_at(UTC) 이 붙습니다.
    """

    SWEEP_COLUMNS = list(Config.SWEEP_CSV_COLUMNS)

    def __init__(self, base_dir=None):
        self.logger = get_logger("ReportWriter")
        self.base_dir = Path(base_dir or os.getcwd())

    def _resolve(self, path):
        target = Path(path)
        if not target.is_absolute():
            target = self.base_dir / target
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    @staticmethod
    def envelope(kind, payload):
        doc = {"schema_version": Config.SCHEMA_VERSION, "kind": kind, "generated_at": utc_now_iso()}
        doc.update(payload)
        return doc

    def write_json(self, kind, payload, path):
        target = self._resolve(path)
        with open(target, "w", encoding="utf-8") as f:
            json.dump(self.envelope(kind, payload), f, indent=2, default=_json_default)
        self.logger.info(f"📄 [{kind}] report -> {target}")
        return target

    def write_table(self, rows, path, columns=None):
        frame = pd.DataFrame(rows)
        if columns is not None:
            for column in columns:
                if column not in frame.columns:
                    frame[column] = np.nan
            frame = frame[columns]
        target = self._resolve(path)
        frame.to_csv(target, index=False, encoding="utf-8")
        self.logger.info(f"📄 table ({len(frame)} rows) -> {target}")
        return target

    def write_sweep_csv(self, sweep, path):
        return self.write_table([row.to_dict() for row in sweep.rows], path, self.SWEEP_COLUMNS)

    def write_summary_csv(self, summary: pd.DataFrame, path):
        target = self._resolve(path)
        summary.to_csv(target, index_label="metric", encoding="utf-8")
        return target


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")
