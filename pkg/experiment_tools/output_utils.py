import json
import os
from datetime import datetime, timezone
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

import mlflow

from . import __version__

FLOAT_FORMAT = "%.17g"


class OutputRecorder:
    """Collects every file a command writes so the manifest can list them all."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.paths: List[str] = []
        self.metrics: Dict[str, float] = {}
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def register(self, path: str) -> str:
        if path not in self.paths:
            self.paths.append(path)
        return path

    def write_csv(self, frame: pd.DataFrame, name: str) -> str:
        return self.register(to_csv(frame, self.path(name)))

    def write_json(self, payload: Dict, name: str) -> str:
        return self.register(to_json(payload, self.path(name)))

    def write_manifest(self, command: str, config: Dict, seed: Optional[int]) -> str:
        manifest = {
            "command": command,
            "config": config,
            "seed": seed,
            "output_paths": list(self.paths),
            "tool_version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        return to_json(manifest, self.path(f"{command}_manifest.json"))


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def to_csv(frame: pd.DataFrame, path: str) -> str:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    return path


def to_json(payload: Dict, path: str) -> str:
    with open(path, "w") as f:
        json.dump(_jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def flatten_config(config: Dict, prefix: str = "") -> Dict[str, object]:
    flat = {}
    for key, value in config.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_config(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def log_run_to_mlflow(
    experiment_name: str,
    command: str,
    config: Dict,
    metrics: Dict[str, float],
    artifacts: Iterable[str],
) -> str:
    mlflow.set_experiment(experiment_name)
    with mlflow.start_run(run_name=command) as run:
        ## Reproducibility: log every resolved setting, the seed included
        for key, value in flatten_config(config).items():
            mlflow.log_param(key, value)
        for key, value in metrics.items():
            mlflow.log_metric(key, float(value))
        for path in artifacts:
            mlflow.log_artifact(path)
        return run.info.run_id
