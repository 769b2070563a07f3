"""
Artifact Store Service
Writes run artifacts (constants, net, words, bundles, funnels, distances,
study tables) as CSV and JSON into an output directory, keeps a checksummed
inventory for the manifest and loads the CSV files back
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from app.core.control_grid import ControlWord
from app.core.errors import FunnelKitError, InputValidationError
from app.core.sphere_net import SigmaNet
from app.services.funnel_assembly import FunnelCloud, TrajectoryBundle

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"      # Shortest format that round-trips every double
WORD_CHUNK = 100_000


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        # JSON has no inf/nan
        return value if np.isfinite(value) else str(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def dump_json(payload: Dict[str, Any]) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def state_columns(n: int) -> List[str]:
    return [f"x{k + 1}" for k in range(n)]


class ArtifactStore:
    """
    Output directory of one run; every written file is recorded so the
    manifest can list it with its checksum
    """

    def __init__(self, out_dir: str):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.files: Dict[str, Dict[str, Any]] = {}

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _record(self, name: str, rows: Optional[int] = None) -> Path:
        path = self.path(name)
        self.files[name] = {"rows": rows, "sha256": file_sha256(path)}
        logger.debug(f"Wrote {path}")
        return path

    def _write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        frame.to_csv(self.path(name), index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return self._record(name, rows=len(frame))

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        self.path(name).write_text(dump_json(payload), encoding="utf-8")
        return self._record(name)

    def write_constants(self, payload: Dict[str, Any]) -> Path:
        return self.write_json("constants.json", payload)

    def write_net(self, net: SigmaNet) -> Path:
        frame = pd.DataFrame(net.points, columns=[f"b{k + 1}" for k in range(net.m)])
        return self._write_frame("net.csv", frame)

    def write_words(self, words: Iterable[ControlWord]) -> Path:
        """Long format: one row (word_index, i, j, l) per word and interval, written in chunks"""
        path = self.path("words.csv")
        rows: List[tuple] = []
        total = 0
        header = True
        with open(path, "w", encoding="utf-8", newline="") as f:
            for index, word in enumerate(words):
                for i, (j, l) in enumerate(zip(word.magnitude_indices, word.direction_indices)):
                    rows.append((index, i, j, l))
                if len(rows) >= WORD_CHUNK:
                    pd.DataFrame(rows, columns=["word_index", "i", "j", "l"]).to_csv(
                        f, index=False, header=header, lineterminator="\n")
                    total += len(rows)
                    rows, header = [], False
            if rows or header:
                pd.DataFrame(rows, columns=["word_index", "i", "j", "l"]).to_csv(
                    f, index=False, header=header, lineterminator="\n")
                total += len(rows)
        return self._record("words.csv", rows=total)

    def write_bundle(self, bundle: TrajectoryBundle, name: str = "bundle.csv") -> Path:
        width, samples, n = bundle.states.shape
        frame = pd.DataFrame(bundle.states.reshape(width * samples, n), columns=state_columns(n))
        frame.insert(0, "t", np.tile(bundle.times, width))
        frame.insert(0, "word_index", np.repeat(np.arange(width), samples))
        return self._write_frame(name, frame)

    def write_funnel(self, cloud: FunnelCloud, name: str = "funnel.csv") -> Path:
        points = cloud.points()
        frame = pd.DataFrame(points[:, 1:], columns=state_columns(points.shape[1] - 1))
        frame.insert(0, "t", points[:, 0])
        frame.insert(0, "i", cloud.indices())
        return self._write_frame(name, frame)

    def write_distances(self, reports: Dict[str, Any], name: str = "distance.csv") -> Path:
        frame = pd.DataFrame(
            [{"metric": metric, "directed_ab": r.directed_ab, "directed_ba": r.directed_ba,
              "hausdorff": r.hausdorff} for metric, r in reports.items()],
            columns=["metric", "directed_ab", "directed_ba", "hausdorff"],
        )
        return self._write_frame(name, frame)

    def write_study(self, frame: pd.DataFrame, name: str = "study.csv") -> Path:
        return self._write_frame(name, frame)

    def write_error(self, error: FunnelKitError) -> Path:
        return self.write_json("error.json", error.to_record())

    def write_manifest(self, config: Dict[str, Any], counts: Dict[str, Any]) -> Path:
        payload = {
            "config": config,
            "counts": counts,
            "files": {name: self.files[name] for name in sorted(self.files)},
        }
        path = self.path("manifest.json")
        path.write_text(dump_json(payload), encoding="utf-8")
        logger.info(f"✅ Wrote manifest with {len(self.files)} artifact(s) to {self.out_dir}")
        return path


def _read_csv(path: str, required: List[str]) -> pd.DataFrame:
    if not Path(path).exists():
        raise InputValidationError(f"Artifact {path} does not exist", path=str(path))
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise InputValidationError(f"Artifact {path} lacks columns {missing}", path=str(path))
    return frame


def load_net(path: str, sigma: float, certified_radius: Optional[float] = None) -> SigmaNet:
    frame = _read_csv(path, [])
    return SigmaNet(m=frame.shape[1], sigma=sigma, points=frame.to_numpy(dtype=float),
                    certified_radius=certified_radius)


def load_words(path: str) -> List[ControlWord]:
    frame = _read_csv(path, ["word_index", "i", "j", "l"])
    words = []
    for _, group in frame.groupby("word_index", sort=True):
        group = group.sort_values("i")
        words.append(ControlWord(tuple(group["j"]), tuple(group["l"])))
    return words


def load_states(path: str, index_column: str = "word_index") -> Dict[int, np.ndarray]:
    """Bundle or funnel CSV grouped by its index column into (t, x1..xn) arrays"""
    frame = _read_csv(path, [index_column, "t"])
    columns = ["t"] + [c for c in frame.columns if c.startswith("x")]
    return {int(key): group[columns].to_numpy(dtype=float)
            for key, group in frame.groupby(index_column, sort=True)}


def load_funnel(path: str) -> FunnelCloud:
    groups = load_states(path, index_column="i")
    keys = sorted(groups)
    return FunnelCloud(times=np.array([groups[k][0, 0] for k in keys]),
                       slices=[groups[k][:, 1:] for k in keys])


def load_table(path: str) -> pd.DataFrame:
    return _read_csv(path, [])
