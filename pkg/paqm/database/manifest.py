import logging
from pathlib import Path
from typing import Union

import pandas as pd

from paqm.core.exceptions import AudioIOError, ConfigError
from paqm.core.utils import atomic_write_text
from paqm.database.schemas import DbManifest, ManifestRow

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ["item_id", "condition", "ref_path", "sut_path", "mushra_mean"]
OPTIONAL_COLUMNS = ["mushra_ci95"]


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def load_manifest(path: Union[str, Path], check_files: bool = True) -> DbManifest:
    """Read and validate a listening-test manifest CSV"""
    path = Path(path)
    if not path.is_file():
        raise AudioIOError(f"Manifest not found: {path}")
    try:
        frame = pd.read_csv(
            path,
            sep=",",
            decimal=".",
            encoding="utf-8",
            dtype={"item_id": str, "condition": str, "ref_path": str, "sut_path": str},
            keep_default_na=False,
            na_values={"mushra_mean": [""], "mushra_ci95": [""]},
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError, ValueError) as e:
        raise ConfigError(f"Malformed manifest {path}: {e}") from e

    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    unknown = [c for c in frame.columns if c not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
    if missing or unknown:
        raise ConfigError(
            f"Manifest {path} header must be {','.join(REQUIRED_COLUMNS)}[,mushra_ci95]; "
            f"missing {missing}, unexpected {unknown}"
        )

    duplicated = frame.duplicated(subset=["item_id", "condition"], keep="first")
    if duplicated.any():
        line = int(duplicated.idxmax()) + 2
        row = frame.loc[duplicated.idxmax()]
        raise ConfigError(f"{path}:{line}: duplicate item/condition ({row.item_id}, {row.condition})")

    base = path.parent
    rows = []
    for index, record in enumerate(frame.to_dict(orient="records")):
        line = index + 2
        try:
            score = float(record["mushra_mean"])
            ci95 = record.get("mushra_ci95")
            ci95 = None if ci95 is None or pd.isna(ci95) else float(ci95)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{path}:{line}: non-numeric score ({e})") from e
        if not 0.0 <= score <= 100.0:
            raise ConfigError(f"{path}:{line}: mushra_mean {score} outside [0, 100]")

        ref_path = _resolve(base, record["ref_path"])
        sut_path = _resolve(base, record["sut_path"])
        if check_files:
            for audio in (ref_path, sut_path):
                if not audio.is_file():
                    raise AudioIOError(f"{path}:{line}: audio file not found: {audio}")

        rows.append(ManifestRow(
            item_id=record["item_id"],
            condition=record["condition"],
            ref_path=str(ref_path),
            sut_path=str(sut_path),
            mushra_mean=score,
            mushra_ci95=ci95,
        ))

    logger.info(f"Loaded manifest {path} with {len(rows)} rows")
    return DbManifest(source=str(path), rows=rows)


def write_manifest(manifest: DbManifest, path: Union[str, Path], relative_to: Union[str, Path, None] = None) -> Path:
    """Write a manifest CSV; audio paths are stored relative to `relative_to` when given"""
    records = []
    for row in manifest.rows:
        record = row.model_dump()
        if relative_to is not None:
            for key in ("ref_path", "sut_path"):
                record[key] = str(Path(record[key]).relative_to(relative_to))
        records.append(record)
    columns = REQUIRED_COLUMNS + OPTIONAL_COLUMNS
    frame = pd.DataFrame(records, columns=columns)
    if frame["mushra_ci95"].isna().all():
        frame = frame.drop(columns=OPTIONAL_COLUMNS)
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))
