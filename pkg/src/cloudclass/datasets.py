"""CSV ingestion and export, and seeded synthetic blob datasets."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from cloudclass.errors import DatasetError

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"


@dataclass
class Dataset:
    rows: np.ndarray
    labels: Optional[list[str]]
    schema: list[str]

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if self.rows.size and self.rows.shape[1] != len(self.schema):
            raise DatasetError(
                f"Rows have {self.rows.shape[1]} features but the schema names "
                f"{len(self.schema)}"
            )
        if self.labels is not None and len(self.labels) != len(self.rows):
            raise DatasetError(
                f"{len(self.labels)} labels for {len(self.rows)} rows"
            )

    def __len__(self) -> int:
        return 0 if self.rows.size == 0 else self.rows.shape[0]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    @property
    def classes(self) -> list[str]:
        """Distinct labels in order of first appearance."""
        return list(dict.fromkeys(self.labels or []))

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = list(indices)
        return Dataset(
            rows=self.rows[idx].reshape(len(idx), len(self.schema)),
            labels=[self.labels[i] for i in idx] if self.labels is not None else None,
            schema=list(self.schema),
        )


@dataclass(frozen=True)
class SynthTruth:
    centers: np.ndarray
    informative: list[str]
    noise: list[str]


def _check_field_counts(path: Path) -> None:
    """Every record must carry as many fields as the header names."""
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            return
        for record in reader:
            if len(record) != len(header):
                raise DatasetError(
                    f"Ragged row: expected {len(header)} fields, saw {len(record)}",
                    line=reader.line_num,
                )


def ingest_csv(path: Path) -> Dataset:
    """
    Reads a header row of feature names followed by numeric rows; a final
    column named "label" holds class labels.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Dataset file not found: {path}")
    _check_field_counts(path)
    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            index_col=False,
        )
    except pd.errors.EmptyDataError:
        raise DatasetError(f"Dataset file is empty: {path}") from None
    except pd.errors.ParserError as e:
        raise DatasetError(f"Cannot parse {path}: {e}") from None

    columns = [str(c).strip() for c in frame.columns]
    frame.columns = columns
    has_labels = bool(columns) and columns[-1] == LABEL_COLUMN
    schema = columns[:-1] if has_labels else columns
    if not schema:
        raise DatasetError(f"No feature columns in {path}")

    features = frame[schema].apply(lambda col: col.str.strip())
    numeric = features.apply(pd.to_numeric, errors="coerce")
    bad = ~np.isfinite(numeric.to_numpy(dtype=float))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DatasetError(
            f"Non-numeric or non-finite value {features.iat[row, col]!r}",
            line=int(row) + 2,
            column=schema[col],
        )

    labels = frame[LABEL_COLUMN].str.strip().tolist() if has_labels else None
    logger.info("Read %d row(s) with %d feature(s) from %s", len(frame), len(schema), path)
    return Dataset(
        rows=numeric.to_numpy(dtype=float).reshape(len(frame), len(schema)),
        labels=labels,
        schema=schema,
    )


def write_csv(dataset: Dataset, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        dataset.rows.reshape(len(dataset), len(dataset.schema)), columns=dataset.schema
    )
    if dataset.labels is not None:
        frame[LABEL_COLUMN] = dataset.labels
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def latin_centers(
    rng: np.random.Generator, blobs: int, dim: int, separation: float
) -> np.ndarray:
    """
    Per feature an independent permutation of 0..blobs-1, scaled so that any
    two centers differ by at least `separation` overall.
    """
    step = separation / np.sqrt(dim)
    return np.column_stack([rng.permutation(blobs) for _ in range(dim)]) * step


def gen_synth(
    blobs: int = 3,
    dim: int = 2,
    separation: float = 8.0,
    noise_features: int = 0,
    samples_per_blob: int = 100,
    seed: int = 7,
) -> tuple[Dataset, SynthTruth]:
    """
    Isotropic unit-variance Gaussian blobs plus label-independent N(0, 1)
    noise columns. Rows are grouped by blob. Same seed, same output.
    """
    if blobs < 1:
        raise DatasetError("Need at least one blob")
    if dim < 1:
        raise DatasetError("Need at least one informative feature")
    if not separation > 0:
        raise DatasetError("Separation must be positive")
    if noise_features < 0:
        raise DatasetError("Noise feature count cannot be negative")
    if samples_per_blob < 1:
        raise DatasetError("Need at least one sample per blob")

    rng = np.random.default_rng(seed)
    centers = latin_centers(rng, blobs, dim, separation)
    parts = []
    labels: list[str] = []
    for b in range(blobs):
        informative = centers[b] + rng.standard_normal((samples_per_blob, dim))
        noise = rng.standard_normal((samples_per_blob, noise_features))
        parts.append(np.hstack([informative, noise]))
        labels.extend([f"blob_{b}"] * samples_per_blob)

    informative_names = [f"f{j}" for j in range(dim)]
    noise_names = [f"noise{j}" for j in range(noise_features)]
    dataset = Dataset(
        rows=np.vstack(parts), labels=labels, schema=informative_names + noise_names
    )
    return dataset, SynthTruth(
        centers=centers, informative=informative_names, noise=noise_names
    )
