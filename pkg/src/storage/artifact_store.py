"""
Artifact Store for the YOdar Fusion Pipeline
============================================
Author: Perception Fusion Team

Versioned, text-first persistence for everything one pipeline stage hands to the next.

Every file starts with an artifact header naming its schema, schema version and a
digest of the configuration that produced it:

- JSON kinds (radar_weights, ensemble, manifest): ``{"header": {...},`` on the first
  line, then ``"payload": ...``
- Line-delimited kinds (world): header object on line 1, one scene per following line
- Table kinds (training_set, loss_curve, report_table): ``# {header}`` on line 1, then
  a CSV column row and one CSV row per record

Floats are written as decimal with 17 significant digits, so every value reads back
bit-identical. Writes go to a temporary file in the target directory which then
replaces the target; loads either return a fully validated payload or raise.

Dependencies: numpy, pydantic
"""

# Standard library imports
import csv
import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

# Third-party imports
from pydantic import BaseModel, ConfigDict, Field, ValidationError

# Local imports
from ..meta_classifier.gradient_boosting import Ensemble
from ..radar_network.radar_model import NetworkWeights
from ..radar_network.radar_trainer import EpochRecord
from ..shared.exceptions import (
    ArtifactParseError,
    ArtifactValidationError,
    DataError,
    SchemaError,
    ShapeError,
)
from ..shared.models import FEATURE_NAMES, BoxLabel, FeatureVector, LabeledExample, Scene
from ..shared.utils import canonical_json, sha256_hex

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Cell = Union[None, int, float, str]


# ========== HEADER ==========

class ArtifactHeader(BaseModel):
    """First record of every artifact file."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_name: str
    schema_version: int = Field(ge=1)
    digest: str


class ReportTable(BaseModel):
    """A named-column table; cells are numbers, strings or blanks."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    columns: List[str]
    rows: List[List[Cell]] = Field(default_factory=list)


SCHEMAS: Dict[str, Tuple[str, int]] = {
    "world": ("yodar.world", 1),
    "radar_weights": ("yodar.radar_weights", 1),
    "ensemble": ("yodar.ensemble", 1),
    "training_set": ("yodar.training_set", 1),
    "loss_curve": ("yodar.loss_curve", 1),
    "report_table": ("yodar.report_table", 1),
    "manifest": ("yodar.manifest", 1),
}

TRAINING_SET_COLUMNS = ["scene_id", "box_id", *FEATURE_NAMES, "label"]
LOSS_CURVE_COLUMNS = ["epoch", "phase", "learning_rate", "train_loss", "val_loss"]


def _schema(kind: str) -> Tuple[str, int]:
    if kind not in SCHEMAS:
        raise SchemaError(f"unknown artifact kind '{kind}'")
    return SCHEMAS[kind]


# ========== NUMBER FORMATTING ==========

def format_float(value: float) -> str:
    """Decimal text with 17 significant digits; reads back to the same double."""
    if not math.isfinite(value):
        raise DataError(f"cannot store non-finite value {value}")
    return format(value, ".17g")


def dumps(value: Any) -> str:
    """JSON text with every float at 17 significant digits, keys in insertion order."""
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{dumps(v)}" for k, v in value.items()) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in value) + "]"
    if hasattr(value, "item"):
        return dumps(value.item())
    raise DataError(f"cannot serialize value of type {type(value).__name__}")


def _format_cell(value: Cell) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def _parse_cell(text: str) -> Cell:
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


# ========== ENCODERS ==========

def _encode_world(scenes: Sequence[Scene]) -> List[str]:
    return [dumps(scene.model_dump(mode="python")) for scene in scenes]


def _encode_training_set(rows: Sequence[LabeledExample]) -> List[List[Cell]]:
    return [[r.scene_id, r.box_id, *r.features.as_tuple(), int(r.label)] for r in rows]


def _encode_loss_curve(records: Sequence[EpochRecord]) -> List[List[Cell]]:
    return [[r.epoch, r.phase, r.learning_rate, r.train_loss, r.val_loss] for r in records]


def _json_payload(kind: str, payload: Any) -> Any:
    if kind == "radar_weights":
        if not isinstance(payload, NetworkWeights):
            raise DataError("radar_weights payload must be NetworkWeights")
        return payload.to_document()
    if kind == "ensemble":
        if not isinstance(payload, Ensemble):
            raise DataError("ensemble payload must be an Ensemble")
        return payload.to_document()
    return payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload


def _table(kind: str, payload: Any) -> Tuple[List[str], List[List[Cell]]]:
    if kind == "training_set":
        return TRAINING_SET_COLUMNS, _encode_training_set(payload)
    if kind == "loss_curve":
        return LOSS_CURVE_COLUMNS, _encode_loss_curve(payload)
    return list(payload.columns), [list(r) for r in payload.rows]


def encode_artifact(kind: str, payload: Any, digest: Optional[str] = None) -> str:
    """Full file text of an artifact."""
    schema_name, version = _schema(kind)
    if kind == "world":
        body = _encode_world(payload)
        header = ArtifactHeader(
            schema_name=schema_name, schema_version=version, digest=digest or sha256_hex("\n".join(body))
        )
        return "\n".join([dumps(header.model_dump()), *body]) + "\n"

    if kind in ("training_set", "loss_curve", "report_table"):
        columns, rows = _table(kind, payload)
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ShapeError(f"{kind} row has {len(row)} cells for {len(columns)} columns")
            writer.writerow([_format_cell(cell) for cell in row])
        body = buffer.getvalue()
        header = ArtifactHeader(schema_name=schema_name, schema_version=version, digest=digest or sha256_hex(body))
        return f"# {dumps(header.model_dump())}\n{body}"

    document = dumps(_json_payload(kind, payload))
    header = ArtifactHeader(schema_name=schema_name, schema_version=version, digest=digest or sha256_hex(document))
    return f'{{"header":{dumps(header.model_dump())},\n"payload":{document}}}\n'


# ========== SAVE ==========

def save_artifact(kind: str, payload: Any, path: PathLike, digest: Optional[str] = None) -> Path:
    """
    Write ``payload`` as artifact ``kind`` to ``path``, replacing any existing file.

    Args:
        kind (str): One of ``SCHEMAS``
        payload: Object of the kind's payload type
        path: Target file; its directory is created when missing
        digest (Optional[str]): Configuration digest for the header; defaults to the
            SHA-256 of the serialized body

    Raises:
        DataError: If the path cannot be written
    """
    target = write_text_atomic(path, encode_artifact(kind, payload, digest))
    logger.debug(f"Wrote {kind} artifact to {target}")
    return target


def write_text_atomic(path: PathLike, text: str) -> Path:
    """Replace ``path`` with ``text`` so readers see either the old or the new file."""
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        # ========== TEMPORARY FILE MANAGEMENT ==========
        with tempfile.NamedTemporaryFile(
            "w", delete=False, dir=target.parent, prefix=f".{target.name}.", suffix=".tmp", encoding="utf-8", newline=""
        ) as temp_file:
            temp_file.write(text)
            temp_path = temp_file.name
        try:
            os.replace(temp_path, target)
        finally:
            if os.path.exists(temp_path):
                os.unlink(temp_path)
    except OSError as e:
        logger.error(f"Error writing {target}: {str(e)}")
        raise DataError(f"cannot write {target}: {e}") from e
    return target


# ========== LOAD ==========

def _check_header(kind: str, raw: Any, path: str, line: int = 1) -> ArtifactHeader:
    try:
        header = ArtifactHeader.model_validate(raw)
    except ValidationError as e:
        raise ArtifactParseError(path, f"malformed artifact header: {e.errors()[0]['msg']}", line) from e
    schema_name, version = _schema(kind)
    if header.schema_name != schema_name:
        known = {name: k for k, (name, _) in SCHEMAS.items()}
        if header.schema_name in known:
            raise SchemaError(f"{path}: holds a {known[header.schema_name]} artifact, expected {kind}")
        raise SchemaError(f"{path}: unknown schema '{header.schema_name}'")
    if header.schema_version > version:
        raise SchemaError(
            f"{path}: schema version {header.schema_version} of {schema_name} is newer than supported version {version}"
        )
    return header


def _parse_json(text: str, path: str, line_offset: int = 0) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ArtifactParseError(path, e.msg, e.lineno + line_offset) from e


def _validated(path: str, build: Callable[[], Any]) -> Any:
    """Run a payload constructor, turning invariant failures into validation errors."""
    try:
        return build()
    except ValidationError as e:
        first = e.errors()[0]
        invariant = ".".join(str(p) for p in first["loc"]) or first["type"]
        raise ArtifactValidationError(path, invariant, first["msg"]) from e
    except ShapeError as e:
        raise ArtifactValidationError(path, "parameter shapes", str(e)) from e
    except ValueError as e:
        raise ArtifactValidationError(path, "value domain", str(e)) from e
    except (KeyError, TypeError) as e:
        raise ArtifactValidationError(path, "document structure", f"missing or mistyped field {e}") from e


def _load_world(lines: List[str], path: str) -> List[Scene]:
    scenes = []
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        record = _parse_json(line, path, number - 1)
        scenes.append(_validated(f"{path}:{number}", lambda: Scene.model_validate(record)))
    return scenes


def _read_table(lines: List[str], path: str, expected: Optional[List[str]]) -> Tuple[List[str], List[Tuple[int, List[str]]]]:
    reader = csv.reader(lines[1:])
    try:
        columns = next(reader)
    except StopIteration:
        raise ArtifactParseError(path, "missing column row", 2)
    if expected is not None and columns != expected:
        raise ArtifactParseError(path, f"expected columns {expected}, found {columns}", 2)
    rows = []
    for number, cells in enumerate(reader, start=3):
        if not cells:
            continue
        if len(cells) != len(columns):
            raise ArtifactParseError(path, f"{len(cells)} cells for {len(columns)} columns", number)
        rows.append((number, cells))
    return columns, rows


def _number(text: str, path: str, line: int, kind: Callable[[str], Any] = float) -> Any:
    try:
        return kind(text)
    except ValueError as e:
        raise ArtifactParseError(path, f"not a number: '{text}'", line) from e


def _load_training_set(lines: List[str], path: str) -> List[LabeledExample]:
    _, rows = _read_table(lines, path, TRAINING_SET_COLUMNS)
    examples = []
    for number, cells in rows:
        values = [_number(c, path, number) for c in cells[2:11]]
        box_id = _number(cells[1], path, number, int)
        label = _number(cells[11], path, number, int)
        examples.append(
            _validated(
                f"{path}:{number}",
                lambda: LabeledExample(
                    scene_id=cells[0],
                    box_id=box_id,
                    features=FeatureVector(**dict(zip(FEATURE_NAMES, values))),
                    label=BoxLabel(label),
                ),
            )
        )
    return examples


def _load_loss_curve(lines: List[str], path: str) -> List[EpochRecord]:
    _, rows = _read_table(lines, path, LOSS_CURVE_COLUMNS)
    records = []
    for number, cells in rows:
        record = EpochRecord(
            epoch=_number(cells[0], path, number, int),
            phase=_number(cells[1], path, number, int),
            learning_rate=_number(cells[2], path, number),
            train_loss=_number(cells[3], path, number),
            val_loss=_number(cells[4], path, number) if cells[4] else None,
        )
        records.append(record)
    return records


def decode_artifact(kind: str, text: str, path: str = "<memory>") -> Any:
    """Inverse of ``encode_artifact``."""
    _schema(kind)
    lines = text.splitlines()
    if not lines:
        raise ArtifactParseError(path, "empty file", 1)

    if kind == "world":
        _check_header(kind, _parse_json(lines[0], path), path)
        return _load_world(lines, path)

    if kind in ("training_set", "loss_curve", "report_table"):
        if not lines[0].startswith("# "):
            raise ArtifactParseError(path, "missing '# ' artifact header line", 1)
        _check_header(kind, _parse_json(lines[0][2:], path), path)
        if kind == "training_set":
            return _load_training_set(lines, path)
        if kind == "loss_curve":
            return _validated(path, lambda: _load_loss_curve(lines, path))
        columns, rows = _read_table(lines, path, None)
        return _validated(path, lambda: ReportTable(columns=columns, rows=[[_parse_cell(c) for c in r] for _, r in rows]))

    document = _parse_json(text, path)
    if not isinstance(document, dict) or "header" not in document or "payload" not in document:
        raise ArtifactParseError(path, "expected an object with 'header' and 'payload'", 1)
    _check_header(kind, document["header"], path)
    payload = document["payload"]
    if kind == "radar_weights":
        return _validated(path, lambda: NetworkWeights.from_document(payload))
    if kind == "ensemble":
        return _validated(path, lambda: Ensemble.from_document(payload))
    return payload


def load_artifact(kind: str, path: PathLike) -> Any:
    """
    Read artifact ``kind`` from ``path``.

    Raises:
        DataError: If the file is missing or unreadable
        SchemaError: On unknown schema, other kind or newer version
        ArtifactParseError: On malformed content, with the line number
        ArtifactValidationError: When the payload breaks a type invariant
    """
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise DataError(f"missing artifact: {source}") from e
    except OSError as e:
        raise DataError(f"cannot read {source}: {e}") from e
    payload = decode_artifact(kind, text, str(source))
    logger.debug(f"Loaded {kind} artifact from {source}")
    return payload


def read_header(path: PathLike) -> ArtifactHeader:
    """Header of any artifact file, without loading its payload."""
    source = Path(path)
    try:
        first = source.read_text(encoding="utf-8").splitlines()[0]
    except (OSError, IndexError) as e:
        raise DataError(f"cannot read artifact header of {source}") from e
    if first.startswith("# "):
        first = first[2:]
    elif first.startswith('{"header":'):
        first = first[len('{"header":'):].rstrip(",")
    try:
        return ArtifactHeader.model_validate(json.loads(first))
    except (json.JSONDecodeError, ValidationError) as e:
        raise ArtifactParseError(str(source), "malformed artifact header", 1) from e


def payload_digest(payload: Any) -> str:
    """Digest of a JSON-compatible payload, for headers that record their inputs."""
    return sha256_hex(canonical_json(payload))
