"""File handling utilities: JSON/YAML documents, CSV tables and atomic writes.

Documents are read from JSON or YAML and always written as JSON.
"""

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import yaml
from jsonschema import ValidationError, validate

from c2f_diffusion.exceptions import InvalidInputError
from c2f_diffusion.schemas import CHECKPOINT_SCHEMA, CONFIG_SCHEMA

PathLike = Union[str, Path]


def _format_cell(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


class FileHandler:
    """File handler for JSON/YAML documents with schema validation support.

    All writers go through :meth:`write_text_atomic`, so a crashed command never
    leaves a half-written artifact behind.
    """

    # Dictionary to store registered schemas
    _schemas: Dict[str, Dict[str, Any]] = {
        "config": CONFIG_SCHEMA,
        "checkpoint": CHECKPOINT_SCHEMA,
    }

    @classmethod
    def register_schema(cls, schema_name: str, schema: Dict[str, Any]) -> None:
        """Register a schema for validation.

        Args:
            schema_name: Name of the schema
            schema: JSON schema document
        """
        cls._schemas[schema_name] = schema

    @classmethod
    def write_bytes_atomic(cls, data: bytes, file_path: PathLike) -> Path:
        """Write bytes through a temporary file in the target directory.

        Raises:
            OSError: If the directory cannot be created or written
        """
        file_path = Path(file_path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(
            prefix=f".{file_path.name}.", suffix=".tmp", dir=file_path.parent
        )
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp_name, file_path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
        return file_path

    @classmethod
    def write_text_atomic(cls, text: str, file_path: PathLike) -> Path:
        return cls.write_bytes_atomic(text.encode("utf-8"), file_path)

    @classmethod
    def load(cls, file_path: PathLike) -> Dict[str, Any]:
        """Load content from a JSON or YAML file based on its extension.

        Args:
            file_path: Path to file

        Returns:
            Loaded content as dictionary

        Raises:
            InvalidInputError: If file could not be parsed into a dictionary
            FileNotFoundError: If file does not exist
        """
        file_path = Path(file_path)
        if not file_path.exists():
            raise FileNotFoundError(f"File not found: {file_path}")

        text = file_path.read_text(encoding="utf-8")
        try:
            if file_path.suffix.lower() == ".json":
                content = json.loads(text)
            else:
                content = yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise InvalidInputError(f"Failed to load file {file_path}: {str(e)}") from e

        if not isinstance(content, dict):
            raise InvalidInputError(
                f"Loaded content of {file_path} is not a dictionary: {type(content)}"
            )
        return content

    @classmethod
    def save(cls, data: Mapping[str, Any], file_path: PathLike) -> Path:
        """Save data as JSON.

        Keys are sorted and floats are written with ``repr`` precision, so saving
        the same data twice gives identical bytes.
        """
        text = json.dumps(data, indent=2, sort_keys=True) + "\n"
        return cls.write_text_atomic(text, file_path)

    @classmethod
    def write_csv(
        cls,
        rows: Iterable[Mapping[str, Any]],
        file_path: PathLike,
        fieldnames: Optional[Sequence[str]] = None,
    ) -> Path:
        """Write rows as CSV with a header row; floats use ``repr``.

        Args:
            rows: Mappings from column name to value
            file_path: Target path
            fieldnames: Column order; defaults to the keys of the first row
        """
        rows = list(rows)
        if fieldnames is None:
            fieldnames = list(rows[0].keys()) if rows else []
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_format_cell(row.get(name, "")) for name in fieldnames])
        return cls.write_text_atomic(buffer.getvalue(), file_path)

    @classmethod
    def read_csv(cls, file_path: PathLike) -> List[Dict[str, str]]:
        """Read a CSV file with a header row into a list of string dictionaries."""
        with open(file_path, "r", encoding="utf-8", newline="") as f:
            return list(csv.DictReader(f))

    @classmethod
    def validate(cls, data: Dict[str, Any], schema_name: str) -> bool:
        """Validate data against a registered schema.

        Returns:
            True if valid, False otherwise

        Raises:
            KeyError: If schema is not registered
        """
        return cls.validation_error(data, schema_name) is None

    @classmethod
    def validation_error(cls, data: Dict[str, Any], schema_name: str) -> Optional[str]:
        """Return the first validation message, or None when ``data`` is valid."""
        if schema_name not in cls._schemas:
            raise KeyError(f"Schema '{schema_name}' not registered")
        try:
            validate(instance=data, schema=cls._schemas[schema_name])
            return None
        except ValidationError as e:
            location = "/".join(str(part) for part in e.absolute_path) or "<root>"
            return f"{location}: {e.message}"

    @classmethod
    def load_and_validate(cls, file_path: PathLike, schema_name: str) -> Dict[str, Any]:
        """Load a file and validate it against a schema.

        Raises:
            InvalidInputError: If file could not be loaded or validation failed
        """
        data = cls.load(file_path)
        error = cls.validation_error(data, schema_name)
        if error is not None:
            raise InvalidInputError(
                f"File {file_path} failed validation against schema "
                f"'{schema_name}': {error}"
            )
        return data
