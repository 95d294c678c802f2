"""Tests for the file handler module."""

import json

import numpy as np
import pytest
import yaml

from c2f_diffusion.exceptions import InvalidInputError
from c2f_diffusion.schemas import CHECKPOINT_SCHEMA, CONFIG_SCHEMA
from c2f_diffusion.utils.file_handler import FileHandler


@pytest.fixture
def sample_data():
    """Sample document for testing."""
    return {"name": "run", "nested": {"values": [1, 2.5]}}


@pytest.fixture(autouse=True)
def restore_schemas():
    """Undo schema registrations made by a test."""
    saved = dict(FileHandler._schemas)
    yield
    FileHandler._schemas = saved


class TestLoadSave:
    """Tests for JSON/YAML loading and saving."""

    def test_json_round_trip(self, tmp_path, sample_data):
        """JSON documents are written sorted and read back unchanged."""
        path = FileHandler.save(sample_data, tmp_path / "doc.json")
        assert FileHandler.load(path) == sample_data
        expected = json.dumps(sample_data, indent=2, sort_keys=True) + "\n"
        assert path.read_text() == expected

    def test_yaml_load(self, tmp_path, sample_data):
        """Non-JSON suffixes are read as YAML."""
        path = tmp_path / "doc.yaml"
        path.write_text(yaml.safe_dump(sample_data))
        assert FileHandler.load(path) == sample_data

    def test_save_always_writes_json(self, tmp_path, sample_data):
        """The suffix does not change the output format."""
        path = FileHandler.save(sample_data, tmp_path / "doc.yaml")
        assert json.loads(path.read_text()) == sample_data

    def test_save_is_deterministic(self, tmp_path, sample_data):
        """Saving twice gives identical bytes."""
        first = FileHandler.save(sample_data, tmp_path / "a.json").read_bytes()
        second = FileHandler.save(sample_data, tmp_path / "b.json").read_bytes()
        assert first == second

    def test_missing_file(self, tmp_path):
        """Loading a missing file raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            FileHandler.load(tmp_path / "missing.json")

    def test_invalid_json(self, tmp_path):
        """Malformed JSON is invalid input."""
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(InvalidInputError):
            FileHandler.load(path)

    def test_non_dict_content(self, tmp_path):
        """Documents must be mappings."""
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(InvalidInputError):
            FileHandler.load(path)


class TestAtomicWrites:
    """Tests for the atomic writers."""

    def test_creates_parent_directories(self, tmp_path):
        """Missing parent directories are created."""
        path = FileHandler.write_text_atomic("x", tmp_path / "a" / "b" / "c.txt")
        assert path.read_text() == "x"

    def test_no_temporary_files_left(self, tmp_path):
        """Only the target file remains after a write."""
        FileHandler.write_bytes_atomic(b"data", tmp_path / "out.bin")
        assert [p.name for p in tmp_path.iterdir()] == ["out.bin"]

    def test_failed_write_keeps_old_content(self, tmp_path, monkeypatch):
        """A failing replace leaves the previous file and no temporary file."""
        path = FileHandler.write_text_atomic("old", tmp_path / "out.txt")

        def fail(src, dst):
            raise OSError("disk full")

        monkeypatch.setattr("c2f_diffusion.utils.file_handler.os.replace", fail)
        with pytest.raises(OSError):
            FileHandler.write_text_atomic("new", path)
        assert path.read_text() == "old"
        assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]


class TestCsv:
    """Tests for CSV tables."""

    def test_cell_formatting(self, tmp_path):
        """Booleans are lowercase; floats keep full precision, numpy included."""
        rows = [
            {"name": "a", "flag": True, "value": 0.1 + 0.2, "count": 3},
            {"name": "b", "flag": False, "value": np.float64(1.5), "count": 4},
        ]
        path = FileHandler.write_csv(rows, tmp_path / "t.csv")
        assert path.read_text() == (
            "name,flag,value,count\n"
            "a,true,0.30000000000000004,3\n"
            "b,false,1.5,4\n"
        )

    def test_fieldnames_and_missing_cells(self, tmp_path):
        """Explicit columns are honored; missing cells are empty."""
        path = FileHandler.write_csv(
            [{"a": 1}], tmp_path / "t.csv", fieldnames=["b", "a"]
        )
        assert FileHandler.read_csv(path) == [{"b": "", "a": "1"}]

    def test_empty_table(self, tmp_path):
        """No rows gives an empty header."""
        path = FileHandler.write_csv([], tmp_path / "empty.csv")
        assert FileHandler.read_csv(path) == []


class TestValidation:
    """Tests for schema validation."""

    def test_builtin_schemas(self):
        """Config and checkpoint schemas are registered."""
        assert FileHandler._schemas["config"] is CONFIG_SCHEMA
        assert FileHandler._schemas["checkpoint"] is CHECKPOINT_SCHEMA

    def test_register_and_validate(self):
        """Registered schemas validate documents."""
        FileHandler.register_schema(
            "point", {"type": "object", "required": ["x"]}
        )
        assert FileHandler.validate({"x": 1}, "point")
        assert not FileHandler.validate({"y": 1}, "point")

    def test_validation_error_location(self):
        """Errors name the offending path."""
        FileHandler.register_schema(
            "typed",
            {"type": "object", "properties": {"n": {"type": "integer"}}},
        )
        message = FileHandler.validation_error({"n": "x"}, "typed")
        assert message.startswith("n: ")

    def test_unknown_schema(self):
        """Validating against an unregistered schema raises KeyError."""
        with pytest.raises(KeyError):
            FileHandler.validate({}, "nonexistent")

    def test_load_and_validate(self, tmp_path):
        """Files failing validation are invalid input."""
        FileHandler.register_schema("point", {"type": "object", "required": ["x"]})
        good = FileHandler.save({"x": 1}, tmp_path / "good.json")
        bad = FileHandler.save({"y": 1}, tmp_path / "bad.json")
        assert FileHandler.load_and_validate(good, "point") == {"x": 1}
        with pytest.raises(InvalidInputError):
            FileHandler.load_and_validate(bad, "point")
