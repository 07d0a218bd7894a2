"""JSON schema validation for every machine-readable output."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

SCHEMAS = ("cost_report", "gradcheck_report", "metrics_report", "trace_line", "shapes",
           "fixtures_report", "train_summary")


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    if name not in SCHEMAS:
        raise KeyError(f"unknown schema {name!r}")
    raw = resources.files("mlrupp").joinpath(f"schemas/{name}.schema.json").read_text()
    schema = json.loads(raw)
    jsonschema.Draft202012Validator.check_schema(schema)
    return schema


def validate(obj, name: str) -> None:
    """Raise ``jsonschema.ValidationError`` if ``obj`` does not match schema ``name``."""
    jsonschema.Draft202012Validator(load_schema(name)).validate(obj)
