"""Validation of reports against the JSON schemas shipped in ``hfl/schemas``."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from jsonschema import Draft202012Validator
from referencing import Registry, Resource

SCHEMA_FILES = ("report.schema.json", "certificate.schema.json", "block_basis.schema.json")
_BASE = "https://hfl.local/schemas/"


def load_schema(name: str) -> dict:
    return json.loads(resources.files("hfl").joinpath("schemas", name).read_text())


@lru_cache(maxsize=None)
def _registry() -> Registry:
    pairs = [(_BASE + name, Resource.from_contents(load_schema(name))) for name in SCHEMA_FILES]
    return Registry().with_resources(pairs)


@lru_cache(maxsize=None)
def validator(name: str = "report.schema.json") -> Draft202012Validator:
    schema = load_schema(name)
    Draft202012Validator.check_schema(schema)
    return Draft202012Validator(schema, registry=_registry())


def validation_errors(document: dict, name: str = "report.schema.json") -> list[str]:
    return [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}"
            for e in validator(name).iter_errors(document)]


def validate(document: dict, name: str = "report.schema.json") -> None:
    """Raise jsonschema.ValidationError on the first problem."""
    validator(name).validate(document)
