import json
from typing import Any, Dict, Mapping

from packaging.version import Version

from robusthedge.constants import SCHEMA_VERSION
from robusthedge.errors import SchemaVersionError, ValidationError


def check_schema_version(document: Mapping[str, Any]) -> None:
    found = str(document.get('schema-version', SCHEMA_VERSION))
    if Version(found).major > Version(SCHEMA_VERSION).major:
        raise SchemaVersionError(found, SCHEMA_VERSION)


def load_document(filename: str) -> Dict[str, Any]:
    with open(filename) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(
                [f'line {e.lineno}: {e.msg}'], subject=f'document {filename}'
            )
    if not isinstance(data, dict):
        raise ValidationError(
            ['The top level must be a JSON object.'],
            subject=f'document {filename}',
        )
    check_schema_version(data)
    return data


def dump_document(data: Mapping[str, Any]) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + '\n'
