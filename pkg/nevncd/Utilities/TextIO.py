import hashlib
import io
import json
import pathlib

from ruamel.yaml import YAML
from ruamel.yaml.error import MarkedYAMLError, YAMLError

from nevncd.Core import ParseError


def _yaml():
    yaml = YAML(typ='safe', pure=True)
    yaml.default_flow_style = False
    return yaml


def dump_yaml(data, path):
    """
    Writes plain data (dicts, lists, scalars) as YAML
    :param data: data to write
    :param path: destination file
    """
    path = pathlib.Path(path)
    with open(path, 'w', encoding='utf-8', newline='\n') as file:
        _yaml().dump(data, file)


def load_yaml(path):
    """
    Reads a YAML file
    ParseError carries the line of the first syntax problem
    """
    path = pathlib.Path(path)
    with open(path, 'r', encoding='utf-8') as file:
        try:
            return _yaml().load(file)
        except MarkedYAMLError as e:
            line = e.problem_mark.line + 1 if e.problem_mark is not None else None
            raise ParseError(str(e.problem), lineNumber=line, path=str(path))
        except YAMLError as e:
            raise ParseError(str(e), path=str(path))


def content_hash(data) -> str:
    """
    sha256 over the canonical JSON encoding of plain data
    """
    encoded = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(encoded.encode('utf-8')).hexdigest()


def format_float(value) -> str:
    """
    17 significant digits, enough to read back the same double
    """
    return format(float(value), '.17g')


def format_yaml(data) -> str:
    stream = io.StringIO()
    _yaml().dump(data, stream)
    return stream.getvalue()
