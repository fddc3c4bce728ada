'''
File responsible for the plain file system concerns: key=value default files and atomic writes.
'''
import os
import tempfile
from pathlib import Path
from typing import Any, Collection, Union

from uni_chars import *


def parse_value(raw: str) -> Any:
    '''
    Converts the right hand side of a `key = value` line into a python value.
    Integers stay integers, `none`/`true`/`false` are recognized, everything else that is not a number stays a string.
    '''
    lowered = raw.lower()
    if lowered in ('none', 'null'):
        return None
    if lowered == 'true':
        return True
    if lowered == 'false':
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw.strip('"')


def parse_model_content(model: Any, file: Path, text_keys: Collection[str] = ()) -> Any:
    '''
    Sets every `key = value` line of the file as an attribute of the model.

    :param text_keys: Keys whose value is kept as text, `none` included.
    '''
    with open(file, encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            if line.startswith('#') or not line.strip():
                continue

            trimmed = line.strip()
            split = trimmed.split('=', 1)
            if len(split) != 2:
                raise ValueError(f"{ERROR} {file}:{number} is not a `key = value` line: '{trimmed}'")
            key = split[0].strip()
            raw = split[1].strip()
            value = raw.strip('"') if key in text_keys else parse_value(raw)

            model.__dict__[key] = value

    return model


def atomic_write_text(path: Union[str, Path], content: str) -> Path:
    '''
    Writes the content next to the target first and renames it over the target,
    readers never observe a partially written file.

    :param path: Destination of the file, the parent directory must exist.
    :param content: Text to write.
    '''
    target = Path(path)
    if not target.parent.exists():
        raise FileNotFoundError(f"{ERROR} Directory {target.parent} does not exist!")

    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(content)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return target


def ensure_directory(path: Union[str, Path]) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    return directory
