"""Provides the root models and the JSON-lines artifact helpers.

Every artifact the toolkit produces (file facts, call graphs, training
instances, benchmark tasks, evaluation reports) is a pydantic model deriving
from [Base][callerkit.models.base.Base]. The base class wires orjson in as the
JSON backend with sorted keys so that serializing the same model twice yields
identical bytes, which the reproducibility guarantees of the pipeline rely on.

Models which wrap lists have a dedicated base class providing the expected
pythonic methods plus filtering through jmespath expressions. This module also
holds the JSON-lines helpers used to read and write artifacts along with the
provenance header that is written at the top of each of them.
"""

from __future__ import annotations

from datetime import date
from decimal import Decimal
from pathlib import Path
from typing import (
    Any,
    Dict,
    Generic,
    Iterable,
    Iterator,
    List,
    Optional,
    Tuple,
    Type,
    TypeVar,
)

import jmespath  # type: ignore
import orjson
from pydantic import BaseModel

S = TypeVar("S", bound="Base")

PROVENANCE_KEY = "__provenance__"

_OPTIONS = orjson.OPT_NON_STR_KEYS | orjson.OPT_SORT_KEYS


def _default(obj: Any) -> Any:
    if isinstance(obj, Path):
        return obj.as_posix()
    elif isinstance(obj, (set, frozenset)):
        return sorted(obj)
    elif isinstance(obj, Decimal):
        return float(obj)
    raise TypeError


def _encode(v, *, default):
    def fallback(obj: Any) -> Any:
        try:
            return _default(obj)
        except TypeError:
            return default(obj)

    return orjson.dumps(v, default=fallback, option=_OPTIONS).decode()


def dumps(obj: Any) -> bytes:
    """Encodes a plain object with the same options used by every model.

    Args:
        obj: A JSON compatible object (dicts, lists, models dumped to dicts)

    Returns:
        The encoded bytes with keys sorted.
    """
    if isinstance(obj, BaseModel):
        obj = obj.dict(by_alias=True, exclude_none=True)
    return orjson.dumps(obj, default=_default, option=_OPTIONS)


class Base(BaseModel):
    """The base model class used for most models in callerkit."""

    class Config:
        json_loads = orjson.loads
        json_dumps = _encode

    def json(self, **kwargs: Any) -> str:
        """Encodes the model, leaving out unset optional fields."""
        kwargs.setdefault("by_alias", True)
        kwargs.setdefault("exclude_none", True)
        return super().json(**kwargs)

    def select(
        self, expr: str, model: Optional[Type[BaseModel]] = None
    ) -> Optional[Any]:
        """Queries this model with a jmespath expression.

        The query runs over a plain copy of the model in which dates and
        paths are strings. List models are queried through their bare list,
        so `[?status == 'pass']` works on them directly.

        Args:
            expr: The jmespath expression
            model: When given, the result (or each element of a list result)
                is parsed into this model

        Returns:
            The query result, or None when it is empty or false.
        """
        data = _jsonable(self.dict())
        if "__root__" in self.__fields__:
            data = data["__root__"]

        found = jmespath.search(expr, data)
        if not found:
            return None
        if model is None:
            return found
        if isinstance(found, list):
            return [model.parse_obj(item) for item in found]
        return model.parse_obj(found)


class BaseFiltered(Base):
    """A model which can be narrowed down in place of a copy."""

    def filter(self: S, expr: str) -> Optional[S]:
        """Returns a copy of this model holding what the expression keeps.

        The expression must produce something this model can parse, a list
        of the same elements for list models.
        """
        found = self.select(expr)
        return self.parse_obj(found) if found else None


class BaseList(BaseFiltered, Generic[S]):
    """A model wrapping a list of records."""

    __root__: List[S]

    def __len__(self) -> int:
        return len(self.__root__)

    def __getitem__(self, i: int):
        return self.__root__[i]

    def __iter__(self):
        return iter(self.__root__)

    def append(self, v: S) -> None:
        self.__root__.append(v)


class Provenance(Base):
    """The header record written at the top of every artifact.

    Attributes:
        tool: Always `callerkit`.
        version: The package version that produced the artifact.
        seed: The seed of the run.
        config_digest: A short digest of the effective configuration.
    """

    tool: str = "callerkit"
    version: str
    seed: int
    config_digest: str


def write_jsonl(
    path: Path,
    records: Iterable[Any],
    provenance: Optional[Provenance] = None,
) -> int:
    """Writes records as JSON-lines, optionally prefixed by provenance.

    Args:
        path: The destination file, parent directories are created
        records: Models or plain JSON compatible objects
        provenance: An optional header record

    Returns:
        The number of records written (excluding the header).
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("wb") as f:
        if provenance is not None:
            f.write(dumps({PROVENANCE_KEY: provenance.dict()}) + b"\n")
        for record in records:
            f.write(dumps(record) + b"\n")
            count += 1

    return count


def iter_jsonl(path: Path) -> Iterator[Dict[str, Any]]:
    """Iterates over the records of a JSON-lines file.

    Blank lines and provenance headers are skipped.

    Args:
        path: The file to read

    Returns:
        An iterator of decoded records.
    """
    with path.open("rb") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            record = orjson.loads(line)
            if isinstance(record, dict) and PROVENANCE_KEY in record:
                continue
            yield record


def read_jsonl(path: Path, model: Type[S]) -> List[S]:
    """Reads a JSON-lines file into a list of models.

    Args:
        path: The file to read
        model: The model each record is parsed into

    Returns:
        A list of parsed models.
    """
    return [model.parse_obj(r) for r in iter_jsonl(path)]


def write_json(
    path: Path, obj: Any, provenance: Optional[Provenance] = None
) -> None:
    """Writes a single JSON document under a `data` key.

    The provenance header, when given, sits next to it under the same key
    JSON-lines artifacts use for their first record.
    """
    if isinstance(obj, BaseModel):
        obj = obj.dict(by_alias=True, exclude_none=True)
    path.parent.mkdir(parents=True, exist_ok=True)
    document: Dict[str, Any] = {"data": obj}
    if provenance is not None:
        document[PROVENANCE_KEY] = provenance.dict()
    path.write_bytes(dumps(document) + b"\n")


def read_json(path: Path) -> Tuple[Any, Optional[Provenance]]:
    """Reads a document written by `write_json`.

    Returns:
        The decoded data and the provenance header, if any.
    """
    document = orjson.loads(path.read_bytes())
    header = document.get(PROVENANCE_KEY)
    return document["data"], (
        Provenance.parse_obj(header) if header is not None else None
    )


def _jsonable(obj: Any) -> Any:
    """Rewrites a dumped model into values jmespath compares sensibly."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Decimal):
        return float(obj)
    if isinstance(obj, date):
        return obj.isoformat()
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj
