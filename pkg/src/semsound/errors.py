"""Exception hierarchy shared by every module."""

from __future__ import annotations


class SemSoundError(Exception):
    """Base class for all errors raised by this package."""


class UnknownEntity(SemSoundError, KeyError):
    def __init__(self, entity_id: str) -> None:
        super().__init__(entity_id)
        self.entity_id = entity_id

    def __str__(self) -> str:
        return f"unknown entity {self.entity_id!r}"


class UnknownTriple(SemSoundError, KeyError):
    def __init__(self, key: tuple[str, str, str]) -> None:
        super().__init__(key)
        self.key = key

    def __str__(self) -> str:
        return "unknown triple ({}, {}, {})".format(*self.key)


class DuplicateTriple(SemSoundError, ValueError):
    pass


class InvalidProbability(SemSoundError, ValueError):
    pass


class CategoryConflict(SemSoundError, ValueError):
    pass


class EventOutOfBounds(SemSoundError, ValueError):
    pass


class InvalidFraming(SemSoundError, ValueError):
    pass


class HeaderMismatch(SemSoundError, ValueError):
    pass


class UnsupportedChannelCount(SemSoundError, ValueError):
    pass


class ConfigError(SemSoundError, ValueError):
    """Invalid session configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class ParseError(SemSoundError, ValueError):
    def __init__(self, message: str, line: int | None = None) -> None:
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class ValidationError(SemSoundError, ValueError):
    pass
