"""Exception hierarchy.

Every error carries an ``exit_code`` used by the CLI: 2 for configuration
problems, 3 for data problems and 4 for training problems.
"""

import contextlib


class TonectcError(Exception):
    exit_code = 3
    stage: str | None = None


@contextlib.contextmanager
def in_stage(name: str):
    """Tag any toolkit error raised inside the block with the pipeline stage."""
    try:
        yield
    except TonectcError as exc:
        if exc.stage is None:
            exc.stage = name
        raise


class ConfigError(TonectcError):
    exit_code = 2


class DataError(TonectcError):
    exit_code = 3


class TrainingError(TonectcError):
    exit_code = 4


class UnknownSymbol(DataError):
    def __init__(self, position, text=""):
        self.position = position
        glyph = text[position] if 0 <= position < len(text) else ""
        super().__init__(f"unknown symbol {glyph!r} at position {position} in {text!r}")


class EmptySyllable(DataError):
    pass


class MisplacedTone(DataError):
    def __init__(self, position, text=""):
        self.position = position
        super().__init__(f"tone letter at position {position} does not follow a vowel in {text!r}")


class CategoryMismatch(DataError):
    pass


class NoCandidate(DataError):
    pass


class MoreThanOneVoiceMark(DataError):
    pass


class TooShort(DataError):
    pass


class NonFiniteSample(DataError):
    pass


class NegativeFrequency(DataError):
    pass


class LengthMismatch(DataError):
    pass


class UnknownTemplate(DataError):
    pass


class TooLarge(DataError):
    pass


class InputTooShort(DataError):
    pass


class DimMismatch(DataError):
    pass


class DataEmpty(DataError):
    pass


class MissingHead(DataError):
    def __init__(self, lang, tier):
        self.lang = lang
        self.tier = tier
        super().__init__(f"checkpoint has no {tier!r} head for language {lang!r}")


class Unresolvable(DataError):
    pass


class MissingTier(DataError):
    pass


class SpecInvalid(ConfigError):
    pass


class FormatError(DataError):
    pass
