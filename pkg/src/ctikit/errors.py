"""Exception types shared across the toolkit."""


class CtikitError(Exception):
    """Base class for every error raised by this package."""


class MalformedRecord(CtikitError):
    """A feed line could not be parsed into a record (counted, not fatal)."""


class SourceUnavailable(CtikitError):
    """A configured source could not be read; aborts that source only."""


class EmptyTrainingSet(CtikitError):
    """Language-profile training was given no usable samples."""


class MissingResources(CtikitError):
    """No preprocessing resources exist for a language (and no default)."""

    def __init__(self, lang: str):
        super().__init__(f"no language resources for {lang!r} and no default configured")
        self.lang = lang


class OverlapError(CtikitError):
    """Spans overlap or fall outside the sequence they label."""


class EmptySequence(CtikitError):
    """An operation that needs at least one token was given none."""


class OovNotConfigured(CtikitError):
    """A lookup-table embedding file lacks the mandatory <OOV> row."""


class RemoteUnavailable(CtikitError):
    """The remote embedding endpoint could not be reached."""


class ShapeMismatch(CtikitError):
    """Tensor shapes are inconsistent with the declared configuration."""


class LengthMismatch(CtikitError):
    """A label sequence does not match its token sequence in length."""


class EmptyDataset(CtikitError):
    """Training was requested on an empty dataset."""


class LabelOutOfRange(CtikitError):
    """A label id or name is not part of the configured schema."""


class MissingSynonymTable(CtikitError):
    """Synonym augmentation was requested without a synonym table."""


class TranslatorUnavailable(CtikitError):
    """Back-translation was requested without a translator."""


class AlignmentError(CtikitError):
    """Gold and predicted label files do not line up by record id/length."""


class ModelFormatError(CtikitError):
    """A persisted model file failed shape or invariant validation."""


class ConfigError(CtikitError):
    """A configuration file is invalid; carries a field-path diagnostic."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.field_path = path
