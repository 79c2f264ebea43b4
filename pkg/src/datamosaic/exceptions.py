"""Exception hierarchy shared by every stage of the mosaicing engine."""


class MosaicError(Exception):
    """Base class for all errors raised by datamosaic."""


class InvalidSelectionError(MosaicError, IndexError):
    pass


class InvalidGeometryError(MosaicError, ValueError):
    pass


class InvalidInputError(MosaicError, ValueError):
    pass


class UnsupportedFormatError(MosaicError, ValueError):
    pass


class MosaicIOError(MosaicError, OSError):
    pass


class NumericalError(MosaicError, FloatingPointError):
    """Raised when a likelihood computation produces a non-finite value.

    ``fragment_id`` and ``chain_index`` are attached when known so that a
    failing job can name the offending fragment.
    """

    def __init__(self, message, fragment_id=None, chain_index=None):
        context = []
        if fragment_id is not None:
            context.append(f"fragment_id={fragment_id!r}")
        if chain_index is not None:
            context.append(f"chain_index={chain_index}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)
        self.fragment_id = fragment_id
        self.chain_index = chain_index


class InternalConsistencyError(MosaicError, RuntimeError):
    pass


class SupportTooLargeError(MosaicError, ValueError):
    pass


class InconsistentArtifactError(MosaicError, ValueError):
    pass


class StaleCorpusError(InconsistentArtifactError):
    pass


class ConfigError(MosaicError, ValueError):
    """Carries every violation found in a job configuration."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
