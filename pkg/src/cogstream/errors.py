"""Exception hierarchy shared by all cogstream modules."""


class CogStreamError(Exception):
    """Base class for every error raised by this package."""


# --- TIFF / COG parsing and writing ---------------------------------------

class TiffError(CogStreamError):
    """Base class for file-format problems."""


class NotTiff(TiffError):
    """The byte source does not start with a TIFF/BigTIFF header."""


class TruncatedHeader(TiffError):
    """Header or IFD reads ran past the end of the source."""


class StripedNotTiled(TiffError):
    """The file uses strip layout; only tiled layout is supported."""


class UnsupportedCodec(TiffError):
    """Compression or predictor tag outside the supported set."""


class TileOutOfRange(CogStreamError, IndexError):
    """Tile coordinates outside the tile grid."""


class CorruptTile(CogStreamError):
    """A tile payload failed to decode."""


class SizeMismatch(CogStreamError):
    """Decoded tile length differs from the expected tile byte volume."""


# --- codecs -----------------------------------------------------------------

class UnsupportedScheme(CogStreamError):
    """Compression scheme or level outside the supported set."""


class CorruptStream(CogStreamError):
    """An entropy-coded payload could not be decoded."""


class LengthMismatch(CogStreamError):
    """Decoded payload length differs from the declared length."""


# --- byte sources -----------------------------------------------------------

class SourceError(CogStreamError):
    """Base class for byte-source failures."""


class NotFound(SourceError):
    """Local file or remote object does not exist."""


class RangeOutOfBounds(SourceError):
    """Requested byte range extends past the end of the object."""


class HttpStatusError(SourceError):
    """Remote endpoint answered with an unexpected HTTP status."""

    def __init__(self, status: int, message: str = ""):
        self.status = status
        super().__init__(message or f"unexpected HTTP status {status}")


class RequestTimeout(SourceError):
    """A range request did not complete within the deadline."""


class RetriesExhausted(SourceError):
    """All retry attempts for a range request failed."""


class ProtocolError(SourceError):
    """Endpoint does not implement HTTP range semantics."""


class BindFailure(SourceError):
    """The range server could not bind its address."""


# --- sampling ----------------------------------------------------------------

class WindowOutOfBounds(CogStreamError):
    """Window extends outside the image bounds."""


class PatchTooLarge(CogStreamError):
    """Patch size exceeds the image dimensions."""


# --- pipeline ----------------------------------------------------------------

class MissingTile(CogStreamError):
    """Patch assembly was handed an incomplete tile map."""


class SourceFailure(CogStreamError):
    """An epoch aborted because a source failed after retries.

    Carries the partial, invalid stats collected before the abort in
    ``partial_stats`` when available.
    """

    def __init__(self, message: str, partial_stats=None):
        super().__init__(message)
        self.partial_stats = partial_stats


class VerificationFailed(CogStreamError):
    """A delivered patch differed from the reference reader's output."""


# --- tuning -------------------------------------------------------------------

class EmptySpace(CogStreamError):
    """Search space contains no points."""


class InsufficientData(CogStreamError):
    """Not enough valid observations for the requested analysis."""


# --- configuration -------------------------------------------------------------

class ConfigError(CogStreamError):
    """Invalid loader configuration; message names the offending parameter."""
