"""Toolkit-wide error type with stable machine-readable codes."""

from __future__ import annotations


class ToolkitError(Exception):
    """Raised on data or usage errors; `code` identifies the condition.

    Codes in use include SHAPE_MISMATCH, LABEL_ERROR, MISSING_FILE,
    SCHEMA_ERROR, BAD_FRACTIONS, EMPTY_CLASS, BAD_SPACING, BAD_SIZE,
    ZERO_REFERENCE, CONSTANT_INPUT, LENGTH_MISMATCH, MISSING_SOURCE,
    EMPTY_MYOCARDIUM, EMPTY_INPUT, NO_USABLE_MAPS, SINGLE_CLASS,
    CLASS_TOO_SMALL, MISSING_FEATURE, EMPTY_TRAIN, SINGLE_CLASS_TRAIN,
    SUBJECT_MISMATCH, BAD_SPEC, IO_ERROR.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
