"""Transcription, segmentation and speaker linking for historical parliamentary reports."""

__version__ = "0.1.0"
