"""Meter-image degradation workbench, OCR harness, and reading ledger."""

__version__ = "0.1.0"
