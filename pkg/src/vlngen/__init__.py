"""vlngen: verified path-instruction pair generation for VLN from tour videos."""

__version__ = "0.1.0"
