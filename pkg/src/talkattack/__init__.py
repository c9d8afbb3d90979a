"""Personal-attack detection and longitudinal analysis for wiki talk-page corpora."""

__version__ = "0.1.0"
