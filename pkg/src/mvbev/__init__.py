"""Unsupervised domain adaptation for multi-view BEV pedestrian detection at desk scale."""

__version__ = "0.1.0"
