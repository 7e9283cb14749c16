"""orthoview: multiview depth-image point-cloud classification at desk scale."""

__version__ = "0.1.0"
