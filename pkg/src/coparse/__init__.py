"""coparse: joint co-segmentation and co-labeling of tagged image corpora."""

__version__ = "0.1.0"
