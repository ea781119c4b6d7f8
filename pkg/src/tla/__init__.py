"""Two-level attention pipeline for fine-grained image classification.

Bottom-up region proposals are filtered by an object-level patch scorer, the
survivors train a domain classifier, whose mid-layer filters are clustered
into part detectors; the object and part streams fuse into the final
prediction. Ships with a synthetic desk-scale benchmark and experiment
driver.
"""

__version__ = "0.1.0"
