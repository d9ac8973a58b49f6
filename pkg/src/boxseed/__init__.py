"""boxseed: seed 3D vehicle bounding-box dimensions for auto-labeling.

The pipeline samples the best camera crops of a tracked vehicle, asks a
vision-language model to identify the vehicle (make / model / generation)
and report its factory dimensions, and scores the resulting dimension
seeds against ground-truth labels.
"""

__version__ = "0.1.0"
