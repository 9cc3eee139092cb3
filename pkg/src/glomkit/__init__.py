"""glomkit: whole-slide-image detection pipeline toolkit.

Annotation conversion (RLE / polygon / box), tile planning and patch export
for an external darknet-style detector, detection stitching, and IoU/area
based evaluation with ROC reporting.
"""

__version__ = "0.1.0"
