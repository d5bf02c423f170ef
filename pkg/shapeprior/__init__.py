"""Shape Prior - complementary-task learning for multi-organ segmentation"""

__version__ = "0.3.0"
__description__ = "Distance-map and contour-map complementary tasks for multi-organ segmentation"
