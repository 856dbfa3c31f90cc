"""Traffic-camera analytics pipeline.

Turns raw traffic-camera snapshots into viewpoint-normalized, per-class
density statistics, and turns those statistics into validated, scored
natural-language traffic reports.
"""

__version__ = "0.1.0"
