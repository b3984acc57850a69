"""Chart-camera fusion toolkit for maritime navigational aids.

Associates objects detected in camera frames with chart markers, via a
ray-casting baseline, a distance-estimation + assignment baseline with
online calibration, and an end-to-end fusion transformer whose decoder
queries are chart markers.
"""

__version__ = "0.1.0"
