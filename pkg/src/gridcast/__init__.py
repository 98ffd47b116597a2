"""gridcast: grid-based spatiotemporal event forecasting.

Rasterizes point events, venue visit streams, and polygon demographics into
half-day frame stacks, trains convolutional-recurrent forecasters plus
reference baselines, and scores them with neighborhood-aware metrics.
"""

__version__ = "0.1.0"
