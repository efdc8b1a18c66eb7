"""Network-flow analytics on compact hierarchical summaries.

Raw flow records are summarized into bounded self-adjusting trees, stored
per site/feature-set/time-bin, rolled up across time and sites, and
queried through an SQL-like language, a CLI shell and an HTTP API.
"""

__version__ = "0.1.0"

from .hierarchy import Feature, FeatureSet, FlowKey  # noqa: F401
from .flowtree import Counters, Flowtree, PopReport  # noqa: F401
