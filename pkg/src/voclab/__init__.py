"""voclab: child vocalization maturity classification toolkit.

Crowdsourced annotation aggregation into Cleaned/Uncleaned tiers,
corpus balancing and child-disjunct splitting, exact audio
normalization, a trainable 5-way classifier head, and the full
agreement/recall evaluation suite.
"""

__version__ = "0.1.0"
