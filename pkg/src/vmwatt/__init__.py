"""Guest-side VM power estimation with gradient-boosted regression trees."""

__version__ = "0.1.0"

from .metrics import FEATURE_NAMES  # noqa: E402

__all__ = ["FEATURE_NAMES", "__version__"]
