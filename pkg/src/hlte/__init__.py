"""Long-term heterogeneous treatment effect meta-learners."""

__version__ = "0.1.0"

from .datamodel import CombinedDataset, load_csv, save_csv  # noqa: E402
from .learners import LEARNER_KINDS, HLTELearner, crossfit  # noqa: E402
from .simulate import SemiSyntheticConfig, SyntheticConfig, scenario  # noqa: E402

__all__ = ["CombinedDataset", "HLTELearner", "LEARNER_KINDS", "SemiSyntheticConfig", "SyntheticConfig",
           "crossfit", "load_csv", "save_csv", "scenario", "__version__"]
