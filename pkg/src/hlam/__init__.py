"""Structure learning for hierarchical latent attribute models."""

from .hierarchy import Hierarchy, extract_hierarchy, induce_patterns
from .identifiability import check_identifiability, check_theorem1
from .model import ItemNoise, ModelKind, PatternSet, ResponseData
from .pipeline import FitConfig, FitResult, fit

__all__ = ["FitConfig", "FitResult", "Hierarchy", "ItemNoise", "ModelKind", "PatternSet", "ResponseData",
           "check_identifiability", "check_theorem1", "extract_hierarchy", "fit", "induce_patterns"]
__version__ = "0.1.0"
