"""polyfuzz: multi-task grammar, translation and evolution based injection fuzzing for WAFs."""

from .grammar import ALL_TYPES, InjectionType

__version__ = "0.1.0"

__all__ = ["ALL_TYPES", "InjectionType", "__version__"]
