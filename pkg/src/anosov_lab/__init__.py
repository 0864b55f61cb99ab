"""Numerical lab for Anosov endomorphisms of the 2-torus.

Submodules are imported on demand; the top level only exposes the error
hierarchy and the model loaders so that ``import anosov_lab`` stays cheap.
"""

from .errors import AnosovLabError

__version__ = "0.1.0"


def load_model(path_or_name, validate=True):
    """Load a model from a JSON file or one of the bundled names (see :func:`bundled_models`)."""
    from .cli import resolve_model

    return resolve_model(path_or_name, validate)


def bundled_models():
    from .cli import BUNDLED

    return sorted(BUNDLED)


__all__ = ["AnosovLabError", "load_model", "bundled_models", "__version__"]
