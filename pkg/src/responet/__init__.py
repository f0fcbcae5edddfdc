"""Learning causal response operators of linear dynamical systems.

Subpackages are imported lazily so the command line can pin BLAS thread
counts before numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = ("lindyn", "signalgen", "neuralcore", "operatornets", "harness", "figures", "cli")


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
