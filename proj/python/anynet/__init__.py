"""Anytime image classifiers built from nested thin sub-networks.

The heavy lifting lives in the compiled extension; this package re-exports
its surface: ArchConfig, build_network, cost audits, budget restriction,
interruptible streams, synthetic data, training, evaluation, checkpoints,
and the finite-difference gradient battery.
"""

try:
    from ._anynet import *  # noqa: F401,F403  (installed layout)
    from . import _anynet as _impl
except ImportError:  # build-tree layout: the extension sits directly on PYTHONPATH
    from _anynet import *  # noqa: F401,F403
    import _anynet as _impl

__version__ = "1.0.0"
__all__ = [name for name in dir(_impl) if not name.startswith("_")]
