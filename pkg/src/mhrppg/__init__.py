"""Multi-hierarchical 3D-CNN remote photoplethysmography in pure numpy.

Submodules: ``tensor_core`` (conv/pool/BN/softmax ops with backward passes),
``network``, ``losses``, ``opticalflow``, ``skinlabel``, ``dsp``,
``baselines``, ``metrics``, ``data``, ``train`` and ``cli``.
"""
__version__ = "0.1.0"
