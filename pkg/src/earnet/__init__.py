"""Lightweight CNN toolkit for real-time otoscopic image classification.

Subpackages are plain modules: ``tensor`` (autodiff core), ``ops``/``layers``
(neural-network building blocks), ``model`` (network definitions),
``train``/``metrics``/``ranking``/``bench`` (experiment loop and evaluation),
``gradcam`` (saliency maps), ``data`` (decoding, preprocessing, synthetic
datasets), ``weights`` (checkpoint format), ``service``/``cli`` (external
interfaces).
"""

__version__ = "0.1.0"
