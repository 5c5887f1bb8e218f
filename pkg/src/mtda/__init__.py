"""Multi-target adversarial domain adaptation toolkit.

Library layout:

- :mod:`mtda.autodiff` -- dense-tensor reverse-mode autodiff with a
  gradient-reversal primitive.
- :mod:`mtda.checkpoint` -- binary named-tensor container.
- :mod:`mtda.audio` -- log-mel frontend for 32 kHz / 10 s clips.
- :mod:`mtda.manifest` -- dataset manifest CSV handling.
- :mod:`mtda.synth` -- seeded synthetic multi-device dataset generator.
- :mod:`mtda.tsne` -- exact t-SNE for domain distances and exports.
- :mod:`mtda.geometry` -- domain distances and integer domain indices.
- :mod:`mtda.models` -- three-head adversarial model and loss variants.
- :mod:`mtda.training` -- training loop, evaluation, sweeps, exports.
- :mod:`mtda.cli` -- the ``mtda`` command.
"""

from mtda.errors import ContractError, NumericError, ShapeError

__all__ = ["ContractError", "NumericError", "ShapeError"]
__version__ = "0.1.0"
