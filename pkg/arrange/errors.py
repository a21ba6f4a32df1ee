# -*- coding: utf-8 -*-
"""Exception hierarchy.

Every error raised by the engine derives from :class:`ArrangeError` and from
the builtin it specializes, so callers may catch either one.
"""


class ArrangeError(Exception):
  """Base class of all engine errors."""


class ShapeError(ArrangeError, ValueError):
  """Array shapes or channel counts do not agree."""


class ParameterError(ArrangeError, ValueError):
  """A scalar parameter is outside its domain."""


class FormatError(ArrangeError, ValueError):
  """A file does not follow its declared format."""


class ParseError(ArrangeError, ValueError):
  """An instruction or query does not match the grammar."""


class DegenerateEmbeddingError(ArrangeError, ValueError):
  """An embedding collapsed to the zero vector."""


class GenerationError(ArrangeError, RuntimeError):
  """Scene generation could not place every object."""


class EmptySceneError(ArrangeError, RuntimeError):
  """Segmentation found no instance to act upon."""


class DivergenceError(ArrangeError, RuntimeError):
  """Training produced a non-finite loss.

  Args:
      step (int): Index of the step whose loss was not finite.
  """
  def __init__(self, step, loss=None):
    self.step = step
    self.loss = loss
    super(DivergenceError, self).__init__(
        'Loss diverged at step {0} (value {1}).'.format(step, loss))
