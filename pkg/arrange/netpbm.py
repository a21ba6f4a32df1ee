# -*- coding: utf-8 -*-
"""Binary PGM/PPM exchange through Pillow.

- Observations are written as P6 (8-bit RGB) from ``[0, 1]`` floats.
- Label maps are P5 with one byte per pixel (0 = background, k = instance k).
- Score maps are P5 with 16 bits per pixel.
"""
import numpy as np

from PIL import Image

from .errors import FormatError


def _to_bytes(grid):
  return np.clip(np.floor(np.asarray(grid, dtype=np.float64) * 255. + 0.5), 0, 255).astype(np.uint8)


def write_ppm(grid, path):
  """Write an ``(H, W, 3)`` float grid as binary PPM."""
  Image.fromarray(_to_bytes(grid)).save(path, format='PPM')


def read_ppm(path):
  """Read a binary PPM into an ``(H, W, 3)`` float grid in ``[0, 1]``."""
  image = _open(path)
  if image.mode != 'RGB':
    raise FormatError('{0} is not an RGB PPM (mode {1}).'.format(path, image.mode))
  return np.asarray(image, dtype=np.float64) / 255.


def write_pgm(values, path, depth=8):
  """Write a 2-D integer array as binary PGM of 8 or 16 bits per pixel."""
  values = np.asarray(values)
  if values.ndim != 2:
    raise FormatError('PGM data must be 2-D, got shape {0}.'.format(values.shape))
  if depth == 8:
    if values.min() < 0 or values.max() > 255:
      raise FormatError('Values exceed the 8-bit range.')
    image = Image.fromarray(values.astype(np.uint8))
  elif depth == 16:
    if values.min() < 0 or values.max() > 65535:
      raise FormatError('Values exceed the 16-bit range.')
    image = Image.fromarray(values.astype(np.int32))
  else:
    raise FormatError('Unsupported PGM depth {0}.'.format(depth))
  image.save(path, format='PPM')


def read_pgm(path):
  """Read an 8-bit binary PGM into a 2-D ``uint8`` array.

  Raises:
      FormatError: If the file is not a binary 8-bit PGM.
  """
  with open(path, 'rb') as fl:
    magic = fl.read(2)
  if magic != b'P5':
    raise FormatError('{0} is not a binary PGM (magic {1!r}).'.format(path, magic))
  image = _open(path)
  if image.mode != 'L':
    raise FormatError('{0} is not an 8-bit PGM (mode {1}).'.format(path, image.mode))
  return np.asarray(image, dtype=np.uint8)


def _open(path):
  try:
    image = Image.open(path)
    image.load()
  except (IOError, OSError, SyntaxError, ValueError) as e:
    raise FormatError('Cannot decode {0}: {1}'.format(path, e))
  return image
