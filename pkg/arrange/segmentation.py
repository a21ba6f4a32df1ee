# -*- coding: utf-8 -*-
"""Instance masks, bounding boxes and crops of every object in a view.

The toy renderer paints exact palette colors, so connected components of
equal color are exact object instances: each distinct non-background color is
labelled separately with 4-connectivity, which also splits touching objects
of different colors.
"""
from __future__ import division
from collections import namedtuple

import numpy as np

from scipy import ndimage

from .errors import FormatError, ParameterError
from .numerics import as_grid
from .scene import BACKGROUND
from . import netpbm

MIN_AREA = 4
CROP_PAD = 1
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


class InstanceMask(namedtuple('InstanceMask', 'id mask bbox area')):
  """One segmented object.

  Attributes:
      id (int): Dense id starting at 1.
      mask (np.ndarray): ``(H, W)`` boolean mask.
      bbox (tuple): Inclusive ``(row0, col0, row1, col1)``.
      area (int): Number of set pixels.
  """
  __slots__ = ()

  @property
  def center(self):
    row0, col0, row1, col1 = self.bbox
    return (row0 + row1) / 2., (col0 + col1) / 2.


class SegmentationResult(namedtuple('SegmentationResult', 'instances')):
  __slots__ = ()

  def __len__(self):
    return len(self.instances)

  def __iter__(self):
    return iter(self.instances)

  def instance_at(self, pixel):
    """The instance covering ``pixel``, or None."""
    for inst in self.instances:
      if inst.mask[pixel[0], pixel[1]]:
        return inst
    return None

  def label_map(self, shape):
    labels = np.zeros(shape, dtype=np.int32)
    for inst in self.instances:
      labels[inst.mask] = inst.id
    return labels

  def __eq__(self, other):
    if not isinstance(other, SegmentationResult) or len(self) != len(other):
      return False
    return all(a.id == b.id and a.bbox == b.bbox and a.area == b.area and
        np.array_equal(a.mask, b.mask) for a, b in zip(self, other))

  def __ne__(self, other):
    return not self == other

  __hash__ = None


def _instance(mask):
  rows, cols = np.nonzero(mask)
  bbox = (int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))
  return mask, bbox, int(rows.size)


def _ordered(masks):
  """Build a result ordered by bbox top-left corner, then first pixel."""
  found = [_instance(mask) for mask in masks]
  found.sort(key=lambda item: (item[1][0], item[1][1], int(np.argmax(item[0].ravel()))))
  return SegmentationResult(tuple(
      InstanceMask(id=k + 1, mask=mask, bbox=bbox, area=area)
      for k, (mask, bbox, area) in enumerate(found)))


def segment(obs, background=BACKGROUND, min_area=MIN_AREA):
  """Split an RGB observation into color-homogeneous 4-connected instances.

  Args:
      obs (np.ndarray): ``(H, W, 3)`` observation.
      background (tuple): Background RGB value.
      min_area (int): Components smaller than this are dropped.

  Returns:
      SegmentationResult (possibly empty).
  """
  image = as_grid(obs, channels=3)
  foreground = ~np.all(image == np.asarray(background, dtype=np.float64), axis=2)
  if not foreground.any():
    return SegmentationResult(())
  colors = np.unique(image[foreground], axis=0)
  masks = []
  for color in colors:
    same = np.all(image == color, axis=2)
    labels, count = ndimage.label(same, structure=FOUR_CONNECTED)
    for label in range(1, count + 1):
      mask = labels == label
      if mask.sum() >= min_area:
        masks.append(mask)
  return _ordered(masks)


def crop(obs, inst, pad=CROP_PAD):
  """Square, mask-zeroed crop around one instance.

  The side is ``max(bbox_h, bbox_w) + 2 * pad``, centered on the bbox center
  (rounded down), with zero fill outside the image.
  """
  if pad < 0:
    raise ParameterError('Crop pad must be >= 0, got {0}.'.format(pad))
  image = as_grid(obs)
  height, width, channels = image.shape
  row0, col0, row1, col1 = inst.bbox
  side = max(row1 - row0 + 1, col1 - col0 + 1) + 2 * pad
  top = int(np.floor((row0 + row1) / 2. - (side - 1) / 2.))
  left = int(np.floor((col0 + col1) / 2. - (side - 1) / 2.))

  masked = np.where(inst.mask[:, :, None], image, 0.)
  out = np.zeros((side, side, channels))
  src_r0, src_r1 = max(top, 0), min(top + side, height)
  src_c0, src_c1 = max(left, 0), min(left + side, width)
  if src_r0 < src_r1 and src_c0 < src_c1:
    out[src_r0 - top:src_r1 - top, src_c0 - left:src_c1 - left] = \
        masked[src_r0:src_r1, src_c0:src_c1]
  return out


def export_masks(seg, shape, path):
  """Write instance ids as an 8-bit P5 label map."""
  if len(seg) > 255:
    raise FormatError('Label maps hold at most 255 instances, got {0}.'.format(len(seg)))
  netpbm.write_pgm(seg.label_map(shape), path, depth=8)


def import_masks(path, shape=None):
  """Read a P5 label map written by an external segmenter.

  Labels are re-densified: any set of nonzero labels becomes ``1..K``.

  Args:
      path (str): PGM file.
      shape (tuple): Expected ``(H, W)`` of the active observation.

  Raises:
      FormatError: For non-PGM input or a size mismatch.
  """
  labels = netpbm.read_pgm(path)
  if shape is not None and labels.shape != tuple(shape[:2]):
    raise FormatError('Label map is {0}, observation is {1}.'.format(
        labels.shape, tuple(shape[:2])))
  values = [v for v in np.unique(labels) if v != 0]
  return _ordered([labels == v for v in values])
