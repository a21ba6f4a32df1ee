# -*- coding: utf-8 -*-
"""Deterministic raster math.

Rasters are plain ``numpy`` arrays in row-major ``(row, col, channel)`` order:

    - a *grid* is a finite ``(H, W, C)`` float array (observations, feature
      maps);
    - a *score map* is a single-channel grid, kept as a ``(H, W)`` array;
    - a *distribution* is a non-negative ``(H, W)`` (or ``(n, H, W)``) array
      summing to one.

Every routine here is a pure function of its inputs. Correlation sums run in a
fixed order (kernel row, then column, then channel) so results are
bit-reproducible regardless of thread count.
"""
from __future__ import division
from collections import namedtuple

import numpy as np

from .errors import ShapeError, ParameterError

ROTATIONS = 36
ANGLE_STEP = 10
PROBABILITY_FLOOR = 1e-12


class RotationAngle(namedtuple('RotationAngle', 'index')):
  """One of the ``n`` discrete placement rotations, ``degrees = 10 * index``."""
  __slots__ = ()

  def __new__(cls, index):
    index = int(index)
    if not 1 <= index <= ROTATIONS:
      raise ParameterError(
          'Rotation index must lie in [1, {0}], got {1}.'.format(ROTATIONS, index))
    return super(RotationAngle, cls).__new__(cls, index)

  @property
  def degrees(self):
    return ANGLE_STEP * self.index


def rotation_angles(count=ROTATIONS):
  """The angle sweep ``tau_1 .. tau_count``."""
  return [RotationAngle(j) for j in range(1, count + 1)]


def angle_index(degrees):
  """Nearest rotation bin of an angle in degrees.

  Halves round up (95 degrees falls in bin 10); a full turn maps to bin 36.
  """
  index = int(np.floor(float(degrees) / ANGLE_STEP + 0.5)) % ROTATIONS
  return index or ROTATIONS


def as_grid(data, channels=None):
  """Validate and return ``data`` as a float ``(H, W, C)`` grid."""
  grid = np.asarray(data, dtype=np.float64)
  if grid.ndim == 2:
    grid = grid[:, :, None]
  if grid.ndim != 3:
    raise ShapeError('Expected a (H, W, C) grid, got shape {0}.'.format(grid.shape))
  if channels is not None and grid.shape[2] != channels:
    raise ShapeError('Expected {0} channels, got {1}.'.format(channels, grid.shape[2]))
  if not np.all(np.isfinite(grid)):
    raise ShapeError('Grid holds non-finite values.')
  return grid


def as_score(data):
  """Validate and return a single-channel grid as a ``(H, W)`` array."""
  score = np.asarray(data, dtype=np.float64)
  if score.ndim == 3 and score.shape[2] == 1:
    score = score[:, :, 0]
  if score.ndim != 2:
    raise ShapeError('Expected a single-channel grid, got shape {0}.'.format(score.shape))
  return score


def rotate_crop(crop, angle):
  """Rotate a square crop counter-clockwise about its exact center.

  Each destination pixel samples the nearest source pixel of the inverse
  rotation; samples falling outside the crop are zero. Quarter turns are exact
  index permutations.

  Args:
      crop (np.ndarray): ``(n, n)`` or ``(n, n, C)`` array.
      angle (RotationAngle or float): Rotation, in degrees if a number.

  Returns:
      Rotated array of the same shape.

  Raises:
      ShapeError: If the crop is not square.
  """
  grid = np.asarray(crop)
  if grid.ndim < 2 or grid.shape[0] != grid.shape[1]:
    raise ShapeError('rotate_crop expects a square crop, got {0}.'.format(grid.shape))
  degrees = getattr(angle, 'degrees', angle)
  size = grid.shape[0]
  center = (size - 1) / 2.
  theta = np.deg2rad(float(degrees))
  cos, sin = np.cos(theta), np.sin(theta)

  rows, cols = np.mgrid[0:size, 0:size]
  # x to the right, y upwards
  x = cols - center
  y = center - rows
  src_x = cos * x + sin * y
  src_y = -sin * x + cos * y
  src_cols = np.floor(src_x + center + 0.5).astype(int)
  src_rows = np.floor(center - src_y + 0.5).astype(int)

  inside = ((src_rows >= 0) & (src_rows < size) &
      (src_cols >= 0) & (src_cols < size))
  rotated = np.zeros_like(grid)
  rotated[inside] = grid[src_rows[inside], src_cols[inside]]
  return rotated


def _check_kernels(fmap, bank):
  height, width, channels = fmap.shape
  if bank.ndim != 4:
    raise ShapeError('Expected (n, kH, kW, C) kernels, got {0}.'.format(bank.shape))
  _, kh, kw, kc = bank.shape
  if kc != channels:
    raise ShapeError(
        'Kernel has {0} channels, feature has {1}.'.format(kc, channels))
  if kh % 2 == 0 or kw % 2 == 0:
    raise ShapeError('Kernel sides must be odd, got {0}x{1}.'.format(kh, kw))
  if kh > height or kw > width:
    raise ShapeError('Kernel {0}x{1} exceeds feature {2}x{3}.'.format(
        kh, kw, height, width))


def cross_correlate_many(feature, kernels):
  """Correlate one feature grid with a bank of kernels (zero padding).

  ``scores[j, u, v] = sum_{r, c, ch} feature[u + r - kH//2, v + c - kW//2, ch]
  * kernels[j, r, c, ch]``, accumulated in kernel row, column, channel order.

  Args:
      feature (np.ndarray): ``(H, W, C)`` grid.
      kernels (np.ndarray): ``(n, kH, kW, C)`` bank with odd sides.

  Returns:
      ``(n, H, W)`` score volume.
  """
  fmap = as_grid(feature)
  bank = np.asarray(kernels, dtype=np.float64)
  _check_kernels(fmap, bank)
  height, width, channels = fmap.shape
  count, kh, kw, _ = bank.shape
  ph, pw = kh // 2, kw // 2
  padded = np.pad(fmap, ((ph, ph), (pw, pw), (0, 0)), mode='constant')

  scores = np.zeros((count, height, width))
  for row in range(kh):
    for col in range(kw):
      window = padded[row:row + height, col:col + width]
      for channel in range(channels):
        scores += window[None, :, :, channel] * bank[:, row, col, channel, None, None]
  return scores


def cross_correlate(feature, kernel):
  """Correlate a feature grid with a single odd-sided kernel.

  Returns:
      ``(H, W)`` score map aligned pixel for pixel with ``feature``.

  Raises:
      ShapeError: On channel mismatch or an even/oversized kernel.
  """
  fmap = as_grid(feature)
  kern = as_grid(kernel)
  return cross_correlate_many(fmap, kern[None])[0]


def cross_correlate_backward(feature, kernels, grad_scores):
  """Gradients of :func:`cross_correlate_many` w.r.t. feature and kernels."""
  fmap = as_grid(feature)
  bank = np.asarray(kernels, dtype=np.float64)
  _check_kernels(fmap, bank)
  grad = np.asarray(grad_scores, dtype=np.float64)
  height, width, channels = fmap.shape
  count, kh, kw, _ = bank.shape
  if grad.shape != (count, height, width):
    raise ShapeError('Score gradient shape {0} does not match {1}.'.format(
        grad.shape, (count, height, width)))
  ph, pw = kh // 2, kw // 2
  padded = np.pad(fmap, ((ph, ph), (pw, pw), (0, 0)), mode='constant')

  grad_padded = np.zeros_like(padded)
  grad_kernels = np.zeros_like(bank)
  for row in range(kh):
    for col in range(kw):
      window = padded[row:row + height, col:col + width]
      grad_kernels[:, row, col, :] = np.tensordot(grad, window, axes=([1, 2], [0, 1]))
      grad_padded[row:row + height, col:col + width] += np.tensordot(
          grad, bank[:, row, col, :], axes=([0], [0]))
  grad_feature = grad_padded[ph:ph + height, pw:pw + width]
  return grad_feature, grad_kernels


def softmax(scores, temperature=1.):
  """Temperature softmax over every entry of ``scores`` (any shape)."""
  if not temperature > 0:
    raise ParameterError('Temperature must be positive, got {0}.'.format(temperature))
  logits = np.asarray(scores, dtype=np.float64) / temperature
  logits = logits - logits.max()
  weights = np.exp(logits)
  return weights / weights.sum()


def softmax2d(score, temperature=1.):
  """Turn a score map into a pixel distribution.

  Raises:
      ParameterError: If ``temperature <= 0``.
  """
  return softmax(as_score(score), temperature)


def argmax_pixel(score):
  """Coordinates of the maximum; ties go to the smallest row-major index."""
  values = as_score(score)
  if values.size == 0:
    raise ShapeError('argmax_pixel of an empty grid.')
  flat = int(np.argmax(values))
  return divmod(flat, values.shape[1])


def cross_entropy(pred, target):
  """``-ln pred[target]`` with probabilities floored at ``1e-12``.

  Args:
      pred (np.ndarray): Distribution of any dimensionality.
      target (tuple): Index into ``pred``.

  Raises:
      IndexError: If ``target`` lies outside ``pred``.
  """
  probs = np.asarray(pred, dtype=np.float64)
  target = tuple(int(t) for t in target)
  if len(target) != probs.ndim or any(
      not 0 <= t < n for t, n in zip(target, probs.shape)):
    raise IndexError('Target {0} outside distribution of shape {1}.'.format(
        target, probs.shape))
  return float(-np.log(max(probs[target], PROBABILITY_FLOOR)))


def softmax_cross_entropy_grad(probs, target):
  """Gradient of ``cross_entropy(softmax(z), target)`` w.r.t. ``z``."""
  grad = np.array(probs, dtype=np.float64)
  target = tuple(int(t) for t in target)
  if grad[target] < PROBABILITY_FLOOR:
    # the floor is flat
    return np.zeros_like(grad)
  grad[target] -= 1.
  return grad


class ConvLayer(object):
  """Same-padding convolution layer (correlation convention, as in CNNs).

  Args:
      kernel (np.ndarray): ``(kH, kW, Cin, Cout)`` weights, odd sides.
      bias (np.ndarray): ``(Cout,)`` bias.
      stride (int): Output subsampling step.
  """
  def __init__(self, kernel, bias, stride=1):
    kernel = np.array(kernel, dtype=np.float64)
    bias = np.array(bias, dtype=np.float64)
    if kernel.ndim != 4 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
      raise ShapeError('Kernel must be (odd, odd, Cin, Cout), got {0}.'.format(kernel.shape))
    if bias.shape != (kernel.shape[3],):
      raise ShapeError('Bias shape {0} does not match {1} outputs.'.format(
          bias.shape, kernel.shape[3]))
    if not (np.all(np.isfinite(kernel)) and np.all(np.isfinite(bias))):
      raise ParameterError('Layer weights must be finite.')
    if int(stride) < 1:
      raise ParameterError('Stride must be >= 1, got {0}.'.format(stride))
    self.kernel = kernel
    self.bias = bias
    self.stride = int(stride)

  @property
  def channels_in(self):
    return self.kernel.shape[2]

  @property
  def channels_out(self):
    return self.kernel.shape[3]

  def copy(self):
    return ConvLayer(self.kernel.copy(), self.bias.copy(), self.stride)

  def __repr__(self):
    return 'ConvLayer({0}x{1}, {2}->{3}, stride={4})'.format(
        self.kernel.shape[0], self.kernel.shape[1],
        self.channels_in, self.channels_out, self.stride)


def _patches(layer, grid):
  kh, kw = layer.kernel.shape[:2]
  ph, pw = kh // 2, kw // 2
  padded = np.pad(grid, ((ph, ph), (pw, pw), (0, 0)), mode='constant')
  # (H, W, Cin, kH, kW)
  windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(0, 1))
  return windows


def conv_forward(layer, grid):
  """Same-padding convolution plus bias; activation is applied by the caller.

  Raises:
      ShapeError: If input channels differ from ``layer.channels_in``.
  """
  grid = as_grid(grid)
  if grid.shape[2] != layer.channels_in:
    raise ShapeError('Layer expects {0} channels, input has {1}.'.format(
        layer.channels_in, grid.shape[2]))
  windows = _patches(layer, grid)
  out = np.tensordot(windows, layer.kernel, axes=([2, 3, 4], [2, 0, 1]))
  out = out + layer.bias
  step = layer.stride
  return out[::step, ::step]


def conv_backward(layer, grid, grad_out):
  """Analytic gradients of :func:`conv_forward`.

  Returns:
      ``(grad_kernel, grad_bias, grad_input)``.
  """
  grid = as_grid(grid)
  if grid.shape[2] != layer.channels_in:
    raise ShapeError('Layer expects {0} channels, input has {1}.'.format(
        layer.channels_in, grid.shape[2]))
  height, width = grid.shape[:2]
  step = layer.stride
  out_shape = (len(range(0, height, step)), len(range(0, width, step)),
      layer.channels_out)
  grad_out = np.asarray(grad_out, dtype=np.float64)
  if grad_out.shape != out_shape:
    raise ShapeError('Output gradient shape {0} does not match {1}.'.format(
        grad_out.shape, out_shape))
  grad_full = np.zeros((height, width, layer.channels_out))
  grad_full[::step, ::step] = grad_out

  windows = _patches(layer, grid)
  grad_bias = grad_full.sum(axis=(0, 1))
  # windows (H, W, Cin, kH, kW) x grad (H, W, Cout) -> (Cin, kH, kW, Cout)
  grad_kernel = np.tensordot(windows, grad_full, axes=([0, 1], [0, 1]))
  grad_kernel = grad_kernel.transpose(1, 2, 0, 3)

  kh, kw = layer.kernel.shape[:2]
  ph, pw = kh // 2, kw // 2
  grad_padded = np.zeros((height + 2 * ph, width + 2 * pw, layer.channels_in))
  for row in range(kh):
    for col in range(kw):
      grad_padded[row:row + height, col:col + width] += np.tensordot(
          grad_full, layer.kernel[row, col], axes=([2], [1]))
  grad_input = grad_padded[ph:ph + height, pw:pw + width]
  return grad_kernel, grad_bias, grad_input
