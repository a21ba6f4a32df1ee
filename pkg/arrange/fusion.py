# -*- coding: utf-8 -*-
"""Instance-level semantic fusion.

Each instance embedding is blended with the global (whole observation)
embedding. The blend weight of instance ``i`` is a temperature softmax over
``zeta_i + eta_i``, where ``zeta_i`` is its cosine to the global embedding and
``eta_i`` its mean cosine to the other instances:

    eta_i   = sum_{j != i} cos(e_i, e_j) / N
    omega   = softmax((zeta + eta) / tau)
    E_i     = normalize(omega_i * e_g + (1 - omega_i) * e_i)

Confidence maps then paint ``s_i = cos(E_i, e_text)`` onto the instance masks.
"""
from __future__ import division
from collections import namedtuple

import numpy as np

from .embedding import EmbeddingVector, normalize, normalize_backward
from .errors import DegenerateEmbeddingError, ParameterError, ShapeError
from .numerics import softmax
from . import netpbm

FUSION_TEMPERATURE = 0.07
BACKGROUND_SCORE = -1.


class FusionWeights(namedtuple('FusionWeights', 'omega tau')):
  __slots__ = ()


class SimilarityProfile(namedtuple('SimilarityProfile', 'zeta eta_matrix eta')):
  """Per-instance statistics feeding the fusion weights.

  Attributes:
      zeta (np.ndarray): Cosine of every instance to the global embedding.
      eta_matrix (np.ndarray): Pairwise instance cosines.
      eta (np.ndarray): Mean off-diagonal cosine per instance.
  """
  __slots__ = ()


class ConfidenceMap(namedtuple('ConfidenceMap', 'scores per_instance')):
  """Score raster: every pixel of instance ``i`` holds ``s_i``."""
  __slots__ = ()


def _values(vector):
  return vector.values if isinstance(vector, EmbeddingVector) else np.asarray(
      vector, dtype=np.float64)


def cosine(a, b):
  """Cosine similarity of two nonzero vectors.

  Raises:
      DegenerateEmbeddingError: If either vector is zero.
      ShapeError: On a dimension mismatch.
  """
  a, b = _values(a), _values(b)
  if a.shape != b.shape:
    raise ShapeError('Cannot compare vectors of shape {0} and {1}.'.format(a.shape, b.shape))
  norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
  if not (norm_a > 0 and norm_b > 0):
    raise DegenerateEmbeddingError('Cosine of a zero vector.')
  return float(np.dot(a, b) / (norm_a * norm_b))


def _cosine_matrix(rows, columns):
  rows = rows / np.linalg.norm(rows, axis=1, keepdims=True)
  columns = columns / np.linalg.norm(columns, axis=1, keepdims=True)
  return rows.dot(columns.T)


def _stack(instances):
  matrix = np.array([_values(e) for e in instances], dtype=np.float64)
  if matrix.ndim != 2 or not len(matrix):
    raise ParameterError('Fusion needs at least one instance embedding.')
  if np.any(np.linalg.norm(matrix, axis=1) == 0):
    raise DegenerateEmbeddingError('Instance embedding is the zero vector.')
  return matrix


def _eta_divisor(count, unbiased):
  return max(count - 1, 1) if unbiased else count


def similarity_profile(instances, global_embedding, unbiased=False):
  """``zeta``, the pairwise cosine matrix and ``eta`` for a set of instances.

  Args:
      instances (list): Instance embeddings, ``N >= 1``.
      global_embedding (EmbeddingVector): Whole-observation embedding.
      unbiased (bool): Divide ``eta`` by ``N - 1`` instead of ``N``.

  Raises:
      ParameterError: For an empty instance list.
  """
  matrix = _stack(instances)
  glob = _values(global_embedding)
  if glob.shape != matrix.shape[1:]:
    raise ShapeError('Global embedding has dim {0}, instances {1}.'.format(
        glob.shape[0], matrix.shape[1]))
  if not np.linalg.norm(glob) > 0:
    raise DegenerateEmbeddingError('Global embedding is the zero vector.')
  zeta = _cosine_matrix(matrix, glob[None])[:, 0]
  eta_matrix = _cosine_matrix(matrix, matrix)
  off_diagonal = eta_matrix.sum(axis=1) - np.diag(eta_matrix)
  eta = off_diagonal / _eta_divisor(len(matrix), unbiased)
  return SimilarityProfile(zeta, eta_matrix, eta)


def fusion_weights(profile, tau=FUSION_TEMPERATURE):
  """Temperature softmax of ``zeta + eta`` over all instances.

  Raises:
      ParameterError: If ``tau <= 0``.
  """
  return FusionWeights(softmax(profile.zeta + profile.eta, tau), float(tau))


def fuse(global_embedding, instance, omega_i):
  """Convex blend of global and instance embedding, re-normalized.

  Raises:
      ShapeError: On a dimension mismatch.
      ParameterError: If ``omega_i`` lies outside ``[0, 1]``.
  """
  glob, inst = _values(global_embedding), _values(instance)
  if glob.shape != inst.shape:
    raise ShapeError('Cannot fuse dims {0} and {1}.'.format(glob.shape, inst.shape))
  if not 0. <= omega_i <= 1.:
    raise ParameterError('Fusion weight must lie in [0, 1], got {0}.'.format(omega_i))
  return EmbeddingVector(normalize(omega_i * glob + (1. - omega_i) * inst), True)


def fuse_instances(instances, global_embedding, tau=FUSION_TEMPERATURE, unbiased=False):
  """Fuse every instance with the global embedding.

  Returns:
      ``(fused embeddings, FusionWeights, SimilarityProfile)``.
  """
  profile = similarity_profile(instances, global_embedding, unbiased)
  weights = fusion_weights(profile, tau)
  fused = [fuse(global_embedding, inst, float(w))
      for inst, w in zip(instances, weights.omega)]
  return fused, weights, profile


def _check_masks(seg, shape):
  for inst in seg:
    if inst.mask.shape != tuple(shape):
      raise ShapeError('Mask of instance {0} is {1}, map is {2}.'.format(
          inst.id, inst.mask.shape, tuple(shape)))


def paint(per_instance, seg, shape, floor=BACKGROUND_SCORE):
  """Paint one value per instance onto its mask."""
  shape = tuple(shape[:2])
  _check_masks(seg, shape)
  scores = np.full(shape, float(floor))
  for inst, value in zip(seg, per_instance):
    scores[inst.mask] = value
  return scores


def confidence_map(fused, text, seg, shape, floor=BACKGROUND_SCORE):
  """Confidence score map of a text query over the segmented instances.

  Raises:
      ShapeError: If a mask does not match ``shape``.
      ParameterError: If the number of fused embeddings differs from the
        number of instances.
  """
  if len(fused) != len(seg):
    raise ParameterError('{0} fused embeddings for {1} instances.'.format(
        len(fused), len(seg)))
  per_instance = [cosine(e, text) for e in fused]
  return ConfidenceMap(paint(per_instance, seg, shape, floor), per_instance)


def export_confidence(cmap, path):
  """Write a confidence map as a 16-bit PGM, ``value = round((s + 1) / 2 * 65535)``."""
  scores = np.clip(np.asarray(cmap.scores), -1., 1.)
  netpbm.write_pgm(np.floor((scores + 1.) / 2. * 65535. + 0.5).astype(np.int64), path, depth=16)


class ScoreCache(namedtuple('ScoreCache',
    'instances glob text omega pre_fused fused eta_divisor tau')):
  __slots__ = ()


def _cosine_backward(a, b, grad):
  """Gradients of ``cos(a, b)`` scaled by ``grad``."""
  norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
  cos = np.dot(a, b) / (norm_a * norm_b)
  grad_a = grad * (b / (norm_a * norm_b) - cos * a / norm_a ** 2)
  grad_b = grad * (a / (norm_a * norm_b) - cos * b / norm_b ** 2)
  return grad_a, grad_b


def score_instances(instances, global_embedding, text, tau=FUSION_TEMPERATURE,
    unbiased=False):
  """Per-instance confidence scores ``s_i`` with a cache for the backward pass.

  Args:
      instances (np.ndarray): ``(N, dim)`` instance embeddings.
      global_embedding (np.ndarray): ``(dim,)``.
      text (np.ndarray): ``(dim,)`` text embedding.

  Returns:
      ``(scores, ScoreCache)``.
  """
  matrix = _stack(instances)
  glob, text = _values(global_embedding), _values(text)
  profile = similarity_profile(matrix, glob, unbiased)
  omega = fusion_weights(profile, tau).omega
  pre_fused = omega[:, None] * glob[None] + (1. - omega[:, None]) * matrix
  fused = np.array([normalize(row) for row in pre_fused])
  scores = np.array([cosine(row, text) for row in fused])
  cache = ScoreCache(matrix, glob, text, omega, pre_fused, fused,
      _eta_divisor(len(matrix), unbiased), float(tau))
  return scores, cache


def score_instances_backward(cache, grad_scores):
  """Backpropagate ``d loss / d s`` to instance, global and text embeddings.

  Returns:
      ``(grad_instances (N, dim), grad_global (dim,), grad_text (dim,))``.
  """
  matrix, glob, text = cache.instances, cache.glob, cache.text
  omega = cache.omega
  count = len(matrix)
  grad_instances = np.zeros_like(matrix)
  grad_glob = np.zeros_like(glob)
  grad_text = np.zeros_like(text)
  grad_omega = np.zeros(count)

  for i in range(count):
    grad_fused, grad_t = _cosine_backward(cache.fused[i], text, grad_scores[i])
    grad_text += grad_t
    grad_pre = normalize_backward(cache.pre_fused[i], grad_fused)
    grad_omega[i] = np.dot(grad_pre, glob - matrix[i])
    grad_glob += omega[i] * grad_pre
    grad_instances[i] += (1. - omega[i]) * grad_pre

  grad_logits = omega * (grad_omega - np.dot(omega, grad_omega)) / cache.tau
  for i in range(count):
    grad_e, grad_g = _cosine_backward(matrix[i], glob, grad_logits[i])
    grad_instances[i] += grad_e
    grad_glob += grad_g
    for j in range(count):
      if j == i:
        continue
      grad_e, grad_other = _cosine_backward(matrix[i], matrix[j],
          grad_logits[i] / cache.eta_divisor)
      grad_instances[i] += grad_e
      grad_instances[j] += grad_other
  return grad_instances, grad_glob, grad_text
