# -*- coding: utf-8 -*-
"""Joint visual/text embeddings.

Both encoders end in a linear projection onto a shared ``dim``-dimensional
space followed by L2 normalization:

    visual:  e = normalize(layernorm(features; gain, bias) @ W_vis + b_vis)
    text:    e = normalize(onehot @ W_txt + b_txt + ffn_proj_bias)

Visual features are hand-designed (a palette histogram plus shape moments) and
text features are a multi-hot vector of the recognized color, object kind and
qualifiers. Which parameter slots may change during fine-tuning is decided by
a :class:`ParameterPartition`.
"""
from __future__ import division
from collections import namedtuple, OrderedDict

import re
import numpy as np

from codecs import open

from .errors import (DegenerateEmbeddingError, FormatError, ParameterError,
    ParseError, ShapeError)
from .numerics import as_grid
from .scene import PALETTE, COLOR_NAMES, KINDS

EMBEDDING_DIM = 32
EMBEDDING_SCHEMA = 'arrange-emb/1'
NORM_EPS = 1e-5
ORACLE_NOISE = 0.01
PERTURB_SCALE = 0.3
KIND_WEIGHT = 0.25
SHAPE_WEIGHT = 0.1

SHAPE_FEATURES = ('area_fraction', 'aspect_ratio', 'fill_ratio', 'mu20', 'mu02',
    'orientation_sin', 'orientation_cos')
VISUAL_FEATURES = len(COLOR_NAMES) + len(SHAPE_FEATURES)
QUALIFIERS = ('pile', 'plural')
TEXT_FEATURES = len(COLOR_NAMES) + len(KINDS) + len(QUALIFIERS)

SLOTS = ('visual_proj.weight', 'visual_proj.bias', 'visual_norm.gain',
    'visual_norm.bias', 'text_proj.weight', 'text_proj.bias', 'ffn_proj_bias')
VISUAL_SLOTS = frozenset(s for s in SLOTS if s.startswith('visual'))
TEXT_SLOTS = frozenset(SLOTS) - VISUAL_SLOTS

PARTITIONS = OrderedDict([
  ('none', frozenset()),
  ('text_ffn_bias_only', frozenset(['ffn_proj_bias'])),
  ('visual_layernorm_only', frozenset(['visual_norm.gain', 'visual_norm.bias'])),
  ('both', frozenset(['ffn_proj_bias', 'visual_norm.gain', 'visual_norm.bias'])),
  ('all', frozenset(SLOTS)),
])

_PALETTE_DIRECTIONS = np.array([PALETTE[name] for name in COLOR_NAMES])
_PALETTE_DIRECTIONS /= np.linalg.norm(_PALETTE_DIRECTIONS, axis=1, keepdims=True)


class EmbeddingVector(namedtuple('EmbeddingVector', 'values normalized')):
  """A point of the joint embedding space.

  Attributes:
      values (np.ndarray): Float vector.
      normalized (bool): Whether ``values`` has unit L2 norm.
  """
  __slots__ = ()

  def __new__(cls, values, normalized=True):
    values = np.array(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(values)):
      raise DegenerateEmbeddingError('Embedding holds non-finite values.')
    if normalized and abs(np.linalg.norm(values) - 1.) > 1e-6:
      raise DegenerateEmbeddingError('Embedding flagged normalized has norm {0}.'.format(
          np.linalg.norm(values)))
    return super(EmbeddingVector, cls).__new__(cls, values, bool(normalized))

  @property
  def dim(self):
    return self.values.size

  def unit(self):
    """This vector scaled to unit length."""
    if self.normalized:
      return self
    return EmbeddingVector(normalize(self.values), True)


def normalize(values):
  norm = np.linalg.norm(values)
  if not norm > 1e-12:
    raise DegenerateEmbeddingError('Cannot normalize a zero vector.')
  return values / norm


def normalize_backward(values, grad):
  """Gradient through :func:`normalize` given the pre-normalization vector."""
  norm = np.linalg.norm(values)
  unit = values / norm
  return (grad - unit * np.dot(unit, grad)) / norm


def featurize_visual(crop):
  """Hand-designed visual features of a crop or a full observation.

  The first 12 entries are an L1-normalized histogram of the non-zero pixels
  over the palette (each pixel votes for the palette entry of closest
  chromaticity, so uniform intensity scaling changes nothing). The last 7
  entries describe the occupancy mask: area fraction, bbox aspect ratio, bbox
  fill ratio, the two axis variances relative to the crop size, and the
  anisotropy-weighted orientation ``(sin 2phi, cos 2phi)``. The cross moment
  enters through ``sin 2phi = 2 mu11 / (mu20 + mu02)``.

  Args:
      crop (np.ndarray): ``(H, W, 3)`` grid.

  Returns:
      ``(19,)`` feature vector, all zeros for an empty crop.
  """
  image = as_grid(crop, channels=3)
  height, width = image.shape[:2]
  features = np.zeros(VISUAL_FEATURES)
  occupied = np.any(image > 0, axis=2)
  count = int(occupied.sum())
  if not count:
    return features

  colors = image[occupied]
  directions = colors / np.linalg.norm(colors, axis=1, keepdims=True)
  bins = np.argmax(directions.dot(_PALETTE_DIRECTIONS.T), axis=1)
  features[:len(COLOR_NAMES)] = np.bincount(bins, minlength=len(COLOR_NAMES)) / count

  rows, cols = np.nonzero(occupied)
  bbox_h = rows.max() - rows.min() + 1
  bbox_w = cols.max() - cols.min() + 1
  mu20 = np.mean((rows - rows.mean()) ** 2)
  mu02 = np.mean((cols - cols.mean()) ** 2)
  mu11 = np.mean((rows - rows.mean()) * (cols - cols.mean()))
  spread = mu20 + mu02
  if spread > 0:
    orientation = (2. * mu11 / spread, (mu20 - mu02) / spread)
  else:
    orientation = (0., 0.)
  features[len(COLOR_NAMES):] = (
      count / (height * width),
      min(bbox_h, bbox_w) / max(bbox_h, bbox_w),
      count / (bbox_h * bbox_w),
      mu20 / height ** 2,
      mu02 / width ** 2,
      orientation[0],
      orientation[1])
  return features


class TextQuery(namedtuple('TextQuery', 'raw color noun qualifiers')):
  """A parsed text query.

  Attributes:
      raw (str): Query text, e.g. ``"a photo of the red block"``.
      color (str): Palette name or None.
      noun (str): Object kind or None.
      qualifiers (tuple): ``(slot, word)`` pairs; ``word`` appears in ``raw``.
  """
  __slots__ = ()

  @property
  def attributes(self):
    return dict(color=self.color, noun=self.noun,
        qualifiers=[word for _, word in self.qualifiers])


_PLURALS = dict((kind + ('es' if kind.endswith('x') else 's'), kind) for kind in KINDS)


def parse_query(raw):
  """Extract color, kind and qualifier attributes from free text.

  Raises:
      ParseError: If no attribute is recognized.
  """
  color, noun, qualifiers = None, None, []
  for word in re.findall(r'[a-z]+', raw.lower()):
    if word in PALETTE and color is None:
      color = word
    elif word in KINDS and noun is None:
      noun = word
    elif word in _PLURALS and noun is None:
      noun = _PLURALS[word]
      qualifiers.append(('plural', word))
    elif word in ('pile', 'piles') and not any(q == 'pile' for q, _ in qualifiers):
      qualifiers.append(('pile', word))
  if color is None and noun is None and not qualifiers:
    raise ParseError('No color, object or qualifier recognized in "{0}".'.format(raw))
  return TextQuery(raw, color, noun, tuple(qualifiers))


def text_features(query):
  """Multi-hot ``(19,)`` vector: 12 color slots, 5 kind slots, 2 qualifier slots."""
  onehot = np.zeros(TEXT_FEATURES)
  if query.color is not None:
    onehot[COLOR_NAMES.index(query.color)] = 1.
  if query.noun is not None:
    onehot[len(COLOR_NAMES) + KINDS.index(query.noun)] = 1.
  for slot, _ in query.qualifiers:
    onehot[len(COLOR_NAMES) + len(KINDS) + QUALIFIERS.index(slot)] = 1.
  return onehot


class ParameterPartition(namedtuple('ParameterPartition', 'policy slots')):
  __slots__ = ()

  def __contains__(self, slot):
    return slot in self.slots


def resolve_partition(policy):
  """Tunable encoder slots of a fine-tuning policy.

  Raises:
      ParameterError: For an unknown policy name.
  """
  if isinstance(policy, ParameterPartition):
    return policy
  try:
    return ParameterPartition(policy, PARTITIONS[policy])
  except KeyError:
    raise ParameterError('Unknown partition policy "{0}". Known: {1}.'.format(
        policy, ', '.join(PARTITIONS)))


def slot_shapes(dim=EMBEDDING_DIM):
  return OrderedDict([
    ('visual_proj.weight', (VISUAL_FEATURES, dim)),
    ('visual_proj.bias', (dim,)),
    ('visual_norm.gain', (VISUAL_FEATURES,)),
    ('visual_norm.bias', (VISUAL_FEATURES,)),
    ('text_proj.weight', (TEXT_FEATURES, dim)),
    ('text_proj.bias', (dim,)),
    ('ffn_proj_bias', (dim,)),
  ])


class EncoderParams(object):
  """Parameters of both encoders, addressed by slot name.

  Args:
      slots (dict): Slot name -> array, shapes as given by :func:`slot_shapes`.
  """
  def __init__(self, slots):
    dim = np.shape(slots['visual_proj.bias'])[0]
    self.slots = OrderedDict()
    for name, shape in slot_shapes(dim).items():
      value = np.array(slots[name], dtype=np.float64)
      if value.shape != shape:
        raise ShapeError('Slot {0} has shape {1}, expected {2}.'.format(
            name, value.shape, shape))
      if not np.all(np.isfinite(value)):
        raise ParameterError('Slot {0} holds non-finite values.'.format(name))
      self.slots[name] = value

  @property
  def dim(self):
    return self.slots['visual_proj.bias'].size

  def __getitem__(self, name):
    return self.slots[name]

  def items(self):
    return self.slots.items()

  def copy(self):
    return EncoderParams(OrderedDict((k, v.copy()) for k, v in self.slots.items()))

  @classmethod
  def zeros(cls, dim=EMBEDDING_DIM):
    slots = OrderedDict((name, np.zeros(shape)) for name, shape in slot_shapes(dim).items())
    slots['visual_norm.gain'][:] = 1.
    return cls(slots)

  @classmethod
  def aligned(cls, dim=EMBEDDING_DIM):
    """Noise-free oracle alignment of text slots with visual feature directions.

    Color slots share the first 12 dimensions with the mean-centered palette
    histogram; kind slots meet the fill ratio on two "filled/round" axes;
    the remaining shape features get their own low-weight axes.
    """
    colors, kinds = len(COLOR_NAMES), len(KINDS)
    if dim < colors + 4 + len(SHAPE_FEATURES):
      raise ParameterError('Oracle alignment needs dim >= {0}, got {1}.'.format(
          colors + 4 + len(SHAPE_FEATURES), dim))
    params = cls.zeros(dim)
    visual = params.slots['visual_proj.weight']
    visual[:colors, :colors] = np.eye(colors) - 1. / colors
    fill = colors + SHAPE_FEATURES.index('fill_ratio')
    visual[fill, colors] = KIND_WEIGHT
    visual[fill, colors + 1] = -KIND_WEIGHT
    for k in range(len(SHAPE_FEATURES)):
      visual[colors + k, colors + 4 + k] = SHAPE_WEIGHT

    text = params.slots['text_proj.weight']
    text[:colors, :colors] = np.eye(colors)
    for k, kind in enumerate(KINDS):
      axis = colors + 1 if kind in ('ball', 'bowl') else colors
      text[colors + k, axis] = KIND_WEIGHT
    for q in range(len(QUALIFIERS)):
      text[colors + kinds + q, colors + 2 + q] = KIND_WEIGHT
    return params

  @classmethod
  def oracle(cls, seed=0, dim=EMBEDDING_DIM, noise=ORACLE_NOISE):
    """Oracle alignment plus seeded uniform noise on the projections."""
    return cls.aligned(dim).perturb(noise, seed)

  @classmethod
  def perturbed(cls, scale=PERTURB_SCALE, seed=0, dim=EMBEDDING_DIM):
    return cls.aligned(dim).perturb(scale, seed)

  @classmethod
  def random(cls, seed=0, dim=EMBEDDING_DIM):
    rng = np.random.default_rng(seed)
    params = cls.zeros(dim)
    params.slots['visual_proj.weight'] = rng.normal(
        0., 1. / np.sqrt(VISUAL_FEATURES), (VISUAL_FEATURES, dim))
    params.slots['text_proj.weight'] = rng.normal(
        0., 1. / np.sqrt(TEXT_FEATURES), (TEXT_FEATURES, dim))
    return params

  def perturb(self, scale, seed):
    """Copy with ``U(-scale, scale)`` noise added to projection weights and biases."""
    rng = np.random.default_rng(seed)
    params = self.copy()
    for name in ('visual_proj.weight', 'visual_proj.bias', 'text_proj.weight',
        'text_proj.bias'):
      params.slots[name] = params.slots[name] + rng.uniform(
          -scale, scale, params.slots[name].shape)
    return params

  def __eq__(self, other):
    return isinstance(other, EncoderParams) and list(self.slots) == list(other.slots) and \
        all(np.array_equal(self.slots[k], other.slots[k]) for k in self.slots)

  def __ne__(self, other):
    return not self == other

  __hash__ = None


def visual_forward(features, params):
  """Visual encoder on precomputed features.

  Returns:
      ``(embedding values, cache)``; the cache feeds :func:`visual_backward`.
  """
  features = np.asarray(features, dtype=np.float64)
  centered = features - features.mean()
  standardized = centered / np.sqrt(np.mean(centered ** 2) + NORM_EPS)
  normed = params['visual_norm.gain'] * standardized + params['visual_norm.bias']
  projected = normed.dot(params['visual_proj.weight']) + params['visual_proj.bias']
  return normalize(projected), (standardized, normed, projected)


def visual_backward(cache, grad, params):
  """Slot gradients of the visual encoder given ``d loss / d embedding``."""
  standardized, normed, projected = cache
  grad_projected = normalize_backward(projected, grad)
  grad_normed = params['visual_proj.weight'].dot(grad_projected)
  return {
    'visual_proj.weight': np.outer(normed, grad_projected),
    'visual_proj.bias': grad_projected,
    'visual_norm.gain': grad_normed * standardized,
    'visual_norm.bias': grad_normed,
  }


def text_forward(onehot, params):
  onehot = np.asarray(onehot, dtype=np.float64)
  projected = (onehot.dot(params['text_proj.weight']) + params['text_proj.bias'] +
      params['ffn_proj_bias'])
  return normalize(projected), (onehot, projected)


def text_backward(cache, grad):
  onehot, projected = cache
  grad_projected = normalize_backward(projected, grad)
  return {
    'text_proj.weight': np.outer(onehot, grad_projected),
    'text_proj.bias': grad_projected,
    'ffn_proj_bias': grad_projected.copy(),
  }


def encode_visual(crop, params):
  """Embed a crop (instance embedding) or a full observation (global embedding).

  Raises:
      DegenerateEmbeddingError: If the projection is the zero vector.
  """
  values, _ = visual_forward(featurize_visual(crop), params)
  return EmbeddingVector(values, True)


def encode_text(query, params):
  """Embed a text query (a raw string is parsed first).

  Raises:
      ParseError: If the query has no recognized attribute.
  """
  if not isinstance(query, TextQuery):
    query = parse_query(query)
  values, _ = text_forward(text_features(query), params)
  return EmbeddingVector(values, True)


def export_embeddings(vectors, ids, path):
  """Write vectors as an ``arrange-emb/1`` file.

  Each record is the id followed by the little-endian float32 bytes in hex.
  """
  vectors, ids = list(vectors), [str(i) for i in ids]
  if len(vectors) != len(ids):
    raise FormatError('{0} vectors but {1} ids.'.format(len(vectors), len(ids)))
  dims = set(v.dim for v in vectors)
  if len(dims) > 1:
    raise FormatError('Mixed embedding dimensions {0}.'.format(sorted(dims)))
  dim = dims.pop() if dims else EMBEDDING_DIM
  with open(path, 'w', encoding='utf-8') as fl:
    fl.write('{0} dim={1} count={2}\n'.format(EMBEDDING_SCHEMA, dim, len(vectors)))
    for key, vector in zip(ids, vectors):
      if not key or any(c.isspace() for c in key):
        raise FormatError('Invalid embedding id "{0}".'.format(key))
      payload = np.asarray(vector.values, dtype='<f4').tobytes()
      fl.write('{0} {1}\n'.format(key, payload.hex()))


_HEADER = re.compile(r'^{0} dim=(\d+) count=(\d+)$'.format(re.escape(EMBEDDING_SCHEMA)))


def import_embeddings(path):
  """Read an ``arrange-emb/1`` file into an ordered ``id -> EmbeddingVector`` map.

  Raises:
      FormatError: On a bad header, a record of the wrong length or a count
        mismatch.
  """
  with open(path, 'r', encoding='utf-8') as fl:
    lines = [line.rstrip('\n') for line in fl if line.strip()]
  if not lines:
    raise FormatError('{0} is empty.'.format(path))
  header = _HEADER.match(lines[0].strip())
  if header is None:
    raise FormatError('Bad embedding header "{0}".'.format(lines[0]))
  dim, count = int(header.group(1)), int(header.group(2))
  if len(lines) - 1 != count:
    raise FormatError('Header declares {0} records, found {1}.'.format(count, len(lines) - 1))

  vectors = OrderedDict()
  for line in lines[1:]:
    parts = line.split()
    if len(parts) != 2:
      raise FormatError('Malformed embedding record "{0}".'.format(line))
    key, payload = parts
    try:
      raw = bytes.fromhex(payload)
    except ValueError:
      raise FormatError('Record "{0}" is not hexadecimal.'.format(key))
    if len(raw) != 4 * dim:
      raise FormatError('Record "{0}" holds {1} floats, header declares dim {2}.'.format(
          key, len(raw) / 4., dim))
    values = np.frombuffer(raw, dtype='<f4').astype(np.float64)
    norm = np.linalg.norm(values)
    vectors[key] = EmbeddingVector(values, normalized=abs(norm - 1.) <= 1e-6)
  return vectors
