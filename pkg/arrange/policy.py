# -*- coding: utf-8 -*-
"""Two-stage pick and place policy.

An instruction is split into a target query and a placement query. Target
Localization scores every pixel from the observation and the target confidence
map and picks the argmax. Region Determination crops the observation around
the pick, rotates the crop through 36 angles, and correlates each rotated crop
embedding with a dense embedding of the observation and the placement
confidence map; the best (angle, pixel) is the place.
"""
from __future__ import division
from collections import namedtuple, OrderedDict

import difflib
import json
import os
import re
import numpy as np

from codecs import open

from .embedding import encode_text, encode_visual, parse_query
from .errors import EmptySceneError, ParameterError, ParseError, ShapeError
from .fusion import FUSION_TEMPERATURE, ConfidenceMap, fuse_instances, confidence_map
from .logger import logger
from .numerics import (ROTATIONS, ConvLayer, RotationAngle, argmax_pixel, as_grid,
    as_score, conv_backward, conv_forward, cross_correlate_many, rotate_crop,
    rotation_angles, softmax2d)
from .scene import BACKGROUND
from .segmentation import CROP_PAD, MIN_AREA, crop, segment
from . import netpbm

CROP_SIZE = 15
FEATURE_CHANNELS = 4
HIDDEN_CHANNELS = 16
PHOTO_PREFIX = 'a photo of '

# Instruction grammar: verb, target phrase, preposition, placement phrase.
TEMPLATES = OrderedDict([
  ('put', (re.compile(r'^put (?P<pick>.+?) (?:in|into|on|inside) (?P<place>.+)$'),
      'put the {color} block in a {color} bowl')),
  ('pack', (re.compile(r'^pack (?P<pick>.+?) (?:in|into|inside) (?P<place>.+)$'),
      'pack the {color} block in the {color} box')),
  ('push', (re.compile(r'^push (?P<pick>.+?) (?:into|in|to|onto) (?P<place>.+)$'),
      'push the pile of {color} blocks into the {color} zone')),
])


class InstructionPair(namedtuple('InstructionPair', 'tl_query rd_query')):
  """Target (TL) and placement (RD) text queries of one instruction."""
  __slots__ = ()


def filter_text(instruction):
  """Split an instruction into ``"a photo of ..."`` target and placement queries.

  Raises:
      ParseError: If no template matches; the message names the nearest one.
  """
  text = ' '.join(instruction.lower().strip().rstrip('.').split())
  for name, (pattern, _) in TEMPLATES.items():
    match = pattern.match(text)
    if match:
      return InstructionPair(
          parse_query(PHOTO_PREFIX + match.group('pick')),
          parse_query(PHOTO_PREFIX + match.group('place')))
  nearest = max(TEMPLATES.values(),
      key=lambda t: difflib.SequenceMatcher(None, text, t[1]).ratio())[1]
  raise ParseError('"{0}" matches no instruction template; nearest is "{1}".'.format(
      instruction, nearest))


def stack_forward(layers, grid):
  """Run a conv stack with ReLU between layers (none after the last).

  Returns:
      ``(output, cache)``.
  """
  cache = []
  out = as_grid(grid)
  for k, layer in enumerate(layers):
    pre = conv_forward(layer, out)
    cache.append((out, pre))
    out = np.maximum(pre, 0.) if k < len(layers) - 1 else pre
  return out, cache


def stack_backward(layers, cache, grad_out):
  """Gradients of a conv stack.

  Returns:
      ``(layer grads [(grad_kernel, grad_bias)], grad_input)``.
  """
  grads = [None] * len(layers)
  grad = grad_out
  for k in reversed(range(len(layers))):
    grid, pre = cache[k]
    if k < len(layers) - 1:
      grad = grad * (pre > 0)
    grad_kernel, grad_bias, grad = conv_backward(layers[k], grid, grad)
    grads[k] = (grad_kernel, grad_bias)
  return grads, grad


def _one_by_one(matrix):
  matrix = np.asarray(matrix, dtype=np.float64)
  return ConvLayer(matrix[None, None], np.zeros(matrix.shape[1]))


class PolicyNets(object):
  """Trainable heads of both stages.

  Args:
      tl_head (list): ConvLayer stack, 4 channels (RGB + confidence) -> 1.
      psi (list): ConvLayer stack for pick crops, 3 channels -> F.
      phi (list): ConvLayer stack for the observation, 4 channels -> F.
  """
  STACKS = ('tl_head', 'psi', 'phi')

  def __init__(self, tl_head, psi, phi):
    self.tl_head, self.psi, self.phi = list(tl_head), list(psi), list(phi)
    for name, inputs in (('tl_head', 4), ('psi', 3), ('phi', 4)):
      layers = getattr(self, name)
      if not layers:
        raise ShapeError('Stack {0} is empty.'.format(name))
      if layers[0].channels_in != inputs:
        raise ShapeError('Stack {0} takes {1} channels, expected {2}.'.format(
            name, layers[0].channels_in, inputs))
      for below, above in zip(layers, layers[1:]):
        if below.channels_out != above.channels_in:
          raise ShapeError('Stack {0} has mismatched layer channels.'.format(name))
      if any(layer.stride != 1 for layer in layers):
        raise ShapeError('Stack {0} must keep the input resolution (stride 1).'.format(name))
    if self.tl_head[-1].channels_out != 1:
      raise ShapeError('tl_head must output one channel.')
    if self.psi[-1].channels_out != self.phi[-1].channels_out:
      raise ShapeError('psi outputs {0} channels, phi {1}.'.format(
          self.psi[-1].channels_out, self.phi[-1].channels_out))

  @property
  def features(self):
    return self.phi[-1].channels_out

  def stacks(self):
    return OrderedDict((name, getattr(self, name)) for name in self.STACKS)

  def copy(self):
    return PolicyNets(*[[layer.copy() for layer in layers] for layers in self.stacks().values()])

  def __eq__(self, other):
    if not isinstance(other, PolicyNets):
      return False
    for mine, theirs in zip(self.stacks().values(), other.stacks().values()):
      if len(mine) != len(theirs) or not all(
          a.stride == b.stride and np.array_equal(a.kernel, b.kernel) and
          np.array_equal(a.bias, b.bias) for a, b in zip(mine, theirs)):
        return False
    return True

  def __ne__(self, other):
    return not self == other

  __hash__ = None

  @classmethod
  def identity(cls, features=FEATURE_CHANNELS):
    """1x1 pass-through heads: TL returns the confidence channel, psi and phi
    copy their inputs into the first channels."""
    if features < 4:
      raise ParameterError('Identity heads need at least 4 feature channels.')
    tl = np.zeros((4, 1))
    tl[3, 0] = 1.
    return cls([_one_by_one(tl)], [_one_by_one(np.eye(3, features))],
        [_one_by_one(np.eye(4, features))])

  @classmethod
  def oracle(cls, features=FEATURE_CHANNELS):
    """Heads that follow the confidence maps: TL passes the target map through,
    psi sums the crop colors into channel 0, phi passes the placement map into
    channel 0."""
    tl = np.zeros((4, 1))
    tl[3, 0] = 1.
    psi = np.zeros((3, features))
    psi[:, 0] = 1.
    phi = np.zeros((4, features))
    phi[3, 0] = 1.
    return cls([_one_by_one(tl)], [_one_by_one(psi)], [_one_by_one(phi)])

  @classmethod
  def random(cls, seed=0, features=FEATURE_CHANNELS, hidden=HIDDEN_CHANNELS, depth=2,
      kernel=3):
    """He-initialized stacks: ``depth - 1`` ``kernel x kernel`` ReLU layers of
    ``hidden`` channels, then a 1x1 output layer (a single layer keeps ``kernel``)."""
    rng = np.random.default_rng(seed)

    def layer(side, cin, cout):
      return ConvLayer(rng.normal(0., np.sqrt(2. / (side * side * cin)), (side, side, cin, cout)),
          np.zeros(cout))

    def stack(inputs, outputs):
      sizes = [inputs] + [hidden] * (depth - 1) + [outputs]
      sides = [kernel] * (depth - 1) + [1 if depth > 1 else kernel]
      return [layer(side, cin, cout) for side, cin, cout in zip(sides, sizes, sizes[1:])]

    if depth < 1:
      raise ParameterError('Stack depth must be >= 1, got {0}.'.format(depth))
    return cls(stack(4, 1), stack(3, features), stack(4, features))


class PickDecision(namedtuple('PickDecision', 'pose score_map distribution')):
  __slots__ = ()


class PlaceDecision(namedtuple('PlaceDecision', 'pose angle score_volume')):
  """Best placement pixel and rotation over the whole score volume."""
  __slots__ = ()

  @property
  def score_map(self):
    """Score map of the selected angle."""
    return self.score_volume[self.angle.index - 1]


def _scores(cmap):
  return as_score(cmap.scores if isinstance(cmap, ConfidenceMap) else cmap)


def _with_confidence(obs, cmap):
  image = as_grid(obs, channels=3)
  scores = _scores(cmap)
  if scores.shape != image.shape[:2]:
    raise ShapeError('Confidence map {0} does not match observation {1}.'.format(
        scores.shape, image.shape[:2]))
  return np.concatenate([image, scores[:, :, None]], axis=2)


def predict_pick(obs, m_tl, nets):
  """Target Localization: argmax of the TL head over the whole observation.

  Raises:
      ShapeError: If the confidence map and observation disagree.
  """
  scores, _ = stack_forward(nets.tl_head, _with_confidence(obs, m_tl))
  score_map = scores[:, :, 0]
  return PickDecision(argmax_pixel(score_map), score_map, softmax2d(score_map, 1.))


def extract_pick_crop(obs, pose, c=CROP_SIZE):
  """``c x c`` crop centered on ``pose``, zero beyond the image.

  Raises:
      ParameterError: If ``c`` is not a positive odd number.
  """
  if c < 1 or c % 2 == 0:
    raise ParameterError('Crop size must be odd, got {0}.'.format(c))
  image = as_grid(obs)
  height, width, channels = image.shape
  half = c // 2
  out = np.zeros((c, c, channels))
  top, left = int(pose[0]) - half, int(pose[1]) - half
  r0, r1 = max(top, 0), min(top + c, height)
  c0, c1 = max(left, 0), min(left + c, width)
  if r0 < r1 and c0 < c1:
    out[r0 - top:r1 - top, c0 - left:c1 - left] = image[r0:r1, c0:c1]
  return out


def rotated_kernels(pick_crop, nets, rotations=ROTATIONS):
  """psi embeddings of the pick crop rotated through every angle.

  Returns:
      ``(kernels (n, c, c, F), caches)``.
  """
  kernels, caches = [], []
  for angle in rotation_angles(rotations):
    kernel, cache = stack_forward(nets.psi, rotate_crop(as_grid(pick_crop, channels=3), angle))
    kernels.append(kernel)
    caches.append(cache)
  return np.array(kernels), caches


def predict_place(obs, m_rd, pick_crop, nets, rotations=ROTATIONS):
  """Region Determination over all rotations.

  Ties go to the smallest angle index, then the smallest row-major pixel.

  Raises:
      ShapeError: On channel or size mismatches.
  """
  feature, _ = stack_forward(nets.phi, _with_confidence(obs, m_rd))
  kernels, _ = rotated_kernels(pick_crop, nets, rotations)
  volume = cross_correlate_many(feature, kernels)
  flat = int(np.argmax(volume))
  index, pixel = divmod(flat, volume.shape[1] * volume.shape[2])
  pose = divmod(pixel, volume.shape[2])
  return PlaceDecision(pose, RotationAngle(index + 1), volume)


class AgentOptions(namedtuple('AgentOptions',
    'tau crop_size crop_pad min_area unbiased background rotations')):
  """Inference knobs of an :class:`Agent`."""
  __slots__ = ()


AgentOptions.__new__.__defaults__ = (FUSION_TEMPERATURE, CROP_SIZE, CROP_PAD, MIN_AREA,
    False, BACKGROUND, ROTATIONS)


class Perception(namedtuple('Perception', 'seg pair instance_embeddings '
    'global_embedding tl_embedding rd_embedding weights m_tl m_rd')):
  """Everything the policy derived from one observation and instruction."""
  __slots__ = ()

  def embeddings(self):
    """``(ids, vectors)`` in the layout read back through ``embeddings=``."""
    ids = ['global', 'tl', 'rd'] + [str(inst.id) for inst in self.seg]
    vectors = [self.global_embedding, self.tl_embedding, self.rd_embedding] + \
        list(self.instance_embeddings)
    return ids, vectors


def masked_pick_crop(obs, seg, pose, c=CROP_SIZE):
  """Pick crop showing only the instance under ``pose`` (raw crop if none)."""
  image = as_grid(obs, channels=3)
  inst = seg.instance_at(pose) if seg is not None else None
  if inst is not None:
    image = np.where(inst.mask[:, :, None], image, 0.)
  return extract_pick_crop(image, pose, c)


class Agent(object):
  """Encoders, heads and options bundled into a policy.

  Args:
      encoders (EncoderParams): Visual and text encoder parameters.
      nets (PolicyNets): TL and RD heads.
      options (AgentOptions): Inference knobs.
  """
  def __init__(self, encoders, nets, options=None):
    self.encoders = encoders
    self.nets = nets
    self.options = options or AgentOptions()

  def for_episode(self, seed):
    return self

  def perceive(self, obs, instruction, seg=None, embeddings=None):
    """Segment, embed and fuse; build both confidence maps.

    Args:
        obs (np.ndarray): ``(H, W, 3)`` observation.
        instruction (str): Natural-language instruction.
        seg (SegmentationResult): External segmentation; computed if None.
        embeddings (dict): External vectors keyed ``"global"``, ``"tl"``,
          ``"rd"`` and instance ids; missing keys are encoded internally.

    Raises:
        EmptySceneError: If no instance is found.
    """
    opts = self.options
    obs = as_grid(obs, channels=3)
    if seg is None:
      seg = segment(obs, opts.background, opts.min_area)
    if not len(seg):
      raise EmptySceneError('No objects found in the observation.')
    pair = filter_text(instruction)
    external = dict((str(k), v) for k, v in (embeddings or {}).items())

    def lookup(key, compute):
      if key in external:
        return external[key].unit()
      return compute()

    instances = [lookup(str(inst.id),
        lambda inst=inst: encode_visual(crop(obs, inst, opts.crop_pad), self.encoders))
      for inst in seg]
    glob = lookup('global', lambda: encode_visual(obs, self.encoders))
    tl_text = lookup('tl', lambda: encode_text(pair.tl_query, self.encoders))
    rd_text = lookup('rd', lambda: encode_text(pair.rd_query, self.encoders))

    fused, weights, _ = fuse_instances(instances, glob, opts.tau, opts.unbiased)
    m_tl = confidence_map(fused, tl_text, seg, obs.shape)
    m_rd = confidence_map(fused, rd_text, seg, obs.shape)
    logger.debug('------> {0} instances, s_tl={1}, s_rd={2}'.format(
        len(seg), np.round(m_tl.per_instance, 4).tolist(), np.round(m_rd.per_instance, 4).tolist()))
    return Perception(seg, pair, instances, glob, tl_text, rd_text, weights, m_tl, m_rd)

  def decide(self, obs, instruction, seg=None, embeddings=None):
    """Full pipeline; returns ``(perception, pick, place)``."""
    perception = self.perceive(obs, instruction, seg, embeddings)
    pick = predict_pick(obs, perception.m_tl, self.nets)
    pick_crop = masked_pick_crop(obs, perception.seg, pick.pose, self.options.crop_size)
    place = predict_place(obs, perception.m_rd, pick_crop, self.nets, self.options.rotations)
    return perception, pick, place

  def act(self, obs, instruction, seg=None, embeddings=None):
    """``(PickDecision, PlaceDecision)`` for one observation."""
    _, pick, place = self.decide(obs, instruction, seg, embeddings)
    return pick, place


def act(obs, instruction, encoders, nets, seg=None, options=None, embeddings=None):
  """Run the whole policy once. See :meth:`Agent.act`."""
  return Agent(encoders, nets, options).act(obs, instruction, seg, embeddings)


class RandomAgent(object):
  """Chance baseline: uniform pick pixel, place pixel and angle."""
  def __init__(self, seed=0, rotations=ROTATIONS):
    self.seed = seed
    self.rotations = rotations
    self.rng = np.random.default_rng(seed)

  def for_episode(self, seed):
    return RandomAgent([self.seed, seed], self.rotations)

  def act(self, obs, instruction, seg=None, embeddings=None):
    height, width = as_grid(obs).shape[:2]
    flat = np.zeros((height, width))
    pick = divmod(int(self.rng.integers(height * width)), width)
    place = divmod(int(self.rng.integers(height * width)), width)
    angle = RotationAngle(int(self.rng.integers(1, self.rotations + 1)))
    volume = np.zeros((self.rotations, height, width))
    return (PickDecision(pick, flat, softmax2d(flat)),
        PlaceDecision(place, angle, volume))


def as_action(pick, place):
  """Scene action ``((u, v), (u, v, degrees))`` of a decision pair."""
  return (tuple(int(p) for p in pick.pose),
      (int(place.pose[0]), int(place.pose[1]), int(place.angle.degrees)))


def _stretch(scores):
  low, high = float(np.min(scores)), float(np.max(scores))
  if high <= low:
    return np.zeros(np.shape(scores), dtype=np.int64)
  return np.floor((np.asarray(scores) - low) / (high - low) * 65535. + 0.5).astype(np.int64)


def dump_decision(perception, pick, place, directory, prefix='scene'):
  """Write the pick map, best-angle place map (16-bit PGM) and a JSON record
  named ``<prefix>_pick.pgm``, ``<prefix>_place.pgm`` and ``<prefix>_decision.json``.

  Returns:
      Path of the JSON record.
  """
  base = os.path.join(directory, prefix)
  netpbm.write_pgm(_stretch(pick.score_map), base + '_pick.pgm', depth=16)
  netpbm.write_pgm(_stretch(place.score_map), base + '_place.pgm', depth=16)
  record = dict(
      tl_query=perception.pair.tl_query.raw,
      rd_query=perception.pair.rd_query.raw,
      pick=[int(p) for p in pick.pose],
      place=[int(p) for p in place.pose],
      angle_index=place.angle.index,
      angle_degrees=place.angle.degrees,
      instances=[dict(id=inst.id, bbox=list(inst.bbox), area=inst.area,
          omega=float(w), s_tl=float(s_tl), s_rd=float(s_rd))
        for inst, w, s_tl, s_rd in zip(perception.seg, perception.weights.omega,
            perception.m_tl.per_instance, perception.m_rd.per_instance)])
  with open(base + '_decision.json', 'w', encoding='utf-8') as fl:
    json.dump(record, fl, indent=2, sort_keys=True)
  return base + '_decision.json'
