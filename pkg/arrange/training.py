# -*- coding: utf-8 -*-
"""Few-shot supervised training of the heads and the tunable encoder slots.

The loss of one demonstration is

    lambda_tl * CE(softmax(TL scores), pick) + lambda_rd * CE(softmax(RD volume), place)

where the RD volume is the joint (angle, row, col) score volume computed from
the ground-truth pick crop. Gradients reach every head parameter and only the
encoder slots of the configured partition; the others are reported as exact
zeros and never change.
"""
from __future__ import division
from collections import namedtuple, OrderedDict
from concurrent.futures import ThreadPoolExecutor

import os
import numpy as np
import pandas as pd

from tqdm import tqdm

from .embedding import (featurize_visual, resolve_partition, text_backward,
    text_features, text_forward, visual_backward, visual_forward)
from .errors import DivergenceError, EmptySceneError, ParameterError
from .fusion import paint, score_instances, score_instances_backward
from .logger import logger
from .numerics import (ConvLayer, angle_index, as_grid, cross_correlate_backward,
    cross_correlate_many, cross_entropy, softmax, softmax2d, softmax_cross_entropy_grad)
from .policy import (AgentOptions, PolicyNets, filter_text, masked_pick_crop,
    rotated_kernels, stack_backward, stack_forward)
from .scene import episode_seeds, make_episode, render
from .segmentation import crop, segment

DEMO_STREAM = 1
LEARNING_RATE = 0.05
TRAIN_STEPS = 300
FD_EPSILON = 1e-4
FD_SAMPLES = 50
FD_FLOOR = 1e-5
THREADS_VARIABLE = 'ARRANGE_THREADS'


class Demonstration(namedtuple('Demonstration', 'episode obs tl_target rd_target')):
  """One supervised example.

  Attributes:
      episode (Episode): Source episode.
      obs (np.ndarray): Rendered observation.
      tl_target (tuple): Ground-truth pick pixel ``(u, v)``.
      rd_target (tuple): Ground-truth place ``(u, v, j)``, ``j`` in ``1..36``.
  """
  __slots__ = ()


class TrainConfig(namedtuple('TrainConfig',
    'steps learning_rate lambda_tl lambda_rd partition seed options threads')):
  """Training knobs. ``options`` are the :class:`AgentOptions` used for the
  forward pass; ``threads`` caps the per-demo worker pool."""
  __slots__ = ()


TrainConfig.__new__.__defaults__ = (TRAIN_STEPS, LEARNING_RATE, 1., 1., 'both', 0, None,
    None)


def check_config(config):
  """Validate a :class:`TrainConfig`.

  Raises:
      ParameterError: On a non-positive step count or learning rate, or a
        negative loss weight.
  """
  if int(config.steps) < 1:
    raise ParameterError('Training needs steps >= 1, got {0}.'.format(config.steps))
  if not config.learning_rate > 0:
    raise ParameterError('Learning rate must be positive, got {0}.'.format(
        config.learning_rate))
  if config.lambda_tl < 0 or config.lambda_rd < 0:
    raise ParameterError('Loss weights must be >= 0.')
  resolve_partition(config.partition)
  return config


def worker_count(threads=None):
  """Worker threads: explicit value, else ``ARRANGE_THREADS``, 0 meaning all CPUs."""
  if threads is None:
    threads = int(os.environ.get(THREADS_VARIABLE, '0') or 0)
  return int(threads) if threads and threads > 0 else (os.cpu_count() or 1)


def make_demonstrations(task, split, count, seed):
  """Deterministic demonstrations drawn from a task.

  Raises:
      ParameterError: If ``count < 1``.
  """
  if count < 1:
    raise ParameterError('Need at least one demonstration, got {0}.'.format(count))
  demos = []
  for episode_seed in episode_seeds(seed, count, DEMO_STREAM):
    episode = make_episode(task, split, episode_seed)
    u, v, theta = episode.gt_place
    demos.append(Demonstration(episode, render(episode.scene), tuple(episode.gt_pick),
        (int(u), int(v), angle_index(theta))))
  return demos


class Prepared(namedtuple('Prepared', 'obs seg instance_features global_features '
    'tl_onehot rd_onehot pick_crop tl_target rd_target')):
  """Parameter-independent inputs of one demonstration."""
  __slots__ = ()


def prepare(demo, options=None):
  opts = options or AgentOptions()
  obs = as_grid(demo.obs, channels=3)
  seg = segment(obs, opts.background, opts.min_area)
  if not len(seg):
    raise EmptySceneError('Demonstration of episode seed {0} shows no objects.'.format(
        demo.episode.scene.rng_seed))
  pair = filter_text(demo.episode.instruction)
  u, v, j = demo.rd_target
  return Prepared(
      obs=obs,
      seg=seg,
      instance_features=np.array([featurize_visual(crop(obs, inst, opts.crop_pad))
          for inst in seg]),
      global_features=featurize_visual(obs),
      tl_onehot=text_features(pair.tl_query),
      rd_onehot=text_features(pair.rd_query),
      pick_crop=masked_pick_crop(obs, seg, demo.tl_target, opts.crop_size),
      tl_target=tuple(int(t) for t in demo.tl_target),
      rd_target=(int(j) - 1, int(u), int(v)))


def _options(config):
  return config.options or AgentOptions()


def _forward(prepared, nets, encoders, config):
  opts = _options(config)
  obs = prepared.obs
  instance_out = [visual_forward(f, encoders) for f in prepared.instance_features]
  instances = np.array([values for values, _ in instance_out])
  glob, glob_cache = visual_forward(prepared.global_features, encoders)
  tl_text, tl_text_cache = text_forward(prepared.tl_onehot, encoders)
  rd_text, rd_text_cache = text_forward(prepared.rd_onehot, encoders)

  s_tl, tl_fusion = score_instances(instances, glob, tl_text, opts.tau, opts.unbiased)
  s_rd, rd_fusion = score_instances(instances, glob, rd_text, opts.tau, opts.unbiased)
  m_tl = paint(s_tl, prepared.seg, obs.shape)
  m_rd = paint(s_rd, prepared.seg, obs.shape)

  tl_scores, tl_cache = stack_forward(nets.tl_head,
      np.concatenate([obs, m_tl[:, :, None]], axis=2))
  tl_probs = softmax2d(tl_scores[:, :, 0], 1.)
  l_tl = cross_entropy(tl_probs, prepared.tl_target)

  feature, phi_cache = stack_forward(nets.phi,
      np.concatenate([obs, m_rd[:, :, None]], axis=2))
  kernels, psi_caches = rotated_kernels(prepared.pick_crop, nets, opts.rotations)
  volume = cross_correlate_many(feature, kernels)
  rd_probs = softmax(volume, 1.)
  l_rd = cross_entropy(rd_probs, prepared.rd_target)

  total = config.lambda_tl * l_tl + config.lambda_rd * l_rd
  cache = dict(
      instance_caches=[c for _, c in instance_out], glob_cache=glob_cache,
      tl_text_cache=tl_text_cache, rd_text_cache=rd_text_cache,
      tl_fusion=tl_fusion, rd_fusion=rd_fusion,
      tl_cache=tl_cache, tl_probs=tl_probs,
      feature=feature, phi_cache=phi_cache, kernels=kernels, psi_caches=psi_caches,
      rd_probs=rd_probs)
  return (total, l_tl, l_rd), cache


def _mask_sums(grad_map, seg):
  return np.array([grad_map[inst.mask].sum() for inst in seg])


def _zero_gradients(nets, encoders):
  net_grads = OrderedDict((name, [(np.zeros_like(l.kernel), np.zeros_like(l.bias))
      for l in layers]) for name, layers in nets.stacks().items())
  encoder_grads = OrderedDict((name, np.zeros_like(value)) for name, value in encoders.items())
  return Gradients(net_grads, encoder_grads)


def _backward(prepared, nets, encoders, config, cache):
  grads = _zero_gradients(nets, encoders)
  partition = resolve_partition(config.partition)
  height, width = prepared.obs.shape[:2]

  grad_m_tl = np.zeros((height, width))
  if config.lambda_tl:
    grad_tl = config.lambda_tl * softmax_cross_entropy_grad(cache['tl_probs'],
        prepared.tl_target)
    layer_grads, grad_input = stack_backward(nets.tl_head, cache['tl_cache'],
        grad_tl[:, :, None])
    grads.nets['tl_head'] = layer_grads
    grad_m_tl = grad_input[:, :, 3]

  grad_m_rd = np.zeros((height, width))
  if config.lambda_rd:
    grad_volume = config.lambda_rd * softmax_cross_entropy_grad(cache['rd_probs'],
        prepared.rd_target)
    grad_feature, grad_kernels = cross_correlate_backward(cache['feature'],
        cache['kernels'], grad_volume)
    layer_grads, grad_input = stack_backward(nets.phi, cache['phi_cache'], grad_feature)
    grads.nets['phi'] = layer_grads
    grad_m_rd = grad_input[:, :, 3]
    psi_grads = grads.nets['psi']
    for psi_cache, grad_kernel in zip(cache['psi_caches'], grad_kernels):
      layer_grads, _ = stack_backward(nets.psi, psi_cache, grad_kernel)
      psi_grads = [(gk + lk, gb + lb) for (gk, gb), (lk, lb) in zip(psi_grads, layer_grads)]
    grads.nets['psi'] = psi_grads

  if not partition.slots:
    return grads

  grad_instances, grad_glob, grad_tl_text = score_instances_backward(
      cache['tl_fusion'], _mask_sums(grad_m_tl, prepared.seg))
  more_instances, more_glob, grad_rd_text = score_instances_backward(
      cache['rd_fusion'], _mask_sums(grad_m_rd, prepared.seg))
  grad_instances = grad_instances + more_instances
  grad_glob = grad_glob + more_glob

  slot_grads = [visual_backward(c, g, encoders)
      for c, g in zip(cache['instance_caches'], grad_instances)]
  slot_grads.append(visual_backward(cache['glob_cache'], grad_glob, encoders))
  slot_grads.append(text_backward(cache['tl_text_cache'], grad_tl_text))
  slot_grads.append(text_backward(cache['rd_text_cache'], grad_rd_text))
  for partial in slot_grads:
    for name, value in partial.items():
      if name in partition:
        grads.encoders[name] += value
  return grads


class Gradients(namedtuple('Gradients', 'nets encoders')):
  """Head gradients per stack and layer, encoder gradients per slot."""
  __slots__ = ()

  def scaled(self, factor):
    return Gradients(
        OrderedDict((name, [(gk * factor, gb * factor) for gk, gb in layers])
          for name, layers in self.nets.items()),
        OrderedDict((name, g * factor) for name, g in self.encoders.items()))

  def __add__(self, other):
    return Gradients(
        OrderedDict((name, [(gk + ok, gb + ob) for (gk, gb), (ok, ob) in
            zip(layers, other.nets[name])]) for name, layers in self.nets.items()),
        OrderedDict((name, g + other.encoders[name]) for name, g in self.encoders.items()))

  def is_finite(self):
    arrays = [a for layers in self.nets.values() for pair in layers for a in pair]
    arrays += list(self.encoders.values())
    return all(np.all(np.isfinite(a)) for a in arrays)


def loss(demo, nets, encoders, config=None):
  """``(total, l_tl, l_rd)`` of one demonstration."""
  config = config or TrainConfig()
  prepared = demo if isinstance(demo, Prepared) else prepare(demo, _options(config))
  losses, _ = _forward(prepared, nets, encoders, config)
  return losses


def _demo_pass(prepared, nets, encoders, config):
  losses, cache = _forward(prepared, nets, encoders, config)
  return losses, _backward(prepared, nets, encoders, config, cache)


def analytic_gradients(demos, nets, encoders, config=None):
  """Mean loss and mean gradients over a batch of demonstrations.

  Per-demo passes may run on a thread pool; results are reduced in demo order.

  Returns:
      ``((total, l_tl, l_rd), Gradients)``.
  """
  config = config or TrainConfig()
  demos = demos if isinstance(demos, (list, tuple)) else [demos]
  prepared = [d if isinstance(d, Prepared) else prepare(d, _options(config)) for d in demos]
  workers = min(worker_count(config.threads), len(prepared))
  if workers > 1:
    with ThreadPoolExecutor(max_workers=workers) as pool:
      results = list(pool.map(lambda p: _demo_pass(p, nets, encoders, config), prepared))
  else:
    results = [_demo_pass(p, nets, encoders, config) for p in prepared]

  losses = np.zeros(3)
  grads = None
  for demo_losses, demo_grads in results:
    losses += demo_losses
    grads = demo_grads if grads is None else grads + demo_grads
  scale = 1. / len(results)
  return tuple(float(l) for l in losses * scale), grads.scaled(scale)


def apply_gradients(nets, encoders, grads, learning_rate, partition):
  """One gradient-descent step; encoder slots outside ``partition`` are untouched."""
  partition = resolve_partition(partition)
  stacks = []
  for name, layers in nets.stacks().items():
    stacks.append([ConvLayer(layer.kernel - learning_rate * gk, layer.bias - learning_rate * gb,
        layer.stride) for layer, (gk, gb) in zip(layers, grads.nets[name])])
  trained = encoders.copy()
  for name in partition.slots:
    trained.slots[name] = encoders[name] - learning_rate * grads.encoders[name]
  return PolicyNets(*stacks), trained


def train_few_shot(demos, nets, encoders, config=None, progress=False):
  """Full-batch gradient descent for ``config.steps`` steps.

  Args:
      demos (list): Demonstrations (at least one).
      nets (PolicyNets): Initial heads; not modified.
      encoders (EncoderParams): Initial encoders; not modified.
      config (TrainConfig): Training knobs.
      progress (bool): Show a progress bar.

  Returns:
      ``(nets, encoders, trace)`` where ``trace`` is a DataFrame with one row
      per step holding the loss before that step's update.

  Raises:
      ParameterError: For an empty batch or an invalid config.
      DivergenceError: If the loss or a gradient becomes non-finite.
  """
  config = check_config(config or TrainConfig())
  if not demos:
    raise ParameterError('Training needs at least one demonstration.')
  prepared = [prepare(d, _options(config)) for d in demos]
  logger.debug('--> Training on {0} demonstrations, partition {1}, {2} steps'.format(
      len(prepared), resolve_partition(config.partition).policy, config.steps))

  rows = []
  steps = range(int(config.steps))
  if progress:
    steps = tqdm(steps, desc='--> Training', unit='steps')
  for step in steps:
    losses, grads = analytic_gradients(prepared, nets, encoders, config)
    if not (np.all(np.isfinite(losses)) and grads.is_finite()):
      raise DivergenceError(step, losses[0])
    rows.append((step,) + losses)
    nets, encoders = apply_gradients(nets, encoders, grads, config.learning_rate,
        config.partition)
  trace = pd.DataFrame(rows, columns=['step', 'total', 'l_tl', 'l_rd'])
  logger.debug('----> loss {0:.4f} -> {1:.4f}'.format(trace.total.iloc[0], trace.total.iloc[-1]))
  return nets, encoders, trace


def _coordinates(nets, encoders, partition):
  coords = []
  for name, layers in nets.stacks().items():
    for k, layer in enumerate(layers):
      coords += [('nets', name, k, 'kernel', i) for i in range(layer.kernel.size)]
      coords += [('nets', name, k, 'bias', i) for i in range(layer.bias.size)]
  for name, value in encoders.items():
    if name in partition:
      coords += [('encoders', name, i) for i in range(value.size)]
  return coords


def _target(nets, encoders, coord):
  if coord[0] == 'nets':
    _, name, k, field, _ = coord
    return getattr(getattr(nets, name)[k], field).reshape(-1)
  return encoders.slots[coord[1]].reshape(-1)


def _gradient_at(grads, coord):
  if coord[0] == 'nets':
    _, name, k, field, i = coord
    return grads.nets[name][k][0 if field == 'kernel' else 1].reshape(-1)[i]
  return grads.encoders[coord[1]].reshape(-1)[coord[2]]


def gradient_check(nets, encoders, demo, config=None, samples=FD_SAMPLES, eps=FD_EPSILON,
    seed=0):
  """Largest relative error between analytic and central-difference gradients.

  Coordinates are sampled among head parameters and the encoder slots of the
  partition. Gradients below ``FD_FLOOR`` are compared in absolute terms.
  """
  config = config or TrainConfig()
  prepared = demo if isinstance(demo, Prepared) else prepare(demo, _options(config))
  _, grads = analytic_gradients([prepared], nets, encoders, config._replace(threads=1))
  coords = _coordinates(nets, encoders, resolve_partition(config.partition))
  rng = np.random.default_rng(seed)
  picked = rng.choice(len(coords), size=min(samples, len(coords)), replace=False)

  worst = 0.
  for index in sorted(picked):
    coord = coords[index]
    shifted_nets, shifted_encoders = nets.copy(), encoders.copy()
    values = _target(shifted_nets, shifted_encoders, coord)
    position = coord[-1]
    original = values[position]
    values[position] = original + eps
    plus = _forward(prepared, shifted_nets, shifted_encoders, config)[0][0]
    values[position] = original - eps
    minus = _forward(prepared, shifted_nets, shifted_encoders, config)[0][0]
    numeric = (plus - minus) / (2. * eps)
    analytic = _gradient_at(grads, coord)
    error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), FD_FLOOR)
    worst = max(worst, error)
  return worst
