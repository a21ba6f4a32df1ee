# -*- coding: utf-8 -*-
"""``arrange-ckpt/1`` checkpoint files.

A checkpoint is UTF-8 text::

    arrange-ckpt/1
    partition both
    seed 7
    slots 13
    encoder.visual_proj.weight 19x32 <hex>
    ...
    nets.tl_head.0.kernel 1x1x4x1 <hex>
    nets.tl_head.0.bias 1 <hex>

Payloads are little-endian float32 bytes in base 16, so a file read and
written again is byte-identical.
"""
from collections import namedtuple, OrderedDict

import numpy as np

from codecs import open

from .embedding import EncoderParams, resolve_partition
from .errors import FormatError
from .numerics import ConvLayer
from .policy import PolicyNets

CHECKPOINT_SCHEMA = 'arrange-ckpt/1'


class Checkpoint(namedtuple('Checkpoint', 'nets encoders partition seed')):
  __slots__ = ()


def _records(nets, encoders):
  records = [('encoder.' + name, value) for name, value in encoders.items()]
  for stack, layers in nets.stacks().items():
    for k, layer in enumerate(layers):
      records.append(('nets.{0}.{1}.kernel'.format(stack, k), layer.kernel))
      records.append(('nets.{0}.{1}.bias'.format(stack, k), layer.bias))
  return records


def save_checkpoint(path, nets, encoders, partition='none', seed=0):
  """Write heads and encoders to ``path``."""
  records = _records(nets, encoders)
  with open(path, 'w', encoding='utf-8') as fl:
    fl.write('{0}\n'.format(CHECKPOINT_SCHEMA))
    fl.write('partition {0}\n'.format(resolve_partition(partition).policy))
    fl.write('seed {0}\n'.format(int(seed)))
    fl.write('slots {0}\n'.format(len(records)))
    for name, value in records:
      shape = 'x'.join(str(n) for n in np.shape(value))
      payload = np.asarray(value, dtype='<f4').tobytes().hex()
      fl.write('{0} {1} {2}\n'.format(name, shape, payload))


def _header(lines, index, key):
  parts = lines[index].split()
  if len(parts) != 2 or parts[0] != key:
    raise FormatError('Expected "{0} <value>" on line {1}, got "{2}".'.format(
        key, index + 1, lines[index]))
  return parts[1]


def _decode(name, shape, payload):
  try:
    dims = tuple(int(n) for n in shape.split('x'))
    raw = bytes.fromhex(payload)
  except ValueError:
    raise FormatError('Slot {0} has a malformed shape or payload.'.format(name))
  if len(raw) != 4 * int(np.prod(dims)):
    raise FormatError('Slot {0} holds {1} bytes, shape {2} needs {3}.'.format(
        name, len(raw), shape, 4 * int(np.prod(dims))))
  return np.frombuffer(raw, dtype='<f4').astype(np.float64).reshape(dims)


def load_checkpoint(path):
  """Read a checkpoint.

  Raises:
      FormatError: On a wrong schema, a malformed record or inconsistent shapes.
  """
  with open(path, 'r', encoding='utf-8') as fl:
    lines = [line.strip() for line in fl if line.strip()]
  if len(lines) < 4 or lines[0] != CHECKPOINT_SCHEMA:
    raise FormatError('{0} is not an {1} file.'.format(path, CHECKPOINT_SCHEMA))
  partition = resolve_partition(_header(lines, 1, 'partition'))
  try:
    seed = int(_header(lines, 2, 'seed'))
    count = int(_header(lines, 3, 'slots'))
  except ValueError as e:
    raise FormatError('Malformed checkpoint header: {0}'.format(e))
  if len(lines) - 4 != count:
    raise FormatError('Header declares {0} slots, found {1}.'.format(count, len(lines) - 4))

  encoder_slots = OrderedDict()
  layers = OrderedDict((name, OrderedDict()) for name in PolicyNets.STACKS)
  for line in lines[4:]:
    parts = line.split()
    if len(parts) != 3:
      raise FormatError('Malformed slot record "{0}".'.format(line[:60]))
    name, shape, payload = parts
    value = _decode(name, shape, payload)
    if name.startswith('encoder.'):
      encoder_slots[name[len('encoder.'):]] = value
      continue
    fields = name.split('.')
    if len(fields) != 4 or fields[0] != 'nets' or fields[1] not in layers or \
        not fields[2].isdigit() or fields[3] not in ('kernel', 'bias'):
      raise FormatError('Unknown slot "{0}".'.format(name))
    layers[fields[1]].setdefault(int(fields[2]), {})[fields[3]] = value

  try:
    encoders = EncoderParams(encoder_slots)
    stacks = [[ConvLayer(layer['kernel'], layer['bias'])
        for _, layer in sorted(stack.items())] for stack in layers.values()]
    nets = PolicyNets(*stacks)
  except (KeyError, ValueError) as e:
    raise FormatError('Inconsistent checkpoint {0}: {1}'.format(path, e))
  return Checkpoint(nets, encoders, partition, seed)
