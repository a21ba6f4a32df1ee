# -*- coding: utf-8 -*-
"""Top-down grid-world tabletop.

A scene is a list of flat objects lying on a ``grid_h x grid_w`` table seen
orthographically from above. Each object carries a binary *footprint*: an
odd-sided square stencil whose center cell, the *anchor*, sits on the
object's pose pixel ``(u, v)`` (row, column). Blocks and balls can be picked;
bowls, boxes and zones are containers.

Stencil builders anchor a shape at the top-left corner of its bounding box,
so a freshly generated 4x4 block at ``(10, 10)`` covers rows and columns
10 to 13. Once an object is moved its anchor is the grasped pixel:
:func:`apply_action` rotates the picked object about that pixel with
:func:`~arrange.numerics.rotate_crop`, the same resampling the policy applies
to its pick crop, so an action places exactly the pixels the policy scored
and the new pose is the place pixel.
"""
from __future__ import division
from collections import namedtuple

import json
import numpy as np

from codecs import open

from .errors import GenerationError, FormatError, ParameterError
from .logger import logger
from .numerics import rotate_crop
from . import netpbm

SCENE_SCHEMA = 'arrange-scene/1'
GRID_SIZE = 64
MAX_ATTEMPTS = 1000
SUCCESS_THRESHOLD = 0.95
BACKGROUND = (0., 0., 0.)

# RGB in [0, 1]; every entry has a distinct chromaticity.
PALETTE = dict((name, tuple(c / 255. for c in rgb)) for name, rgb in [
  ('blue', (78, 121, 167)),
  ('red', (255, 87, 89)),
  ('green', (89, 169, 79)),
  ('yellow', (237, 201, 72)),
  ('brown', (156, 117, 95)),
  ('gray', (186, 176, 172)),
  ('cyan', (118, 183, 178)),
  ('olive', (128, 128, 0)),
  ('orange', (242, 142, 43)),
  ('purple', (176, 122, 161)),
  ('pink', (255, 157, 167)),
  ('white', (255, 255, 255)),
])
COLOR_NAMES = ('blue', 'red', 'green', 'yellow', 'brown', 'gray', 'cyan',
    'olive', 'orange', 'purple', 'pink', 'white')

KINDS = ('block', 'ball', 'bowl', 'box', 'zone')
PICKABLE = frozenset(['block', 'ball'])
CONTAINERS = frozenset(['bowl', 'box', 'zone'])


class ColorSplit(namedtuple('ColorSplit', 'seen_colors unseen_colors')):
  """Disjoint seen/unseen palettes."""
  __slots__ = ()

  def __new__(cls, seen_colors, unseen_colors):
    seen_colors, unseen_colors = tuple(seen_colors), tuple(unseen_colors)
    if set(seen_colors) & set(unseen_colors):
      raise ParameterError('Seen and unseen colors overlap.')
    return super(ColorSplit, cls).__new__(cls, seen_colors, unseen_colors)

  def colors(self, split):
    if split == 'seen':
      return self.seen_colors
    if split == 'unseen':
      return self.unseen_colors
    raise ParameterError('Unknown split "{0}".'.format(split))


COLOR_SPLIT = ColorSplit(COLOR_NAMES[:8], COLOR_NAMES[8:])
SPLITS = ('seen', 'unseen')


def anchored(shape):
  """Odd square stencil whose center cell is the top-left corner of the
  bounding box of ``shape``.

  Raises:
      ParameterError: If ``shape`` is empty.
  """
  cells = np.argwhere(np.asarray(shape, dtype=bool))
  if not len(cells):
    raise ParameterError('Cannot anchor an empty shape.')
  cells -= cells.min(axis=0)
  half = int(cells.max())
  stencil = np.zeros((2 * half + 1, 2 * half + 1), dtype=bool)
  stencil[cells[:, 0] + half, cells[:, 1] + half] = True
  return stencil


def rectangle(height, width):
  """Filled ``height x width`` rectangle."""
  return anchored(np.ones((height, width), dtype=bool))


def disc(radius):
  """Disc of the given radius."""
  reach = int(np.floor(radius))
  offsets = np.arange(-reach, reach + 1)
  return anchored(offsets[:, None] ** 2 + offsets[None, :] ** 2 <= radius ** 2)


class SceneObject(namedtuple('SceneObject', 'id kind color pose footprint')):
  """One object on the table.

  Attributes:
      id (int): Unique object id.
      kind (str): One of ``KINDS``.
      color (str): Palette name.
      pose (tuple): ``(u, v, theta)``: anchor pixel and accumulated rotation.
      footprint (np.ndarray): Odd-sided boolean stencil centered on ``(u, v)``.
  """
  __slots__ = ()

  @property
  def pickable(self):
    return self.kind in PICKABLE

  def pixels(self):
    """Occupied ``(row, col)`` pixels as an ``(N, 2)`` integer array."""
    half = self.footprint.shape[0] // 2
    offsets = np.argwhere(self.footprint) - half
    return offsets + np.array(self.pose[:2], dtype=int)

  def centroid(self):
    """Occupied pixel nearest the footprint's center of mass (row-major ties)."""
    pixels = self.pixels()
    distances = ((pixels - pixels.mean(axis=0)) ** 2).sum(axis=1)
    return tuple(int(p) for p in pixels[np.argmin(distances)])


class Scene(namedtuple('Scene', 'grid_h grid_w background objects rng_seed')):
  __slots__ = ()

  def find(self, object_id):
    for obj in self.objects:
      if obj.id == object_id:
        return obj
    raise KeyError('No object with id {0}.'.format(object_id))

  def replace_object(self, obj):
    objects = tuple(obj if o.id == obj.id else o for o in self.objects)
    return self._replace(objects=objects)


class Episode(namedtuple('Episode', 'scene instruction target_object_id '
    'goal_container_id gt_pick gt_place split task target_group')):
  """A scene, an instruction and the ground-truth pick/place action."""
  __slots__ = ()


# Objects of one role: count, kind, stencil, allowed orientations.
Role = namedtuple('Role', 'name count kind stencil orientations')


class TaskSpec(namedtuple('TaskSpec',
    'name grid template roles shared_colors')):
  """Object counts, kinds and instruction template of a toy task.

  ``roles`` lists, in placement order, the ``target`` pickable(s), the
  ``goal`` container and the distractors. ``shared_colors`` names roles whose
  members all carry one color (piles).
  """
  __slots__ = ()


TASKS = dict((task.name, task) for task in [
  TaskSpec('put-block-in-bowl', (GRID_SIZE, GRID_SIZE),
      'put the {pick_color} block in a {place_color} bowl', (
        Role('goal', 1, 'bowl', disc(4), (0,)),
        Role('distractor_container', 1, 'bowl', disc(4), (0,)),
        Role('target', 1, 'block', rectangle(5, 5), (0,)),
        Role('distractor', 2, 'block', rectangle(5, 5), (0,)),
      ), ()),
  TaskSpec('put-ball-in-bowl', (GRID_SIZE, GRID_SIZE),
      'put the {pick_color} ball in a {place_color} bowl', (
        Role('goal', 1, 'bowl', disc(4), (0,)),
        Role('distractor_container', 1, 'bowl', disc(4), (0,)),
        Role('target', 1, 'ball', disc(2.5), (0,)),
        Role('distractor', 2, 'ball', disc(2.5), (0,)),
      ), ()),
  TaskSpec('pack-block-in-box', (GRID_SIZE, GRID_SIZE),
      'pack the {pick_color} block in the {place_color} box', (
        Role('goal', 1, 'box', rectangle(9, 5), (0, 90)),
        Role('distractor_container', 1, 'box', rectangle(9, 5), (0, 90)),
        Role('target', 1, 'block', rectangle(7, 3), (0, 90)),
        Role('distractor', 1, 'block', rectangle(7, 3), (0, 90)),
      ), ()),
  TaskSpec('separating-piles', (GRID_SIZE, GRID_SIZE),
      'push the pile of {pick_color} blocks into the {place_color} zone', (
        Role('goal', 1, 'zone', rectangle(9, 9), (0,)),
        Role('distractor_container', 1, 'zone', rectangle(9, 9), (0,)),
        Role('target', 3, 'block', rectangle(3, 3), (0,)),
        Role('distractor', 2, 'block', rectangle(3, 3), (0,)),
      ), ('target', 'distractor')),
])

# Placement slots (row, col offsets from the zone center) for pile members.
PILE_SLOTS = ((-2, -2), (-2, 2), (2, -2), (2, 2))


def get_task(task):
  """Resolve a task name (or pass a ``TaskSpec`` through)."""
  if isinstance(task, TaskSpec):
    return task
  try:
    return TASKS[task]
  except KeyError:
    raise ParameterError('Unknown task "{0}". Known: {1}.'.format(
        task, ', '.join(sorted(TASKS))))


def episode_seeds(seed, count, stream=0):
  """Independent per-episode seeds derived from a master seed.

  Args:
      seed (int): Master seed.
      count (int): Number of seeds.
      stream (int): Stream id; different streams never share seeds.
  """
  sequence = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
  words = sequence.generate_state(max(count, 1) * 2, dtype=np.uint32)
  seeds = (words[0::2].astype(np.uint64) << np.uint64(32)) | words[1::2].astype(np.uint64)
  return [int(s) for s in seeds[:count]]


def _pick_colors(task, split, rng):
  """Assign one palette color per role member (one per role if shared)."""
  split_colors = list(COLOR_SPLIT.colors(split))
  if split == 'seen':
    others = list(COLOR_SPLIT.seen_colors)
  else:
    others = list(COLOR_NAMES)

  used = set()
  assigned = {}

  def draw(pool):
    choices = [c for c in pool if c not in used]
    if not choices:
      raise GenerationError('Palette exhausted for task {0}.'.format(task.name))
    color = choices[rng.integers(len(choices))]
    used.add(color)
    return color

  for role in task.roles:
    pool = split_colors if role.name in ('target', 'goal') else others
    if role.name in task.shared_colors:
      color = draw(pool)
      assigned[role.name] = [color] * role.count
    else:
      assigned[role.name] = [draw(pool) for _ in range(role.count)]
  return assigned


def _dilate(mask):
  grown = mask.copy()
  grown[1:] |= mask[:-1]
  grown[:-1] |= mask[1:]
  grown[:, 1:] |= mask[:, :-1]
  grown[:, :-1] |= mask[:, 1:]
  return grown


def generate_scene(task, split, seed):
  """Sample a scene by rejection sampling.

  Objects keep a one pixel gap from each other so that every object renders
  as its own connected region.

  Args:
      task (str or TaskSpec): Task to instantiate.
      split (str): ``"seen"`` or ``"unseen"``.
      seed (int): Scene seed.

  Raises:
      GenerationError: If an object cannot be placed in ``MAX_ATTEMPTS`` draws.
  """
  task = get_task(task)
  rng = np.random.default_rng(int(seed))
  grid_h, grid_w = task.grid
  colors = _pick_colors(task, split, rng)

  occupied = np.zeros((grid_h, grid_w), dtype=bool)
  objects = []
  for role in task.roles:
    for member in range(role.count):
      for attempt in range(MAX_ATTEMPTS):
        theta = role.orientations[rng.integers(len(role.orientations))]
        footprint = anchored(rotate_crop(role.stencil, theta)) if theta else role.stencil
        half = footprint.shape[0] // 2
        offsets = np.argwhere(footprint) - half
        low, high = -offsets.min(axis=0), np.array([grid_h, grid_w]) - offsets.max(axis=0)
        u = int(rng.integers(low[0], high[0]))
        v = int(rng.integers(low[1], high[1]))
        rows, cols = (offsets + [u, v]).T
        if not _dilate(occupied)[rows, cols].any():
          occupied[rows, cols] = True
          break
      else:
        raise GenerationError('Could not place {0} #{1} of task {2} after {3} attempts.'
            .format(role.kind, member, task.name, MAX_ATTEMPTS))
      objects.append(SceneObject(
          id=len(objects) + 1,
          kind=role.kind,
          color=colors[role.name][member],
          pose=(u, v, int(theta)),
          footprint=footprint.astype(bool)))
  return Scene(grid_h, grid_w, BACKGROUND, tuple(objects), int(seed))


def _draw_order(scene):
  containers = [o for o in scene.objects if not o.pickable]
  pickables = [o for o in scene.objects if o.pickable]
  return containers[::-1] + pickables


def render(scene):
  """Paint the scene as a ``(H, W, 3)`` RGB grid.

  Containers are drawn first (later-listed first), pickables on top. Pixels
  carry the exact palette values.
  """
  image = np.empty((scene.grid_h, scene.grid_w, 3))
  image[:] = scene.background
  for obj in _draw_order(scene):
    pixels = obj.pixels()
    inside = ((pixels[:, 0] >= 0) & (pixels[:, 0] < scene.grid_h) &
        (pixels[:, 1] >= 0) & (pixels[:, 1] < scene.grid_w))
    rows, cols = pixels[inside].T
    image[rows, cols] = PALETTE[obj.color]
  return image


def _role_ids(task, scene):
  ids, cursor = {}, 0
  for role in task.roles:
    ids[role.name] = [o.id for o in scene.objects[cursor:cursor + role.count]]
    cursor += role.count
  return ids


def make_episode(task, split, seed):
  """Generate a scene and its instruction plus ground-truth action.

  ``gt_pick`` is the target centroid and ``gt_place`` the goal centroid,
  with the rotation that aligns both footprints.
  """
  task = get_task(task)
  scene = generate_scene(task, split, seed)
  ids = _role_ids(task, scene)
  target = scene.find(ids['target'][0])
  goal = scene.find(ids['goal'][0])
  instruction = task.template.format(
      pick_color=target.color, pick_kind=target.kind,
      place_color=goal.color, place_kind=goal.kind)
  episode = Episode(
      scene=scene,
      instruction=instruction,
      target_object_id=target.id,
      goal_container_id=goal.id,
      gt_pick=None,
      gt_place=None,
      split=split,
      task=task.name,
      target_group=tuple(ids['target']))
  pick, place = next_action(scene, episode)
  return episode._replace(gt_pick=pick, gt_place=place)


def _fit_angle(target, goal):
  """Rotation (degrees) aligning the target with the goal footprint."""
  delta = (goal.pose[2] - target.pose[2]) % 360
  if goal.kind == 'box':
    # rectangles are symmetric under half turns
    delta %= 180
  return int(delta)


def next_action(scene, episode):
  """Ground-truth ``(pick, place)`` for the first group member still outside.

  The member is grasped at its centroid, which lands on the goal centroid
  (or on its pile slot around it). Returns the first member's action when
  every member is already contained.
  """
  goal = scene.find(episode.goal_container_id)
  fractions = containment(scene, episode)
  members = list(episode.target_group)
  pending = [m for m, f in zip(members, fractions) if f < SUCCESS_THRESHOLD]
  member_id = (pending or members)[0]
  target = scene.find(member_id)
  u, v = goal.centroid()
  if len(members) > 1:
    du, dv = PILE_SLOTS[members.index(member_id) % len(PILE_SLOTS)]
    u, v = u + du, v + dv
  return target.centroid(), (int(u), int(v), _fit_angle(target, goal))


def _trim(stencil):
  """Strip empty border rings, keeping the stencil square and odd."""
  while stencil.shape[0] > 1 and not (stencil[0].any() or stencil[-1].any() or
      stencil[:, 0].any() or stencil[:, -1].any()):
    stencil = stencil[1:-1, 1:-1]
  return stencil


def _pickable_at(scene, pixel):
  for obj in reversed([o for o in _draw_order(scene) if o.pickable]):
    pixels = obj.pixels()
    if np.any((pixels[:, 0] == pixel[0]) & (pixels[:, 1] == pixel[1])):
      return obj
  return None


def apply_action(scene, pick, place):
  """Pick the topmost pickable under ``pick`` and place it.

  The grasped pixel lands on ``(place.u, place.v)``, which becomes the new
  pose, and the object turns by ``place.theta`` degrees counter-clockwise
  about it. Footprints leaving the table are shifted back inside. Picking
  empty space leaves the scene unchanged.

  Args:
      scene (Scene): Current scene.
      pick (tuple): ``(u, v)`` grasp pixel.
      place (tuple): ``(u, v, theta)``.

  Returns:
      The new scene.
  """
  obj = _pickable_at(scene, pick)
  if obj is None:
    return scene
  offsets = obj.pixels() - np.array(pick[:2], dtype=int)
  reach = int(np.ceil(np.sqrt(2) * (np.abs(offsets).max() + 1)))
  side = 2 * reach + 1
  stencil = np.zeros((side, side), dtype=bool)
  stencil[offsets[:, 0] + reach, offsets[:, 1] + reach] = True
  theta = place[2] if len(place) > 2 else 0
  if theta % 360:
    stencil = rotate_crop(stencil, theta)
  stencil = _trim(stencil)

  half = stencil.shape[0] // 2
  occupied = np.argwhere(stencil) - half
  u, v = int(place[0]), int(place[1])
  u += max(0, -(u + occupied[:, 0].min())) - max(0, u + occupied[:, 0].max() - (scene.grid_h - 1))
  v += max(0, -(v + occupied[:, 1].min())) - max(0, v + occupied[:, 1].max() - (scene.grid_w - 1))

  moved = obj._replace(pose=(u, v, int(obj.pose[2] + theta) % 360), footprint=stencil)
  logger.debug('------> moved object {0} to {1}'.format(obj.id, moved.pose))
  return scene.replace_object(moved)


def containment(scene, episode):
  """Fraction of each target-group footprint lying inside the goal region."""
  goal = scene.find(episode.goal_container_id)
  region = set(map(tuple, goal.pixels()))
  fractions = []
  for member_id in episode.target_group:
    pixels = scene.find(member_id).pixels()
    inside = sum(1 for p in map(tuple, pixels) if p in region)
    fractions.append(inside / len(pixels) if len(pixels) else 0.)
  return fractions


def check_success(scene, episode):
  """True iff every group member has >= 95% of its footprint in the goal."""
  return all(f >= SUCCESS_THRESHOLD for f in containment(scene, episode))


def _encode_runs(mask):
  """Run lengths of a row-major boolean mask, starting with a False run."""
  flat = np.asarray(mask, dtype=bool).ravel()
  runs, current, length = [], False, 0
  for value in flat:
    if value == current:
      length += 1
    else:
      runs.append(length)
      current, length = value, 1
  runs.append(length)
  return runs


def _decode_runs(runs, side):
  flat = np.zeros(side * side, dtype=bool)
  cursor, value = 0, False
  for length in runs:
    flat[cursor:cursor + length] = value
    cursor += length
    value = not value
  if cursor != side * side:
    raise FormatError('Footprint runs cover {0} cells, expected {1}.'.format(
        cursor, side * side))
  return flat.reshape(side, side)


def scene_to_dict(scene):
  return dict(
      grid=[scene.grid_h, scene.grid_w],
      background=list(scene.background),
      palette=dict((name, list(PALETTE[name])) for name in COLOR_NAMES),
      rng_seed=scene.rng_seed,
      objects=[dict(
          id=obj.id,
          kind=obj.kind,
          color=obj.color,
          pose=list(obj.pose),
          footprint=dict(size=obj.footprint.shape[0], runs=_encode_runs(obj.footprint)))
        for obj in scene.objects])


def scene_from_dict(doc):
  try:
    objects = tuple(SceneObject(
        id=int(o['id']),
        kind=o['kind'],
        color=o['color'],
        pose=tuple(int(p) for p in o['pose']),
        footprint=_decode_runs(o['footprint']['runs'], int(o['footprint']['size'])))
      for o in doc['objects'])
    grid_h, grid_w = doc['grid']
    return Scene(int(grid_h), int(grid_w), tuple(doc['background']), objects,
        int(doc['rng_seed']))
  except (KeyError, TypeError, ValueError) as e:
    raise FormatError('Malformed scene document: {0}'.format(e))


def dump_episode(episode, path):
  """Write an episode (scene included) as an ``arrange-scene/1`` document."""
  doc = dict(
      schema=SCENE_SCHEMA,
      task=episode.task,
      split=episode.split,
      instruction=episode.instruction,
      target_object_id=episode.target_object_id,
      goal_container_id=episode.goal_container_id,
      target_group=list(episode.target_group),
      gt_pick=list(episode.gt_pick),
      gt_place=list(episode.gt_place),
      scene=scene_to_dict(episode.scene))
  with open(path, 'w', encoding='utf-8') as fl:
    json.dump(doc, fl, indent=2, sort_keys=True)


def load_episode(path):
  """Read an episode written by :func:`dump_episode`.

  Raises:
      FormatError: On a wrong schema tag or malformed content.
  """
  with open(path, 'r', encoding='utf-8') as fl:
    try:
      doc = json.load(fl)
    except ValueError as e:
      raise FormatError('{0} is not a scene document: {1}'.format(path, e))
  if doc.get('schema') != SCENE_SCHEMA:
    raise FormatError('Expected schema {0}, got {1}.'.format(SCENE_SCHEMA, doc.get('schema')))
  try:
    return Episode(
        scene=scene_from_dict(doc['scene']),
        instruction=doc['instruction'],
        target_object_id=int(doc['target_object_id']),
        goal_container_id=int(doc['goal_container_id']),
        gt_pick=tuple(doc['gt_pick']),
        gt_place=tuple(doc['gt_place']),
        split=doc['split'],
        task=doc['task'],
        target_group=tuple(doc['target_group']))
  except (KeyError, TypeError) as e:
    raise FormatError('Malformed scene document: {0}'.format(e))


def export_observation(scene, path):
  """Write the rendered scene as a binary PPM (P6)."""
  netpbm.write_ppm(render(scene), path)


__all__ = ('anchored', 'generate_scene', 'render', 'make_episode', 'apply_action',
    'check_success', 'containment', 'next_action', 'dump_episode', 'load_episode')
