import numpy as np
import pytest

from arrange.errors import FormatError, ParameterError
from arrange.netpbm import write_pgm
from arrange.scene import generate_scene, render
from arrange.segmentation import crop, export_masks, import_masks, segment

RED = (1., 0., 0.)
BLUE = (0., 0., 1.)


def canvas(height=12, width=12):
  return np.zeros((height, width, 3))


def test_disjoint_blocks():
  obs = canvas()
  obs[1:5, 1:5] = RED
  obs[6:10, 7:11] = RED
  seg = segment(obs)

  assert len(seg) == 2
  assert [inst.area for inst in seg] == [16, 16]
  assert [inst.bbox for inst in seg] == [(1, 1, 4, 4), (6, 7, 9, 10)]
  assert [inst.id for inst in seg] == [1, 2]


def test_touching_colors_split():
  obs = canvas()
  obs[2:6, 2:4] = RED
  obs[2:6, 4:6] = BLUE
  seg = segment(obs)

  assert len(seg) == 2
  assert seg.instance_at((3, 3)).bbox == (2, 2, 5, 3)
  assert seg.instance_at((3, 4)).bbox == (2, 4, 5, 5)
  assert seg.instance_at((0, 0)) is None


def test_small_and_empty():
  obs = canvas()
  obs[0, 0] = RED
  obs[5, 5:7] = BLUE

  assert len(segment(obs)) == 0
  assert len(segment(obs, min_area=1)) == 2
  assert len(segment(canvas())) == 0


def test_diagonal_pixels_are_separate():
  obs = canvas()
  obs[2:4, 2:4] = RED
  obs[4:6, 4:6] = RED

  assert len(segment(obs)) == 2


def test_order_follows_bbox_corner():
  obs = canvas()
  obs[6:9, 1:4] = RED
  obs[1:4, 6:9] = BLUE
  obs[1:4, 1:4] = BLUE
  seg = segment(obs)

  assert [inst.bbox[:2] for inst in seg] == [(1, 1), (1, 6), (6, 1)]


def test_crop_geometry():
  obs = canvas(10, 10)
  obs[2:5, 5:7] = RED
  obs[0, 0:4] = BLUE
  target = segment(obs).instance_at((2, 5))
  patch = crop(obs, target, pad=1)

  assert patch.shape == (5, 5, 3)
  assert np.array_equal(patch[1:4, 2:4], np.broadcast_to(RED, (3, 2, 3)))
  assert patch.sum() == 6.


def test_crop_outside_the_image():
  obs = canvas(6, 6)
  obs[0:2, 0:2] = RED
  patch = crop(obs, segment(obs).instances[0], pad=2)

  assert patch.shape == (6, 6, 3)
  assert patch[:2].sum() == 0.
  assert patch[2:4, 2:4, 0].sum() == 4.
  with pytest.raises(ParameterError):
    crop(obs, segment(obs).instances[0], pad=-1)


def test_rendered_scene(tiny_task):
  scene = generate_scene(tiny_task, 'seen', 3)
  seg = segment(render(scene))

  assert len(seg) == len(scene.objects)
  areas = sorted(inst.area for inst in seg)
  assert areas == sorted(int(o.footprint.sum()) for o in scene.objects)


def test_masks_round_trip(tmpdir, tiny_task):
  obs = render(generate_scene(tiny_task, 'unseen', 4))
  seg = segment(obs)
  path = str(tmpdir.join('masks.pgm'))
  export_masks(seg, obs.shape[:2], path)

  assert import_masks(path, obs.shape) == seg


def test_import_masks_densifies(tmpdir):
  labels = np.zeros((6, 6), dtype=int)
  labels[0:2, 0:2] = 7
  labels[3:5, 3:5] = 3
  path = str(tmpdir.join('external.pgm'))
  write_pgm(labels, path)
  seg = import_masks(path)

  assert [inst.id for inst in seg] == [1, 2]
  assert seg.instances[0].bbox == (0, 0, 1, 1)
  with pytest.raises(FormatError):
    import_masks(path, (8, 8))
