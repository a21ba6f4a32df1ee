import numpy as np
import pytest

from arrange.policy import AgentOptions
from arrange.scene import Role, TaskSpec, anchored, disc, rectangle


@pytest.fixture
def tiny_task():
  """Bowl task on a 20x20 table with 3x3 blocks."""
  return TaskSpec('put-block-in-bowl', (20, 20),
      'put the {pick_color} block in a {place_color} bowl', (
        Role('goal', 1, 'bowl', disc(3), (0,)),
        Role('distractor_container', 1, 'bowl', disc(3), (0,)),
        Role('target', 1, 'block', rectangle(3, 3), (0,)),
        Role('distractor', 1, 'block', rectangle(3, 3), (0,)),
      ), ())


@pytest.fixture
def tiny_options():
  return AgentOptions(crop_size=7)


@pytest.fixture
def l_stencil():
  """5x5 L, two cells thick, anchored at its corner. No rotational symmetry."""
  shape = np.zeros((5, 5), dtype=bool)
  shape[:, :2] = True
  shape[3:, :] = True
  return anchored(shape)
