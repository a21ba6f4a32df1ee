import numpy as np
import pytest

from arrange.errors import FormatError
from arrange.netpbm import read_pgm, read_ppm, write_pgm, write_ppm


def test_pgm_8bit(tmpdir):
  path = str(tmpdir.join('labels.pgm'))
  labels = np.array([[0, 1, 2], [3, 255, 0]])
  write_pgm(labels, path)

  with open(path, 'rb') as fl:
    assert fl.read(2) == b'P5'
  assert np.array_equal(read_pgm(path), labels)


def test_pgm_16bit_is_big_endian(tmpdir):
  path = str(tmpdir.join('scores.pgm'))
  write_pgm(np.array([[0, 258]]), path, depth=16)

  with open(path, 'rb') as fl:
    data = fl.read()
  assert data.startswith(b'P5')
  assert b'65535' in data[:20]
  assert data.endswith(b'\x00\x00\x01\x02')
  # only 8-bit label maps are read back
  with pytest.raises(FormatError):
    read_pgm(path)


def test_pgm_range_checks(tmpdir):
  path = str(tmpdir.join('bad.pgm'))
  with pytest.raises(FormatError):
    write_pgm(np.array([[256]]), path)
  with pytest.raises(FormatError):
    write_pgm(np.array([[-1]]), path, depth=16)
  with pytest.raises(FormatError):
    write_pgm(np.array([[1]]), path, depth=12)
  with pytest.raises(FormatError):
    write_pgm(np.zeros((2, 2, 2)), path)


def test_ppm(tmpdir):
  path = str(tmpdir.join('obs.ppm'))
  grid = np.zeros((4, 5, 3))
  grid[1, 2] = (1., 0.5, 0.)
  write_ppm(grid, path)

  with open(path, 'rb') as fl:
    assert fl.read(2) == b'P6'
  back = read_ppm(path)
  assert back.shape == (4, 5, 3)
  np.testing.assert_allclose(back[1, 2], (1., 128 / 255., 0.))
  with pytest.raises(FormatError):
    read_pgm(path)


def test_garbage(tmpdir):
  path = tmpdir.join('garbage.pgm')
  path.write('P5 this is not an image')
  with pytest.raises(FormatError):
    read_pgm(str(path))
  with pytest.raises(FormatError):
    read_ppm(str(path))
