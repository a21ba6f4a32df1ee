import numpy as np
import pytest

from PIL import Image

from arrange.errors import DegenerateEmbeddingError, ParameterError, ShapeError
from arrange.fusion import (ConfidenceMap, confidence_map, cosine, export_confidence,
    fuse, fuse_instances, fusion_weights, score_instances, score_instances_backward,
    similarity_profile)
from arrange.segmentation import SegmentationResult, segment


def unit(*values):
  values = np.array(values, dtype=np.float64)
  return values / np.linalg.norm(values)


def test_fusion_weights_two_instances():
  glob = unit(1., 0.)
  instances = [unit(1., 0.), unit(0.86, np.sqrt(1. - 0.86 ** 2))]
  profile = similarity_profile(instances, glob)
  weights = fusion_weights(profile, 0.07)

  np.testing.assert_allclose(profile.zeta, (1., 0.86))
  np.testing.assert_allclose(profile.eta, (0.43, 0.43))
  np.testing.assert_allclose(weights.omega, (0.880797, 0.119203), atol=1e-6)


def test_profile_matches_double_loop():
  rng = np.random.default_rng(0)
  for count in (1, 2, 5, 12):
    instances = rng.normal(size=(count, 32))
    glob = rng.normal(size=32)
    for unbiased in (False, True):
      profile = similarity_profile(instances, glob, unbiased)
      divisor = max(count - 1, 1) if unbiased else count
      for i in range(count):
        assert abs(profile.zeta[i] - cosine(instances[i], glob)) < 1e-9
        pairs = sum(cosine(instances[i], instances[j]) for j in range(count) if j != i)
        assert abs(profile.eta[i] - pairs / divisor) < 1e-9


def test_weights_simplex_and_temperature():
  rng = np.random.default_rng(1)
  instances = rng.normal(size=(6, 8))
  glob = rng.normal(size=8)
  profile = similarity_profile(instances, glob)
  omega = fusion_weights(profile).omega

  assert abs(omega.sum() - 1.) < 1e-6
  assert ((omega > 0) & (omega < 1)).all()
  flat = fusion_weights(profile, 1e6).omega
  assert flat.max() - flat.min() < 1e-4
  sharp = fusion_weights(profile, 1e-6).omega
  assert sharp.max() > 1. - 1e-4
  shifted = profile._replace(zeta=profile.zeta + 3.)
  np.testing.assert_allclose(fusion_weights(shifted).omega, omega)
  with pytest.raises(ParameterError):
    fusion_weights(profile, 0.)


def test_single_instance_takes_the_global_embedding():
  glob = unit(0., 1., 0.)
  fused, weights, _ = fuse_instances([unit(1., 0., 0.)], glob)

  assert weights.omega.tolist() == [1.]
  np.testing.assert_allclose(fused[0].values, glob)


def test_fuse():
  glob, inst = unit(1., 0.), unit(0., 1.)

  np.testing.assert_allclose(fuse(glob, inst, 0.5).values, unit(1., 1.))
  np.testing.assert_allclose(fuse(glob, inst, 0.).values, inst)
  with pytest.raises(ParameterError):
    fuse(glob, inst, 1.5)
  with pytest.raises(ShapeError):
    fuse(glob, unit(1., 0., 0.), 0.5)
  with pytest.raises(DegenerateEmbeddingError):
    fuse(glob, -glob, 0.5)


def test_cosine():
  assert abs(cosine((1., 0.), (0., 2.))) < 1e-12
  assert abs(cosine((1., 1.), (2., 2.)) - 1.) < 1e-12
  with pytest.raises(DegenerateEmbeddingError):
    cosine((0., 0.), (1., 0.))
  with pytest.raises(ParameterError):
    similarity_profile([], unit(1., 0.))


def two_blocks():
  obs = np.zeros((6, 8, 3))
  obs[1:3, 1:3] = (1., 0., 0.)
  obs[3:6, 5:8] = (0., 1., 0.)
  return obs, segment(obs)


def test_confidence_map():
  obs, seg = two_blocks()
  fused = [unit(1., 0.), unit(0., 1.)]
  cmap = confidence_map(fused, unit(1., 1.), seg, obs.shape)

  np.testing.assert_allclose(cmap.per_instance, (np.sqrt(.5), np.sqrt(.5)))
  assert cmap.scores[0, 0] == -1.
  assert abs(cmap.scores[1, 1] - np.sqrt(.5)) < 1e-12
  assert (cmap.scores > -1).sum() == 4 + 9
  with pytest.raises(ParameterError):
    confidence_map(fused[:1], unit(1., 1.), seg, obs.shape)
  with pytest.raises(ShapeError):
    confidence_map(fused, unit(1., 1.), seg, (5, 5))


def test_confidence_map_ignores_instance_order():
  obs = np.zeros((8, 12, 3))
  obs[1:3, 1:3] = (1., 0., 0.)
  obs[4:7, 2:5] = (0., 1., 0.)
  obs[2:6, 7:11] = (0., 0., 1.)
  seg = segment(obs)
  rng = np.random.default_rng(5)
  instances = [unit(*rng.normal(size=6)) for _ in seg]
  glob, text = unit(*rng.normal(size=6)), unit(*rng.normal(size=6))

  fused, _, _ = fuse_instances(instances, glob)
  expected = confidence_map(fused, text, seg, obs.shape)
  for order in ([2, 0, 1], [1, 2, 0], [2, 1, 0]):
    shuffled = SegmentationResult(tuple(seg.instances[k] for k in order))
    fused, _, _ = fuse_instances([instances[k] for k in order], glob)
    cmap = confidence_map(fused, text, shuffled, obs.shape)
    np.testing.assert_allclose(cmap.scores, expected.scores, rtol=0, atol=1e-12)
    np.testing.assert_allclose(cmap.per_instance, [expected.per_instance[k] for k in order],
        rtol=0, atol=1e-12)


def test_export_confidence(tmpdir):
  path = str(tmpdir.join('confidence.pgm'))
  export_confidence(ConfidenceMap(np.array([[-1., 0., 1.]]), ()), path)
  image = Image.open(path)

  assert np.asarray(image).astype(int).tolist() == [[0, 32768, 65535]]


def test_score_backward():
  rng = np.random.default_rng(3)
  instances = rng.normal(size=(4, 6))
  glob = rng.normal(size=6)
  text = rng.normal(size=6)
  weights = rng.normal(size=4)
  for unbiased in (False, True):
    scores, cache = score_instances(instances, glob, text, 0.5, unbiased)
    grad_instances, grad_glob, grad_text = score_instances_backward(cache, weights)

    def objective(i, g, t):
      return float(np.dot(score_instances(i, g, t, 0.5, unbiased)[0], weights))

    eps = 1e-6
    for index in np.ndindex(instances.shape):
      plus, minus = instances.copy(), instances.copy()
      plus[index] += eps
      minus[index] -= eps
      numeric = (objective(plus, glob, text) - objective(minus, glob, text)) / (2 * eps)
      assert abs(numeric - grad_instances[index]) < 1e-6
    for k in range(6):
      step = np.zeros(6)
      step[k] = eps
      numeric = (objective(instances, glob + step, text) -
          objective(instances, glob - step, text)) / (2 * eps)
      assert abs(numeric - grad_glob[k]) < 1e-6
      numeric = (objective(instances, glob, text + step) -
          objective(instances, glob, text - step)) / (2 * eps)
      assert abs(numeric - grad_text[k]) < 1e-6


def test_scores_match_fused_cosines():
  rng = np.random.default_rng(4)
  instances = rng.normal(size=(3, 5))
  glob = rng.normal(size=5)
  text = rng.normal(size=5)
  scores, _ = score_instances(instances, glob, text)
  fused, _, _ = fuse_instances(list(instances), glob)

  np.testing.assert_allclose(scores, [cosine(e, text) for e in fused], atol=1e-12)
