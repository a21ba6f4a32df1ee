import os

import numpy as np
import pytest

from arrange import training
from arrange.embedding import SLOTS, EncoderParams, resolve_partition
from arrange.errors import DivergenceError, ParameterError
from arrange.numerics import ConvLayer
from arrange.policy import PolicyNets
from arrange.training import (TrainConfig, analytic_gradients, check_config,
    gradient_check, loss, make_demonstrations, prepare, train_few_shot, worker_count)

calibration = pytest.mark.skipif(not os.environ.get('ARRANGE_CALIBRATION'),
    reason='long training run, set ARRANGE_CALIBRATION=1')


def zero_nets():
  return PolicyNets(
      [ConvLayer(np.zeros((1, 1, 4, 1)), np.zeros(1))],
      [ConvLayer(np.zeros((1, 1, 3, 4)), np.zeros(4))],
      [ConvLayer(np.zeros((1, 1, 4, 4)), np.zeros(4))])


def test_make_demonstrations(tiny_task):
  demos = make_demonstrations(tiny_task, 'seen', 3, 0)

  assert len(demos) == 3
  for demo in demos:
    assert demo.tl_target == tuple(demo.episode.gt_pick)
    assert demo.rd_target[:2] == tuple(demo.episode.gt_place[:2])
    assert demo.rd_target[2] == 36
    assert demo.obs.shape == (20, 20, 3)
  again = make_demonstrations(tiny_task, 'seen', 3, 0)
  assert [d.episode.instruction for d in again] == [d.episode.instruction for d in demos]
  with pytest.raises(ParameterError):
    make_demonstrations(tiny_task, 'seen', 0, 0)


def test_uniform_heads_give_uniform_loss(tiny_task, tiny_options):
  demo = make_demonstrations(tiny_task, 'seen', 1, 1)[0]
  total, l_tl, l_rd = loss(demo, zero_nets(), EncoderParams.oracle(),
      TrainConfig(options=tiny_options))

  assert abs(l_tl - np.log(400)) < 1e-9
  assert abs(l_rd - np.log(36 * 400)) < 1e-9
  assert abs(total - l_tl - l_rd) < 1e-12


def test_loss_weights(tiny_task, tiny_options):
  demo = make_demonstrations(tiny_task, 'seen', 1, 1)[0]
  config = TrainConfig(options=tiny_options, lambda_tl=2., lambda_rd=0.)
  total, l_tl, _ = loss(demo, zero_nets(), EncoderParams.oracle(), config)

  assert abs(total - 2. * l_tl) < 1e-12


def test_frozen_slots_get_zero_gradients(tiny_task, tiny_options):
  demos = make_demonstrations(tiny_task, 'seen', 2, 2)
  for policy in ('none', 'text_ffn_bias_only', 'visual_layernorm_only', 'both'):
    config = TrainConfig(options=tiny_options, partition=policy, threads=1)
    _, grads = analytic_gradients(demos, PolicyNets.oracle(), EncoderParams.perturbed(), config)
    partition = resolve_partition(policy)
    for name in SLOTS:
      if name in partition:
        assert np.abs(grads.encoders[name]).max() > 0, (policy, name)
      else:
        assert not grads.encoders[name].any(), (policy, name)


def test_training_touches_only_the_partition(tiny_task, tiny_options):
  demos = make_demonstrations(tiny_task, 'seen', 2, 3)
  encoders, nets = EncoderParams.perturbed(seed=3), PolicyNets.oracle()
  config = TrainConfig(steps=2, learning_rate=1e-3, partition='text_ffn_bias_only',
      options=tiny_options)
  trained_nets, trained, trace = train_few_shot(demos, nets, encoders, config)

  assert list(trace.columns) == ['step', 'total', 'l_tl', 'l_rd']
  assert trace.step.tolist() == [0, 1]
  assert trained_nets != nets
  for name in SLOTS:
    if name == 'ffn_proj_bias':
      assert not np.array_equal(trained[name], encoders[name])
    else:
      assert np.array_equal(trained[name], encoders[name]), name
  # inputs are not modified
  assert nets == PolicyNets.oracle()
  assert encoders == EncoderParams.perturbed(seed=3)


def test_small_step_decreases_loss(tiny_task, tiny_options):
  demos = make_demonstrations(tiny_task, 'seen', 2, 4)
  config = TrainConfig(steps=2, learning_rate=1e-4, partition='both', options=tiny_options)
  _, _, trace = train_few_shot(demos, PolicyNets.oracle(), EncoderParams.perturbed(seed=4),
      config)

  assert trace.total.iloc[1] < trace.total.iloc[0]
  assert np.isfinite(trace[['total', 'l_tl', 'l_rd']].values).all()


def test_first_steps_never_increase_the_loss():
  # pass-through heads; randomly drawn heads can overshoot at this rate
  demos = make_demonstrations('put-block-in-bowl', 'seen', 3, 0)
  config = TrainConfig(steps=10, learning_rate=0.05, partition='both')
  _, _, trace = train_few_shot(demos, PolicyNets.oracle(), EncoderParams.perturbed(), config)

  assert len(trace) == 10
  assert (np.diff(trace.total.values) <= 1e-6).all(), trace.total.tolist()
  assert trace.total.iloc[-1] < trace.total.iloc[0]


@calibration
def test_calibration_run():
  demos = make_demonstrations('put-block-in-bowl', 'seen', 20, 0)
  config = TrainConfig(steps=300, learning_rate=0.05, partition='both')
  nets, encoders, trace = train_few_shot(demos, PolicyNets.oracle(), EncoderParams.perturbed(),
      config)
  final = training.analytic_gradients(demos, nets, encoders, config)[0][0]

  assert (np.diff(trace.total.values[:11]) <= 1e-6).all()
  assert final < 0.1 * trace.total.iloc[0], (trace.total.iloc[0], final)


def test_frozen_encoders_still_learn_through_the_heads(tiny_task, tiny_options):
  demos = make_demonstrations(tiny_task, 'seen', 1, 9)
  encoders = EncoderParams.perturbed(seed=9)
  config = TrainConfig(steps=1, learning_rate=1e-4, partition='none', options=tiny_options)
  nets, trained, trace = train_few_shot(demos, PolicyNets.oracle(), encoders, config)

  assert len(trace) == 1
  assert trained == encoders
  before = loss(demos[0], PolicyNets.oracle(), encoders, config)[0]
  after = loss(demos[0], nets, trained, config)[0]
  assert after < before


def test_batch_gradient_is_the_mean(tiny_task, tiny_options):
  demos = make_demonstrations(tiny_task, 'seen', 2, 5)
  config = TrainConfig(options=tiny_options, partition='all', threads=1)
  nets, encoders = PolicyNets.random(seed=5), EncoderParams.perturbed(seed=5)
  losses, grads = analytic_gradients(demos, nets, encoders, config)
  first_losses, first = analytic_gradients(demos[:1], nets, encoders, config)
  second_losses, second = analytic_gradients(demos[1:], nets, encoders, config)

  np.testing.assert_allclose(losses, (np.array(first_losses) + second_losses) / 2.)
  np.testing.assert_allclose(grads.encoders['ffn_proj_bias'],
      (first.encoders['ffn_proj_bias'] + second.encoders['ffn_proj_bias']) / 2.)
  np.testing.assert_allclose(grads.nets['phi'][0][0],
      (first.nets['phi'][0][0] + second.nets['phi'][0][0]) / 2.)


def test_thread_count_does_not_change_results(tiny_task, tiny_options):
  demos = [prepare(d, tiny_options) for d in make_demonstrations(tiny_task, 'seen', 3, 6)]
  nets, encoders = PolicyNets.random(seed=6), EncoderParams.perturbed(seed=6)
  serial = analytic_gradients(demos, nets, encoders,
      TrainConfig(options=tiny_options, partition='all', threads=1))
  parallel = analytic_gradients(demos, nets, encoders,
      TrainConfig(options=tiny_options, partition='all', threads=3))

  assert serial[0] == parallel[0]
  for name in SLOTS:
    assert np.array_equal(serial[1].encoders[name], parallel[1].encoders[name])
  for (a, b), (c, d) in zip(serial[1].nets['psi'], parallel[1].nets['psi']):
    assert np.array_equal(a, c) and np.array_equal(b, d)


def test_gradient_check(tiny_task, tiny_options):
  demo = make_demonstrations(tiny_task, 'seen', 1, 7)[0]
  config = TrainConfig(options=tiny_options, partition='text_ffn_bias_only')
  nets = PolicyNets.random(seed=7, depth=1, kernel=3)
  error = gradient_check(nets, EncoderParams.perturbed(seed=7), demo, config, samples=40)

  assert error < 1e-3


def test_divergence(monkeypatch, tiny_task, tiny_options):
  demos = make_demonstrations(tiny_task, 'seen', 1, 8)
  config = TrainConfig(steps=3, options=tiny_options)
  _, grads = analytic_gradients(demos, PolicyNets.oracle(), EncoderParams.oracle(), config)
  monkeypatch.setattr(training, 'analytic_gradients',
      lambda *args: ((float('nan'), 0., float('nan')), grads))

  with pytest.raises(DivergenceError) as error:
    train_few_shot(demos, PolicyNets.oracle(), EncoderParams.oracle(), config)
  assert error.value.step == 0


def test_config_checks():
  with pytest.raises(ParameterError):
    check_config(TrainConfig(steps=0))
  with pytest.raises(ParameterError):
    check_config(TrainConfig(learning_rate=0.))
  with pytest.raises(ParameterError):
    check_config(TrainConfig(lambda_rd=-1.))
  with pytest.raises(ParameterError):
    check_config(TrainConfig(partition='most'))
  with pytest.raises(ParameterError):
    train_few_shot([], PolicyNets.oracle(), EncoderParams.oracle())


def test_worker_count(monkeypatch):
  monkeypatch.setenv('ARRANGE_THREADS', '3')
  assert worker_count() == 3
  assert worker_count(2) == 2
  monkeypatch.setenv('ARRANGE_THREADS', '0')
  assert worker_count() >= 1
