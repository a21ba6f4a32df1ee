import json
import os

import numpy as np
import pytest

from arrange.embedding import EncoderParams
from arrange.errors import ParameterError
from arrange.evaluation import (EvalConfig, check_eval_config, format_table, initial_params,
    run_benchmark, run_eval, run_episode, write_benchmark, write_report)
from arrange.policy import Agent, PolicyNets, RandomAgent
from arrange.scene import get_task
from arrange.training import TrainConfig

GRID = (32, 32)

calibration = pytest.mark.skipif(not os.environ.get('ARRANGE_CALIBRATION'),
    reason='long training run, set ARRANGE_CALIBRATION=1')


def oracle_report(split, episodes=3, threads=1):
  config = EvalConfig('put-block-in-bowl', split, episodes, 3, 0, GRID)
  return run_eval(config, PolicyNets.oracle(), EncoderParams.oracle(), threads=threads)


@pytest.mark.parametrize('split', ['seen', 'unseen'])
def test_oracle_solves_bowls(split):
  report = oracle_report(split)

  assert report.success_rate == 100.
  assert all(r.credit >= 0.95 for r in report.per_episode)
  assert all(r.steps_used == 1 for r in report.per_episode)


def test_run_episode_with_a_step_budget():
  task = get_task('put-block-in-bowl')._replace(grid=GRID)
  agent = Agent(EncoderParams.oracle(), PolicyNets.oracle())

  assert run_episode(agent, task, 'seen', 11, max_steps=1)[:2] == (1, True)
  steps, success, credit = run_episode(RandomAgent(0), task, 'seen', 11, max_steps=2)
  assert 1 <= steps <= 2
  assert 0. <= credit <= 1.


def test_random_baseline_is_reproducible():
  config = EvalConfig('put-block-in-bowl', 'seen', 4, 2, 5, GRID)
  first = run_eval(config, baseline='random', threads=1)
  second = run_eval(config, baseline='random', threads=2)

  assert first.per_episode == second.per_episode
  assert 0. <= first.success_rate <= 100.


def test_thread_count_does_not_change_the_report():
  assert oracle_report('seen', 4, threads=1).per_episode == \
      oracle_report('seen', 4, threads=3).per_episode


def test_check_eval_config():
  check_eval_config(EvalConfig('pack-block-in-box', 'unseen'))
  with pytest.raises(ParameterError):
    check_eval_config(EvalConfig('stack-blocks', 'seen'))
  with pytest.raises(ParameterError):
    check_eval_config(EvalConfig('put-block-in-bowl', 'novel'))
  with pytest.raises(ParameterError):
    check_eval_config(EvalConfig('put-block-in-bowl', 'seen', episodes=0))
  with pytest.raises(ParameterError):
    check_eval_config(EvalConfig('put-block-in-bowl', 'seen', max_steps=0))
  with pytest.raises(ParameterError):
    run_eval(EvalConfig('put-block-in-bowl', 'seen', 1, 1, 0, GRID), baseline='greedy')


def test_write_report(tmpdir):
  report = oracle_report('seen', 2)
  write_report(report, str(tmpdir))

  with open(str(tmpdir.join('report.json'))) as fl:
    doc = json.load(fl)
  assert doc['schema'] == 'arrange-report/1'
  assert doc['success_rate'] == 100.
  assert doc['config']['grid'] == list(GRID)
  assert [e['index'] for e in doc['episodes']] == [0, 1]
  lines = tmpdir.join('episodes.csv').read().splitlines()
  assert lines[0] == 'index,seed,steps_used,success,credit'
  assert len(lines) == 3


def test_initial_params():
  nets, encoders = initial_params('perturbed', 2)

  assert nets == PolicyNets.oracle()
  assert encoders == EncoderParams.perturbed(seed=2)
  assert initial_params('random', 1)[0] == PolicyNets.random(1)
  with pytest.raises(ParameterError):
    initial_params('pretrained')


def test_benchmark(tmpdir):
  report = run_benchmark(['put-block-in-bowl'], demo_counts=(0, 1), init='oracle',
      train_config=TrainConfig(steps=1, learning_rate=1e-4), episodes=2, max_steps=2,
      grid=GRID, threads=1)
  table = report.table

  assert list(table.columns) == ['task', 'demos', 'seen', 'unseen', 'gap',
      'seen_credit', 'unseen_credit']
  assert table.demos.tolist() == [0, 1]
  assert table.seen.iloc[0] == 100.
  assert (table.gap == table.seen - table.unseen).all()
  assert len(report.reports) == 4
  assert report.settings['steps'] == 1

  text = format_table(table)
  assert text.startswith('put-block-in-bowl\n')
  assert '0 demos' in text and '1 demos' in text
  assert 'gap' in text

  write_benchmark(report, str(tmpdir))
  with open(str(tmpdir.join('benchmark.json'))) as fl:
    doc = json.load(fl)
  assert doc['schema'] == 'arrange-bench/1'
  assert [row['demos'] for row in doc['table']] == [0, 1]
  assert len(doc['cells']) == 4
  assert tmpdir.join('benchmark.csv').check()
  assert tmpdir.join('benchmark.txt').read() == text


@calibration
def test_more_demonstrations_help_on_unseen_colors():
  counts = (0, 1, 10, 20)
  rates = []
  for seed in range(3):
    report = run_benchmark(['put-block-in-bowl'], demo_counts=counts, splits=('unseen',),
        seed=seed, init='perturbed', train_config=TrainConfig(seed=seed, partition='both'))
    rates.append(report.table.unseen.tolist())
  medians = np.median(rates, axis=0)

  assert (np.diff(medians[1:]) >= 0).all(), medians
  assert medians[-1] - medians[0] >= 30., medians
