# -*- coding: utf-8 -*-
"""Success-rate evaluation and the demonstration-count benchmark."""
from __future__ import division
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor

import json
import os
import numpy as np
import pandas as pd

from codecs import open
from tqdm import tqdm

from . import __version__
from .embedding import EncoderParams, resolve_partition
from .errors import ParameterError
from .logger import logger
from .policy import Agent, AgentOptions, PolicyNets, RandomAgent, as_action
from .scene import (SPLITS, apply_action, check_success, containment, episode_seeds,
    get_task, make_episode, render)
from .training import TrainConfig, make_demonstrations, train_few_shot, worker_count

EVAL_STREAM = 2
EPISODES = 50
MAX_STEPS = 5
DEMO_COUNTS = (1, 10, 20)
INITIALIZATIONS = ('oracle', 'perturbed', 'random')
REPORT_SCHEMA = 'arrange-report/1'
BENCHMARK_SCHEMA = 'arrange-bench/1'


class EvalConfig(namedtuple('EvalConfig', 'task split episodes max_steps seed grid')):
  """One evaluation run; ``grid`` overrides the task's table size."""
  __slots__ = ()


EvalConfig.__new__.__defaults__ = (EPISODES, MAX_STEPS, 0, None)


class EpisodeResult(namedtuple('EpisodeResult', 'index seed steps_used success credit')):
  """Outcome of one episode; ``credit`` is the mean contained fraction."""
  __slots__ = ()


class EvalReport(namedtuple('EvalReport', 'success_rate per_episode config version')):
  __slots__ = ()

  def frame(self):
    return pd.DataFrame(list(self.per_episode), columns=EpisodeResult._fields)

  def to_dict(self):
    return dict(
        schema=REPORT_SCHEMA,
        version=self.version,
        config=self.config._asdict(),
        success_rate=self.success_rate,
        episodes=[dict(r._asdict()) for r in self.per_episode])


def check_eval_config(config):
  """Validate an :class:`EvalConfig`.

  Raises:
      ParameterError: On a bad task, split, episode count or step budget.
  """
  get_task(config.task)
  if config.split not in SPLITS:
    raise ParameterError('Unknown split "{0}".'.format(config.split))
  if int(config.episodes) < 1:
    raise ParameterError('Need at least one episode, got {0}.'.format(config.episodes))
  if int(config.max_steps) < 1:
    raise ParameterError('Need max_steps >= 1, got {0}.'.format(config.max_steps))
  return config


def resolve_task(task, grid=None):
  task = get_task(task)
  return task._replace(grid=tuple(int(g) for g in grid)) if grid else task


def run_episode(agent, task, split, seed, max_steps=MAX_STEPS):
  """Act until success or until the step budget runs out.

  Returns:
      ``(steps_used, success, credit)``.
  """
  episode = make_episode(task, split, seed)
  agent = agent.for_episode(seed)
  scene = episode.scene
  for step in range(1, max_steps + 1):
    pick, place = agent.act(render(scene), episode.instruction)
    scene = apply_action(scene, *as_action(pick, place))
    if check_success(scene, episode):
      return step, True, float(np.mean(containment(scene, episode)))
  return max_steps, False, float(np.mean(containment(scene, episode)))


def run_eval(config, nets=None, encoders=None, options=None, baseline=None, threads=None,
    progress=False):
  """Success rate of a policy over ``config.episodes`` seeded episodes.

  Args:
      config (EvalConfig): What to evaluate.
      nets (PolicyNets): Heads of the policy.
      encoders (EncoderParams): Encoders of the policy.
      options (AgentOptions): Inference knobs.
      baseline (str): ``"random"`` evaluates the chance baseline instead.
      threads (int): Worker threads (``ARRANGE_THREADS`` if None).
      progress (bool): Show a progress bar.

  Raises:
      RuntimeError: If an episode fails; the message names its seed.
  """
  check_eval_config(config)
  if baseline == 'random':
    agent = RandomAgent(config.seed)
  elif baseline is None:
    agent = Agent(encoders, nets, options or AgentOptions())
  else:
    raise ParameterError('Unknown baseline "{0}".'.format(baseline))
  task = resolve_task(config.task, config.grid)
  seeds = episode_seeds(config.seed, int(config.episodes), EVAL_STREAM)

  def evaluate(index):
    seed = seeds[index]
    try:
      steps, success, credit = run_episode(agent, task, config.split, seed, int(config.max_steps))
    except Exception as e:
      raise RuntimeError('Episode {0} (seed {1}) failed: {2}'.format(index, seed, e))
    return EpisodeResult(index, seed, steps, success, credit)

  indices = range(len(seeds))
  workers = min(worker_count(threads), len(seeds))
  if workers > 1:
    with ThreadPoolExecutor(max_workers=workers) as pool:
      results = pool.map(evaluate, indices)
      if progress:
        results = tqdm(results, total=len(seeds), desc='--> Episodes', unit='episodes')
      per_episode = list(results)
  else:
    if progress:
      indices = tqdm(indices, desc='--> Episodes', unit='episodes')
    per_episode = [evaluate(i) for i in indices]

  successes = sum(1 for r in per_episode if r.success)
  rate = 100. * successes / len(per_episode)
  logger.debug('----> {0} {1}: {2}/{3} episodes succeeded'.format(
      config.task, config.split, successes, len(per_episode)))
  return EvalReport(rate, tuple(per_episode), config, __version__)


def write_report(report, directory):
  """Write ``report.json`` and ``episodes.csv`` into ``directory``."""
  with open(os.path.join(directory, 'report.json'), 'w', encoding='utf-8') as fl:
    json.dump(report.to_dict(), fl, indent=2, sort_keys=True)
  report.frame().to_csv(os.path.join(directory, 'episodes.csv'), index=False)


def initial_params(init, seed=0):
  """Starting ``(nets, encoders)`` of a benchmark cell.

  ``oracle`` and ``perturbed`` share the pass-through heads and differ in the
  noise on the aligned encoder projections; ``random`` draws everything.
  """
  if init == 'oracle':
    return PolicyNets.oracle(), EncoderParams.oracle(seed)
  if init == 'perturbed':
    return PolicyNets.oracle(), EncoderParams.perturbed(seed=seed)
  if init == 'random':
    return PolicyNets.random(seed), EncoderParams.random(seed)
  raise ParameterError('Unknown initialization "{0}". Known: {1}.'.format(
      init, ', '.join(INITIALIZATIONS)))


class BenchmarkReport(namedtuple('BenchmarkReport', 'table reports settings')):
  """Success table, per-cell evaluation reports and the sweep settings."""
  __slots__ = ()

  def to_dict(self):
    return dict(
        schema=BENCHMARK_SCHEMA,
        version=__version__,
        settings=self.settings,
        table=json.loads(self.table.to_json(orient='records')),
        cells=[report.to_dict() for report in self.reports])


def run_benchmark(tasks, demo_counts=DEMO_COUNTS, splits=SPLITS, seed=0, init='perturbed',
    train_config=None, episodes=EPISODES, max_steps=MAX_STEPS, grid=None, options=None,
    threads=None, progress=False):
  """Train fresh parameters per (task, demo count) and evaluate every split.

  Demonstrations come from the seen split. A demo count of 0 evaluates the
  untrained starting point.

  Returns:
      BenchmarkReport whose table has one row per (task, demos) with a
      success-rate column and a partial-credit column per split, plus
      ``gap`` = seen minus unseen when both splits are evaluated.
  """
  train_config = train_config or TrainConfig(seed=seed, options=options)
  rows, reports = [], []
  for task_name in tasks:
    task = resolve_task(task_name, grid)
    for count in demo_counts:
      logger.debug('--> {0}, {1} demonstrations'.format(task.name, count))
      try:
        nets, encoders = initial_params(init, seed)
        if count:
          demos = make_demonstrations(task, 'seen', int(count), seed)
          nets, encoders, _ = train_few_shot(demos, nets, encoders, train_config, progress)
        row = dict(task=task.name, demos=int(count))
        for split in splits:
          config = EvalConfig(task.name, split, episodes, max_steps, seed, grid)
          report = run_eval(config, nets, encoders, options, threads=threads, progress=progress)
          reports.append(report)
          row[split] = report.success_rate
          row[split + '_credit'] = float(np.mean([r.credit for r in report.per_episode]))
      except Exception as e:
        raise RuntimeError('Benchmark cell ({0}, {1} demos) failed: {2}'.format(
            task.name, count, e))
      if 'seen' in row and 'unseen' in row:
        row['gap'] = row['seen'] - row['unseen']
      rows.append(row)

  columns = ['task', 'demos'] + list(splits)
  if 'seen' in splits and 'unseen' in splits:
    columns.append('gap')
  columns += [split + '_credit' for split in splits]
  settings = dict(tasks=list(tasks), demo_counts=[int(c) for c in demo_counts],
      splits=list(splits), seed=int(seed), init=init, episodes=int(episodes),
      max_steps=int(max_steps), grid=list(grid) if grid else None,
      steps=int(train_config.steps), learning_rate=float(train_config.learning_rate),
      partition=resolve_partition(train_config.partition).policy)
  return BenchmarkReport(pd.DataFrame(rows, columns=columns), tuple(reports), settings)


def format_table(table):
  """Aligned text table: one block per task, demo counts as columns."""
  blocks = []
  measures = [c for c in table.columns if c not in ('task', 'demos') and
      not c.endswith('_credit')]
  for task, group in table.groupby('task', sort=False):
    block = group.set_index('demos')[measures].T
    block.columns = ['{0} demos'.format(c) for c in block.columns]
    blocks.append('{0}\n{1}'.format(task, block.to_string(float_format=lambda v: '{0:.1f}'.format(v))))
  return '\n\n'.join(blocks) + '\n'


def write_benchmark(report, directory):
  """Write ``benchmark.json``, ``benchmark.csv`` and ``benchmark.txt``."""
  with open(os.path.join(directory, 'benchmark.json'), 'w', encoding='utf-8') as fl:
    json.dump(report.to_dict(), fl, indent=2, sort_keys=True)
  report.table.to_csv(os.path.join(directory, 'benchmark.csv'), index=False)
  with open(os.path.join(directory, 'benchmark.txt'), 'w', encoding='utf-8') as fl:
    fl.write(format_table(report.table))
