# -*- coding: utf-8 -*-
"""Defines the console app commands."""
from contextlib import contextmanager

import click
import datetime
import glob2 as glob
import json
import os
import sys

from codecs import open
from tqdm import tqdm

from . import logger, __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .embedding import PARTITIONS, export_embeddings, import_embeddings
from .evaluation import (DEMO_COUNTS, EPISODES, INITIALIZATIONS, MAX_STEPS, EvalConfig,
    format_table, initial_params, resolve_task, run_benchmark, run_eval, write_benchmark,
    write_report)
from .fusion import FUSION_TEMPERATURE, export_confidence
from .logger import (error_log_name, summary_log_name, run_log_name,
    attach_file_loggers, detach_file_loggers)
from .policy import CROP_SIZE, Agent, AgentOptions, dump_decision
from .scene import SPLITS, TASKS, episode_seeds, dump_episode, export_observation, \
    load_episode, make_episode, render
from .segmentation import export_masks, import_masks
from .training import LEARNING_RATE, TRAIN_STEPS, TrainConfig, make_demonstrations, \
    train_few_shot

GEN_STREAM = 0


def load_config(ctx, param, value):
  """Read a JSON flag file into the command's default map.

  The file is either a flat object of flag names, or an object keyed by
  command name holding such objects. Explicit flags still win.
  """
  if not value:
    return
  try:
    with open(value, 'r', encoding='utf-8') as fl:
      data = json.load(fl)
  except ValueError as e:
    raise click.BadParameter('not a JSON object ({0})'.format(e))
  if not isinstance(data, dict):
    raise click.BadParameter('not a JSON object')
  if isinstance(data.get(ctx.info_name), dict):
    data = data[ctx.info_name]
  defaults = dict(ctx.default_map or {})
  for key, flag_value in data.items():
    if not isinstance(flag_value, dict):
      defaults[key.lstrip('-').replace('-', '_')] = flag_value
  ctx.default_map = defaults


def common_options(fn):
  """Options shared by every command."""
  for decorator in reversed([
      click.option('--config', type=click.Path(exists=True, dir_okay=False),
          callback=load_config, is_eager=True, expose_value=False,
          help='JSON file of flag values; explicit flags override it.'),
      click.option('-o', '--out', default='./output', metavar='<path>',
          help='Output directory.'),
      click.option('-x', '--no-logging', is_flag=True,
          help='Do not write any log files.'),
      click.option('--seed', default=0, type=int, show_default=True,
          help='Master seed.')]):
    fn = decorator(fn)
  return fn


def task_options(fn):
  for decorator in reversed([
      click.option('--task', default='put-block-in-bowl', show_default=True,
          type=click.Choice(sorted(TASKS))),
      click.option('--split', default='seen', show_default=True, type=click.Choice(SPLITS)),
      click.option('--grid', type=int, default=None, metavar='<n>',
          help='Square table size overriding the task default.')]):
    fn = decorator(fn)
  return fn


def agent_options(fn):
  for decorator in reversed([
      click.option('--tau', default=FUSION_TEMPERATURE, type=float, show_default=True,
          help='Fusion temperature.'),
      click.option('--crop-size', default=CROP_SIZE, type=int, show_default=True,
          help='Side of the pick crop (odd).'),
      click.option('--unbiased', is_flag=True,
          help='Average pairwise similarity over N - 1 instead of N.')]):
    fn = decorator(fn)
  return fn


def params_options(fn):
  for decorator in reversed([
      click.option('--checkpoint', type=click.Path(exists=True, dir_okay=False),
          default=None, help='Checkpoint to load instead of --init.'),
      click.option('--init', default='oracle', show_default=True,
          type=click.Choice(INITIALIZATIONS), help='Initial parameters.')]):
    fn = decorator(fn)
  return fn


def _grid(grid):
  return (grid, grid) if grid else None


def _params(checkpoint, init, seed):
  if checkpoint:
    state = load_checkpoint(checkpoint)
    logger.info('----> Checkpoint  {0} (partition {1})'.format(checkpoint, state.partition.policy))
    return state.nets, state.encoders
  logger.info('----> Parameters  {0}'.format(init))
  return initial_params(init, seed)


def _prepare_output(out):
  output_dir = os.path.abspath(out)
  if os.path.exists(output_dir):
    if not os.path.isdir(output_dir):
      logger.error('--> "{0}" is not a directory.'.format(output_dir))
      raise click.Abort
  else:
    try:
      os.makedirs(output_dir)
    except OSError:
      logger.error('--> Path "{0}" is not accessible.'.format(output_dir))
      raise click.Abort
  return output_dir


@contextmanager
def session(title, out, no_logging):
  """Output directory, file loggers and the closing summary of one command.

  Exceptions are logged to the error log and turned into ``click.Abort``.
  """
  output_dir = _prepare_output(out)
  handles = [] if no_logging else attach_file_loggers(logger, output_dir)
  begin = datetime.datetime.now()
  logger.info('==> Arrange v{0}: {1}'.format(__version__, title))
  logger.info('--> Began at {0}'.format(begin.strftime('%b/%d/%Y %I:%M:%S %p')))
  try:
    yield output_dir
  except click.exceptions.Exit:
    raise
  except Exception as e:
    exc = sys.exc_info()
    logger.error('"{0}","{1}"'.format(title, e))
    logger.debug('------> Stack Trace:', exc_info=exc)
    raise click.Abort
  finally:
    elapsed = (datetime.datetime.now() - begin).total_seconds()
    logger.info('==> Summary:')
    logger.info('----> Output dir  {0}'.format(output_dir))
    logger.info('----> Elapsed     {0} seconds'.format(elapsed))
    if not no_logging:
      logger.info('==> Log Files:')
      logger.info('----> Summary     {0}'.format(summary_log_name))
      logger.info('----> Errors      {0}'.format(error_log_name))
      logger.info('----> Complete    {0}\n\n'.format(run_log_name))
      detach_file_loggers(logger, handles)
    else:
      logger.info('==> Log Files not written.')


@click.group()
@click.version_option(__version__)
def cli():
  """Language-conditioned pick and place on a grid-world tabletop.

  \b
  Examples:
  1. Write 10 episodes of the packing task:
      $ arrange gen --task pack-block-in-box --episodes 10
  \b
  2. Train on 10 demonstrations, then evaluate on unseen colors:
      $ arrange train --demos 10 -o run
      $ arrange eval --checkpoint run/checkpoint.ckpt --split unseen
  \b
  3. Run the whole sweep:
      $ arrange bench --seed 7
  """


@cli.command()
@common_options
@task_options
@click.option('--episodes', default=10, type=int, show_default=True)
def gen(out, no_logging, seed, task, split, grid, episodes):
  """Write episode documents and observations."""
  if episodes < 1:
    raise click.BadParameter('must be >= 1', param_hint='--episodes')
  with session('gen', out, no_logging) as output_dir:
    spec = resolve_task(task, _grid(grid))
    for index, episode_seed in enumerate(tqdm(episode_seeds(seed, episodes, GEN_STREAM),
        desc='--> Generated', unit='episodes')):
      episode = make_episode(spec, split, episode_seed)
      base = os.path.join(output_dir, 'episode_{0:03d}'.format(index))
      dump_episode(episode, base + '.json')
      export_observation(episode.scene, base + '.ppm')
    logger.info('----> Episodes    {0}'.format(episodes))


@cli.command()
@common_options
@task_options
@agent_options
@click.option('--demos', default=10, type=int, show_default=True)
@click.option('--steps', default=TRAIN_STEPS, type=int, show_default=True)
@click.option('--lr', default=LEARNING_RATE, type=float, show_default=True)
@click.option('--partition', default='both', show_default=True, type=click.Choice(list(PARTITIONS)))
@click.option('--init', default='perturbed', show_default=True, type=click.Choice(INITIALIZATIONS))
def train(out, no_logging, seed, task, split, grid, tau, crop_size, unbiased, demos, steps,
    lr, partition, init):
  """Few-shot training; writes checkpoint.ckpt and trace.csv."""
  if demos < 1:
    raise click.BadParameter('must be >= 1', param_hint='--demos')
  if steps < 1:
    raise click.BadParameter('must be >= 1', param_hint='--steps')
  with session('train', out, no_logging) as output_dir:
    options = AgentOptions(tau=tau, crop_size=crop_size, unbiased=unbiased)
    config = TrainConfig(steps=steps, learning_rate=lr, partition=partition, seed=seed,
        options=options)
    nets, encoders = initial_params(init, seed)
    examples = make_demonstrations(resolve_task(task, _grid(grid)), split, demos, seed)
    logger.info('--> {0} demonstrations of {1} ({2})'.format(len(examples), task, split))
    nets, encoders, trace = train_few_shot(examples, nets, encoders, config, progress=True)
    path = os.path.join(output_dir, 'checkpoint.ckpt')
    save_checkpoint(path, nets, encoders, partition, seed)
    trace.to_csv(os.path.join(output_dir, 'trace.csv'), index=False)
    logger.info('----> Loss        {0:.4f} -> {1:.4f}'.format(trace.total.iloc[0],
        trace.total.iloc[-1]))
    logger.info('----> Checkpoint  {0}'.format(path))


@cli.command(name='eval')
@common_options
@task_options
@agent_options
@params_options
@click.option('--episodes', default=EPISODES, type=int, show_default=True)
@click.option('--max-steps', default=MAX_STEPS, type=int, show_default=True)
@click.option('--baseline', type=click.Choice(['random']), default=None,
    help='Evaluate a baseline instead of a policy.')
def evaluate(out, no_logging, seed, task, split, grid, tau, crop_size, unbiased, checkpoint,
    init, episodes, max_steps, baseline):
  """Success rate over seeded episodes; writes report.json and episodes.csv."""
  if episodes < 1:
    raise click.BadParameter('must be >= 1', param_hint='--episodes')
  if max_steps < 1:
    raise click.BadParameter('must be >= 1', param_hint='--max-steps')
  with session('eval', out, no_logging) as output_dir:
    config = EvalConfig(task, split, episodes, max_steps, seed, _grid(grid))
    nets, encoders = (None, None) if baseline else _params(checkpoint, init, seed)
    options = AgentOptions(tau=tau, crop_size=crop_size, unbiased=unbiased)
    report = run_eval(config, nets, encoders, options, baseline=baseline, progress=True)
    write_report(report, output_dir)
    logger.info('----> Task        {0} ({1})'.format(task, split))
    logger.info('----> Episodes    {0}, max steps {1}'.format(episodes, max_steps))
    logger.info('----> Success     {0:.1f}%'.format(report.success_rate))


def process_episode(path, agent, output_dir, instruction=None, masks=None, embeddings=None,
    export=False):
  """Run the policy on one episode file and dump its decision.

  Notes:
  - This method supresses any exception and logs it to the error log.
  """
  try:
    logger.debug('--> Begin: {0}'.format(path))
    episode = load_episode(path)
    obs = render(episode.scene)
    seg = import_masks(masks, obs.shape) if masks else None
    vectors = import_embeddings(embeddings) if embeddings else None
    perception, pick, place = agent.decide(obs, instruction or episode.instruction, seg, vectors)
    name = os.path.splitext(os.path.basename(path))[0]
    dump_decision(perception, pick, place, output_dir, name)
    if export:
      export_confidence(perception.m_tl, os.path.join(output_dir, name + '_tl.pgm'))
      export_confidence(perception.m_rd, os.path.join(output_dir, name + '_rd.pgm'))
      export_masks(perception.seg, obs.shape[:2], os.path.join(output_dir, name + '_masks.pgm'))
      ids, values = perception.embeddings()
      export_embeddings(values, ids, os.path.join(output_dir, name + '.emb'))
    logger.debug('----> Done: pick {0}, place {1} at {2} deg'.format(
        pick.pose, place.pose, place.angle.degrees))
    return True
  except Exception as e:
    exc = sys.exc_info()
    logger.error('"{0}","{1}"'.format(path, e))
    logger.debug('------> Stack Trace:', exc_info=exc)
    return False


@cli.command()
@common_options
@task_options
@agent_options
@params_options
@click.option('-i', '--input', multiple=True, metavar='<path/pattern>',
    help='Episode files or patterns; one episode is generated when omitted.')
@click.option('--instruction', default=None, help='Instruction overriding the episode one.')
@click.option('--masks', type=click.Path(exists=True, dir_okay=False), default=None,
    help='External P5 label map.')
@click.option('--embeddings', type=click.Path(exists=True, dir_okay=False), default=None,
    help='External arrange-emb/1 embedding file.')
@click.option('--export', is_flag=True,
    help='Also write the confidence maps, masks and embeddings used.')
def infer(out, no_logging, seed, task, split, grid, tau, crop_size, unbiased, checkpoint,
    init, input, instruction, masks, embeddings, export):
  """Decision records and affordance maps for single scenes.

  \b
  Notes:
  - '/*.json' is appended to input patterns that do not end with '.json'.
  - Glob patterns MUST be wrapped within single quotes (').
  """
  with session('infer', out, no_logging) as output_dir:
    paths = []
    for pattern in input:
      if not pattern.endswith('.json'):
        pattern += '/*.json'
      paths.extend(os.path.abspath(p) for p in sorted(glob.glob(pattern)))
    if not input:
      path = os.path.join(output_dir, 'episode.json')
      dump_episode(make_episode(resolve_task(task, _grid(grid)), split, seed), path)
      paths.append(path)
    logger.info('--> Discovered {0} episode files'.format(len(paths)))

    nets, encoders = _params(checkpoint, init, seed)
    agent = Agent(encoders, nets, AgentOptions(tau=tau, crop_size=crop_size, unbiased=unbiased))
    success, fail = 0, 0
    for path in tqdm(paths, desc='--> Processed', unit='files'):
      if process_episode(path, agent, output_dir, instruction, masks, embeddings, export):
        success += 1
      else:
        fail += 1
    logger.info('----> Succeeded   {0}\tfiles'.format(success))
    logger.info('----> Errored     {0}\tfiles'.format(fail))
    if fail:
      raise RuntimeError('{0} of {1} episodes failed.'.format(fail, len(paths)))


@cli.command()
@common_options
@agent_options
@click.option('--task', 'tasks', multiple=True, type=click.Choice(sorted(TASKS)),
    default=['put-block-in-bowl'], show_default=True)
@click.option('--demos', multiple=True, type=int, default=list(DEMO_COUNTS), show_default=True)
@click.option('--grid', type=int, default=None, metavar='<n>')
@click.option('--episodes', default=EPISODES, type=int, show_default=True)
@click.option('--max-steps', default=MAX_STEPS, type=int, show_default=True)
@click.option('--steps', default=TRAIN_STEPS, type=int, show_default=True)
@click.option('--lr', default=LEARNING_RATE, type=float, show_default=True)
@click.option('--partition', default='both', show_default=True, type=click.Choice(list(PARTITIONS)))
@click.option('--init', default='perturbed', show_default=True, type=click.Choice(INITIALIZATIONS))
def bench(out, no_logging, seed, tau, crop_size, unbiased, tasks, demos, grid, episodes,
    max_steps, steps, lr, partition, init):
  """Train per (task, demo count) and evaluate both color splits."""
  if any(d < 0 for d in demos):
    raise click.BadParameter('must be >= 0', param_hint='--demos')
  with session('bench', out, no_logging) as output_dir:
    options = AgentOptions(tau=tau, crop_size=crop_size, unbiased=unbiased)
    config = TrainConfig(steps=steps, learning_rate=lr, partition=partition, seed=seed,
        options=options)
    report = run_benchmark(tasks, demos, SPLITS, seed, init, config, episodes, max_steps,
        _grid(grid), options)
    write_benchmark(report, output_dir)
    for line in format_table(report.table).splitlines():
      logger.info('----> {0}'.format(line))
