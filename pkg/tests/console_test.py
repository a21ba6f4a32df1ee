import json
import os

import numpy as np

from PIL import Image

from click.testing import CliRunner

from arrange import __version__
from arrange.checkpoint import load_checkpoint
from arrange.console import cli
from arrange.logger import error_log_name, run_log_name, summary_log_name
from arrange.scene import load_episode


def invoke(*args):
  return CliRunner().invoke(cli, list(args), catch_exceptions=False)


def test_version():
  result = invoke('--version')

  assert result.exit_code == 0
  assert __version__ in result.output


def test_gen(tmpdir):
  out = str(tmpdir.join('episodes'))
  result = invoke('gen', '-o', out, '--episodes', '2', '--grid', '32', '--split', 'unseen')

  assert result.exit_code == 0
  names = sorted(os.listdir(out))
  assert 'episode_000.json' in names and 'episode_001.ppm' in names
  assert {run_log_name, summary_log_name, error_log_name} <= set(names)
  episode = load_episode(os.path.join(out, 'episode_001.json'))
  assert episode.split == 'unseen'
  assert (episode.scene.grid_h, episode.scene.grid_w) == (32, 32)
  with open(os.path.join(out, summary_log_name)) as fl:
    summary = fl.read()
  assert 'Episodes    2' in summary


def test_gen_without_logs(tmpdir):
  out = str(tmpdir.join('quiet'))
  result = invoke('gen', '-o', out, '-x', '--episodes', '1', '--grid', '32')

  assert result.exit_code == 0
  assert sorted(os.listdir(out)) == ['episode_000.json', 'episode_000.ppm']


def test_config_file(tmpdir):
  config = tmpdir.join('flags.json')
  config.write(json.dumps({'gen': {'episodes': 3, 'grid': 32}, 'seed': 4}))
  out = str(tmpdir.join('configured'))
  result = invoke('gen', '--config', str(config), '-o', out, '-x')

  assert result.exit_code == 0
  assert len([n for n in os.listdir(out) if n.endswith('.json')]) == 3

  config.write(json.dumps({'episodes': 3, 'grid': 32}))
  out = str(tmpdir.join('overridden'))
  result = invoke('gen', '--config', str(config), '--episodes', '1', '-o', out, '-x')
  assert result.exit_code == 0
  assert len([n for n in os.listdir(out) if n.endswith('.json')]) == 1


def test_usage_errors(tmpdir):
  out = str(tmpdir.join('bad'))

  assert invoke('gen', '-o', out, '--episodes', '0').exit_code == 2
  assert invoke('gen', '-o', out, '--task', 'stack-blocks').exit_code == 2
  assert invoke('train', '-o', out, '--demos', '0').exit_code == 2
  assert invoke('eval', '-o', out, '--max-steps', '0').exit_code == 2
  config = tmpdir.join('list.json')
  config.write('[1, 2]')
  assert invoke('gen', '--config', str(config), '-o', out).exit_code == 2


def test_infer(tmpdir):
  episodes = str(tmpdir.join('episodes'))
  invoke('gen', '-o', episodes, '-x', '--episodes', '2', '--grid', '32')
  out = str(tmpdir.join('decisions'))
  result = invoke('infer', '-i', episodes, '-o', out, '--export',
      '--instruction', 'put the brown blocks in a cyan bowl')

  assert result.exit_code == 0
  names = set(os.listdir(out))
  for stem in ('episode_000', 'episode_001'):
    assert {stem + '_decision.json', stem + '_pick.pgm', stem + '_place.pgm',
        stem + '_masks.pgm', stem + '.emb', stem + '_tl.pgm', stem + '_rd.pgm'} <= names
  with open(os.path.join(out, 'episode_000_decision.json')) as fl:
    record = json.load(fl)
  assert record['tl_query'] == 'a photo of the brown blocks'
  assert record['rd_query'] == 'a photo of a cyan bowl'
  tl = np.asarray(Image.open(os.path.join(out, 'episode_000_tl.pgm'))).astype(int)
  assert tl.shape == (32, 32)
  assert tl.min() == 0


def test_infer_reuses_exported_perception(tmpdir):
  first = str(tmpdir.join('first'))
  invoke('infer', '-o', first, '-x', '--grid', '32', '--seed', '3', '--export')
  second = str(tmpdir.join('second'))
  result = invoke('infer', '-i', os.path.join(first, 'episode.json'), '-o', second, '-x',
      '--masks', os.path.join(first, 'episode_masks.pgm'),
      '--embeddings', os.path.join(first, 'episode.emb'))

  assert result.exit_code == 0
  records = []
  for directory in (first, second):
    with open(os.path.join(directory, 'episode_decision.json')) as fl:
      records.append(json.load(fl))
  for key in ('pick', 'place', 'angle_index'):
    assert records[0][key] == records[1][key]


def test_infer_failure_exits_one(tmpdir):
  inputs = tmpdir.mkdir('inputs')
  inputs.join('broken.json').write('{"schema": "nothing"}')
  out = str(tmpdir.join('failed'))
  result = invoke('infer', '-i', str(inputs), '-o', out)

  assert result.exit_code == 1
  with open(os.path.join(out, error_log_name)) as fl:
    errors = fl.read()
  assert 'broken.json' in errors


def test_train_then_eval(tmpdir):
  run = str(tmpdir.join('run'))
  result = invoke('train', '-o', run, '-x', '--grid', '32', '--demos', '1', '--steps', '1',
      '--lr', '0.0001', '--init', 'oracle')

  assert result.exit_code == 0
  checkpoint = os.path.join(run, 'checkpoint.ckpt')
  assert load_checkpoint(checkpoint).partition.policy == 'both'
  with open(os.path.join(run, 'trace.csv')) as fl:
    assert fl.readline().strip() == 'step,total,l_tl,l_rd'

  report_dir = str(tmpdir.join('report'))
  result = invoke('eval', '-o', report_dir, '-x', '--grid', '32', '--episodes', '2',
      '--max-steps', '2', '--checkpoint', checkpoint)
  assert result.exit_code == 0
  with open(os.path.join(report_dir, 'report.json')) as fl:
    report = json.load(fl)
  assert len(report['episodes']) == 2


def test_random_baseline(tmpdir):
  out = str(tmpdir.join('baseline'))
  result = invoke('eval', '-o', out, '-x', '--grid', '32', '--episodes', '2',
      '--max-steps', '1', '--baseline', 'random')

  assert result.exit_code == 0
  assert os.path.exists(os.path.join(out, 'episodes.csv'))


def test_bench(tmpdir):
  out = str(tmpdir.join('bench'))
  result = invoke('bench', '-o', out, '--demos', '0', '--grid', '32', '--episodes', '1',
      '--max-steps', '1', '--init', 'oracle')

  assert result.exit_code == 0
  assert {'benchmark.json', 'benchmark.csv', 'benchmark.txt'} <= set(os.listdir(out))
  with open(os.path.join(out, summary_log_name)) as fl:
    assert '0 demos' in fl.read()


def test_bench_is_reproducible(tmpdir):
  outputs = []
  for name in ('first', 'second'):
    out = str(tmpdir.join(name))
    invoke('bench', '-o', out, '-x', '--seed', '7', '--demos', '0', '--grid', '32',
        '--episodes', '2', '--max-steps', '1', '--init', 'oracle')
    outputs.append(out)

  names = sorted(os.listdir(outputs[0]))
  assert names == sorted(os.listdir(outputs[1]))
  for name in names:
    with open(os.path.join(outputs[0], name), 'rb') as first, \
        open(os.path.join(outputs[1], name), 'rb') as second:
      assert first.read() == second.read(), name
