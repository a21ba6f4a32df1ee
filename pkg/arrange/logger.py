"""Log handlers of the package logger.

The console shows INFO messages only. A command run with an output directory
also gets three files there: the complete DEBUG log, the INFO summary, and a
CSV of ERROR records (one row per failed item).
"""
import logging
import os

from logging import StreamHandler, FileHandler

TIME_FORMAT = '%Y-%m-%d %H:%M:%S'


class LevelFilter(logging.Filter):
  """Pass records of exactly one level."""
  def __init__(self, level):
    super(LevelFilter, self).__init__()
    self.level = level

  def filter(self, record):
    return record.levelno == self.level


file_log_format = logging.Formatter(
  '%(asctime)s - %(levelname)-8s%(module)s.%(funcName)s:%(lineno)d %(message)s',
  TIME_FORMAT)
console_log_format = logging.Formatter('%(message)s')
error_log_format = logging.Formatter(
  '"%(asctime)s",%(levelname)s,"%(module)s.%(funcName)s:%(lineno)d",%(message)s\r',
  TIME_FORMAT)

console_handle = StreamHandler()
console_handle.setFormatter(console_log_format)
console_handle.addFilter(LevelFilter(logging.INFO))
console_handle.setLevel(logging.INFO)

run_log_name = 'arrange_run.log'
summary_log_name = 'arrange_summary.txt'
error_log_name = 'arrange_errors.csv'


def log_paths(directory):
  """Locations of the three log files inside ``directory``."""
  return dict(
      run=os.path.join(directory, run_log_name),
      summary=os.path.join(directory, summary_log_name),
      errors=os.path.join(directory, error_log_name))


def attach_file_loggers(logger, directory):
  """Initialize log files of `logger` inside `directory`.

  Returns:
      The attached handlers, so callers can detach them again.
  """
  paths = log_paths(directory)
  file_handle = FileHandler(paths['run'])
  file_handle.setFormatter(file_log_format)
  file_handle.setLevel(logging.DEBUG)

  summary_log_handle = FileHandler(paths['summary'])
  summary_log_handle.setFormatter(console_log_format)
  summary_log_handle.setLevel(logging.INFO)
  summary_log_handle.addFilter(LevelFilter(logging.INFO))

  error_log_handle = FileHandler(paths['errors'])
  error_log_handle.setFormatter(error_log_format)
  error_log_handle.setLevel(logging.DEBUG)
  error_log_handle.addFilter(LevelFilter(logging.ERROR))

  handles = [file_handle, summary_log_handle, error_log_handle]
  for handle in handles:
    logger.addHandler(handle)
  return handles


def detach_file_loggers(logger, handles):
  """Remove and close handlers returned by ``attach_file_loggers``."""
  for handle in handles:
    logger.removeHandler(handle)
    handle.close()


logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)
logger.addHandler(console_handle)
