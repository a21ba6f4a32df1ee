# -*- coding: utf-8 -*-
# Arrange
from .logger import logger

__all__ = ('logger', '__version__')

__version_info__ = (0, 3, 0)
__version__ = '.'.join(map(str, __version_info__))
