# -*- coding: utf-8 -*-
#
# Arrange documentation build configuration file.
import ast
import os
import re
import sys

sys.path.insert(0, os.path.abspath('..'))

with open(os.path.join(os.path.dirname(__file__), '..', 'arrange', '__init__.py')) as fl:
  version_str = re.search(r'__version_info__ = (.*)', fl.read(), re.M).group(1)
  release = '.'.join(map(str, ast.literal_eval(version_str)))
version = '.'.join(release.split('.')[:2])

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
    'sphinx.ext.coverage',
    'sphinx.ext.viewcode',
]

# Napoleon settings
napoleon_google_docstring = True
napoleon_include_private_with_doc = True
napoleon_include_special_with_doc = True

source_suffix = '.rst'
master_doc = 'index'

project = u'Arrange'
copyright = u'2016, Arrange developers'
author = u'Arrange developers'

language = None
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'
todo_include_todos = False

html_theme = 'alabaster'
htmlhelp_basename = 'Arrangedoc'

latex_elements = {
    'papersize': 'a4paper',
}
latex_documents = [
    (master_doc, 'Arrange.tex', u'Arrange Documentation', author, 'manual'),
]
man_pages = [
    (master_doc, 'arrange', u'Arrange Documentation', [author], 1)
]
