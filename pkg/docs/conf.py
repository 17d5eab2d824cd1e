# -*- coding: utf-8 -*-
#
# TinyPose documentation build configuration file.
#
# This file is execfile()d with the current directory set to its containing
# dir.

import os
import sys
from importlib import metadata

sys.path.insert(0, os.path.abspath('..'))

# -- General configuration ----------------------------------------------------

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.coverage',
              'sphinx.ext.viewcode', 'sphinx.ext.intersphinx',
              'sphinx.ext.todo']

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'TinyPose'
copyright = u'2024, TinyPose developers'

try:
    release = metadata.version('tinypose')
except metadata.PackageNotFoundError:
    print('To build the documentation, The distribution information of TinyPose')
    print('has to be available. Either install the package into your')
    print('development environment or run "pip install -e ." to setup the')
    print('metadata. A virtualenv is recommended!')
    sys.exit(1)

if 'dev' in release:
    release = release.split('dev')[0] + 'dev'
version = '.'.join(release.split('.')[:2])

exclude_patterns = ['_build']
pygments_style = 'sphinx'

# -- Options for HTML output --------------------------------------------------

html_theme = 'alabaster'
html_static_path = ['_static']
html_show_sourcelink = False
htmlhelp_basename = 'TinyPosedoc'

# -- Options for LaTeX output -------------------------------------------------

latex_documents = [
    ('index', 'TinyPose.tex', u'TinyPose Documentation',
     u'TinyPose developers', 'manual'),
]

# -- Options for manual page output -------------------------------------------

man_pages = [
    ('index', 'tinypose', u'TinyPose Documentation',
     [u'TinyPose developers'], 1)
]

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
    'scipy': ('https://docs.scipy.org/doc/scipy/', None),
}

todo_include_todos = True
