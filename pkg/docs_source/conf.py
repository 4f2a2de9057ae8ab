# Sphinx configuration for the UWB Ranging Toolkit documentation.
#
# Build from this directory: sphinx-build -b html . _build/html

import os
import sys

ROOT = os.path.abspath('..')
sys.path.insert(0, ROOT)

# -- Project information -----------------------------------------------------

project = 'UWB Ranging Toolkit'
copyright = '2025, UWB Ranging Toolkit developers'
author = 'UWB Ranging Toolkit developers'
release = '1.0.0'
master_doc = 'index'

# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
    'sphinx.ext.viewcode',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx_autodoc_typehints',
]

# All modules use Google style sections (Args, Returns, Raises)
napoleon_google_docstring = True
napoleon_numpy_docstring = False
napoleon_include_init_with_doc = False
napoleon_use_param = True
napoleon_use_rtype = True
napoleon_attr_annotations = True

autodoc_typehints = 'description'
autodoc_typehints_description_target = 'documented'
autodoc_typehints_format = 'short'

# Shorthand aliases used across the solver, corrections and experiment modules
autodoc_type_aliases = {
    'Point': 'experiment.Point',
    'CurveSet': 'corrections.CurveSet',
}

# Source order keeps record fields in exchange order
autodoc_default_options = {
    'members': True,
    'member-order': 'bysource',
    'undoc-members': True,
    'show-inheritance': True,
    'exclude-members': '__weakref__, main',
}
autodoc_class_signature = 'separated'

# Log file for modules imported by autodoc
os.environ.setdefault('UWB_LOG_FILE', os.path.join(ROOT, 'docs_source', '_build', 'docs.log'))

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store', 'README.md']

# -- Options for HTML output -------------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_title = 'UWB Ranging Toolkit'
html_show_sourcelink = False

html_theme_options = {
    'collapse_navigation': False,
    'sticky_navigation': True,
    'navigation_depth': 3,
    'titles_only': False,
}

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
    'pandas': ('https://pandas.pydata.org/docs/', None),
}
