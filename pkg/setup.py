#!/usr/bin/env python3
"""
Setup Python 3 package 'mpod'
for namespace 'promptdet'.
"""
import logging

from setuptools import setup
from setuptools_scm import get_version

__version__ = get_version(root=".", relative_to=__file__, fallback_version="0.0.0")

logging.basicConfig(level=logging.INFO)
log = logging.getLogger("mpod.setup")
log.info("building mpod %s", __version__)

setup(use_scm_version={"fallback_version": "0.0.0"})
