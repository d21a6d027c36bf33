# -*- coding: utf-8 -*-

"""
**dispatch** sub-package.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

from .base import DecodeDispatcher, PrefillDispatcher
from .staggered import StaggeredDispatcher
from .immediate import ImmediateDispatcher
from .decode import IqrLexDispatcher, RandomDecodeDispatcher, RoundRobinDecodeDispatcher
