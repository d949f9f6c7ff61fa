"""conftest.py — flat-module imports for the service layer and engine tests."""
import os
import sys

_backend_dir = os.path.dirname(os.path.abspath(__file__))
for _p in (_backend_dir, os.path.join(_backend_dir, "engine")):
    if _p not in sys.path:
        sys.path.insert(0, _p)
