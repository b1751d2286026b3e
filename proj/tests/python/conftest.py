import os
import sys

# The compiled module lands in the CMake build tree; tests receive its
# location via FLOWINFER_MODULE_DIR. The pure-python package lives in
# python/ at the repository root.
_here = os.path.dirname(os.path.abspath(__file__))
_module_dir = os.environ.get("FLOWINFER_MODULE_DIR")
if _module_dir and _module_dir not in sys.path:
    sys.path.insert(0, _module_dir)

_package_dir = os.path.join(_here, os.pardir, os.pardir, "python")
_package_dir = os.path.abspath(_package_dir)
if _package_dir not in sys.path:
    sys.path.insert(0, _package_dir)
