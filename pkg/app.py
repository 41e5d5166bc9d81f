#!/usr/bin/env python3
"""
Penalized Convex Relaxations for AC OPF - command line entry point.

Usage:
    python app.py relax --case case9 --cone all
    python app.py sequential --case case9 --cone parabolic --mu 100 --alpha 1
    python app.py sweep-mu --case nesta_case5_pjm --cone sdp --alpha 5

Logging handlers are installed by modules.run_logging once the command line is parsed.
"""

import sys

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from modules.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
