#!/usr/bin/env python3
"""
paraling entry point

Paralinguistic feature extraction, ensemble training, prediction, fusion,
saliency and evaluation from one command line. See `run.py --help`.
"""
import sys

from src.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
