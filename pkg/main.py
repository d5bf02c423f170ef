#!/usr/bin/env python3
"""Main entry point for Shape Prior"""

from shapeprior.cli import app

if __name__ == "__main__":
    app()
