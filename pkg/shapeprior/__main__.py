"""Main module entry point for Shape Prior"""

from .cli import app

if __name__ == "__main__":
    app()
