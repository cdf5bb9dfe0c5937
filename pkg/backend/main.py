# main.py

import sys

from app.cli.runner import run as main

if __name__ == "__main__":
    sys.exit(main())
