#!/usr/bin/env python3
"""Application entry point."""

import sys

from fibertwin.main import main

if __name__ == "__main__":
    sys.exit(main())
