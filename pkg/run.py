#!/usr/bin/env python
"""
Run script for the emotional voice conversion / speaker verification pipeline
"""

import sys
from app.main import main

if __name__ == "__main__":
    sys.exit(main())
