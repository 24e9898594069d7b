#!/usr/bin/env python3
"""
Simple script to run the Bank Distress Copula pipeline.
"""

import sys

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
