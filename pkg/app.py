# app.py
# Einstiegspunkt: python app.py <command> [flags]

import sys

from components.cli import main

if __name__ == "__main__":
    sys.exit(main())
