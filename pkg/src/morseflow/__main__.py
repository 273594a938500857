import sys

from morseflow.cli import main

sys.exit(main())
