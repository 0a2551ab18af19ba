import sys

from transde.cli import main

sys.exit(main())
