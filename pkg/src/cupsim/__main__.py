import sys

from cupsim.cli import main

sys.exit(main())
