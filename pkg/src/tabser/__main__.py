import sys

from tabser.cli import main

sys.exit(main())
