import sys

from pancad.cli import main

sys.exit(main())
