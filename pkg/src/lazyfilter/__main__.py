import sys

from lazyfilter.cli import main

sys.exit(main())
