import sys

from memonet.cli import main

sys.exit(main())
