import sys

from hmmvt.cli import main

sys.exit(main())
