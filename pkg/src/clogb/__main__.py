import sys

from clogb.cli import main

sys.exit(main())
