import sys

from robusthedge.cli import main

sys.exit(main())
