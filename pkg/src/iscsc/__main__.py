import sys

from iscsc.cli import main

sys.exit(main())
