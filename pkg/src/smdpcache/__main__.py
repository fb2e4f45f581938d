import sys

from smdpcache.cli import main

sys.exit(main())
