import sys

from dwmarket.cli import main

sys.exit(main())
