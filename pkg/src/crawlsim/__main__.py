import sys

from crawlsim.cli import main

sys.exit(main())
