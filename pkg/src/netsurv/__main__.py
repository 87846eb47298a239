import sys

from netsurv.cli import main

sys.exit(main())
