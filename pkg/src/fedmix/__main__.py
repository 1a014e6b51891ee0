import sys

from fedmix.cli import main

sys.exit(main())
