import sys

from mpdropout.cli import main

sys.exit(main())
