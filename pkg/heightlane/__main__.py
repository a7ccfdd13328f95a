import sys

from heightlane.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
