"""
FedAWE simulator - command-line launcher
Licensed under the MIT License
"""

import sys

from fedawe_sim.cli import run_cli


def main():
    """Launch the simulator CLI with the process arguments"""
    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
