"""Module entry point for siot-trust."""

from siot_trust.cli import main

if __name__ == "__main__":
    main()
