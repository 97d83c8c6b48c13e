import logging

from promptdet.mpod import cli

from .conftest import HOME

log = logging.getLogger(__name__)
COMMANDS = (["train"], ["build-cache"], ["ablate"])


def main():
    out = HOME / "mpod_reference"
    log.info(f"Training the reference checkpoints\nto ${{DATA_ROOT:-~}}/mpod_reference ({out})")
    for cmd in COMMANDS:
        status = cli.main(["-v", "--out", str(out)] + cmd)
        if status:
            raise SystemExit(status)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    main()
