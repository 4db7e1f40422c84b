import argparse


def common_options() -> argparse.ArgumentParser:
    """Flags shared by every subcommand."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", default=None, help="run configuration file (default: $JTREEKIT_CONFIG or jtreekit.ini)")
    parent.add_argument("--seed", type=int, default=None, help="override [run] seed and JTREEKIT_SEED")
    parent.add_argument("--workers", type=int, default=None, help="worker processes for per-molecule work")
    parent.add_argument("--overwrite", action="store_true", help="replace existing outputs")
    parent.add_argument("--verbose", action="store_true", help="debug logging, including assembly traces")
    return parent
