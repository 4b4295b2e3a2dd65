import logging
import os
from dotenv import load_dotenv

load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class Config:
    LOG_LEVEL = os.getenv('ISAC_LOG_LEVEL', 'INFO').upper()
    OUTPUT_DIR = os.getenv('ISAC_OUTPUT_DIR', 'runs')
    MAX_WORKERS = int(os.getenv('ISAC_MAX_WORKERS', '2'))
    SECRET_KEY = os.getenv('SECRET_KEY', 'dev-secret-key')


def setup_logging(level: str | None = None) -> None:
    """Configure root logging once for the CLI and the web app."""
    logging.basicConfig(
        level=getattr(logging, (level or Config.LOG_LEVEL).upper(), logging.INFO),
        format=LOG_FORMAT
    )
