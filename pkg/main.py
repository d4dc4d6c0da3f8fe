from dotenv import load_dotenv

from dpcorder.cli import cli

if __name__ == "__main__":
    # LOG_LEVEL, METRICS_FILE and CONFIG_FILE may come from a .env file
    load_dotenv()

    cli()
