"""FastAPI service wrapping the recall engine; the CLI is a thin client of these handlers."""
