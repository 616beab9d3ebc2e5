"""CLI command groups registered by `app.main.create_app`."""
