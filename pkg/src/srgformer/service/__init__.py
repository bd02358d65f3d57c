from .app import ModelService, create_app

__all__ = ["ModelService", "create_app"]
