from .settings import Config, STAGE_ROLES

__all__ = ['Config', 'STAGE_ROLES']
