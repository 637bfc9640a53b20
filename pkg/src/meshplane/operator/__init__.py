from .log import EventLog, replay
from .service import Operator

__all__ = ["EventLog", "Operator", "replay"]
