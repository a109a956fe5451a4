from .common import PosteriorSample
from .ncp import NCPHead
from .ccp import CCPHead
from .dac import DACHead

__all__ = ["PosteriorSample", "NCPHead", "CCPHead", "DACHead"]
