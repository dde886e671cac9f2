"""Joint reconstruction of a sound-soft cavity and the point sources inside it
from total-field data on two interior measurement curves."""

__version__ = "0.1.0"
