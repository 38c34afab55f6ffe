class InvalidPulseException(Exception):
    """
    Exception raised when a pulse is requested with a roll-off outside [0, 1] or an unusable tap span
    """
    pass


class FrameLengthMismatchException(Exception):
    """
    Exception raised when a symbol frame and a sampling grid (or two frames) disagree on their length
    """
    pass


class WdmAliasingException(Exception):
    """
    Exception raised when the composite WDM band does not fit inside the sample rate of the grid
    """
    pass


class InvalidLinkException(Exception):
    """
    Exception raised when link or split-step parameters are physically or numerically unusable, like a step size
    that does not divide the span length
    """
    pass


class PropagationDivergedException(Exception):
    """
    Exception raised when the propagated field contains NaN or infinite samples
    """
    pass


class KernelGridException(Exception):
    """
    Exception raised when the time grid of a kernel computation is too small to hold the dispersed pulse
    """
    pass


class KernelWindowException(Exception):
    """
    Exception raised when a perturbation kernel window is invalid or does not cover the requested memory
    """
    pass


class BlockLayoutException(Exception):
    """
    Exception raised when a frame cannot be split in selection blocks, or a block index is out of range
    """
    pass


class UnreachableRateException(Exception):
    """
    Exception raised when a target shaping rate cannot be reached on the given amplitude levels
    """
    pass


class NonFiniteMetricException(Exception):
    """
    Exception raised when a selection metric evaluates to NaN or infinity
    """
    pass


class InsufficientPilotsException(Exception):
    """
    Exception raised when the carrier phase recovery has fewer than two pilots to work with
    """
    pass


class ZeroEnergyException(Exception):
    """
    Exception raised when a reference symbol sequence carries no energy
    """
    pass


class DegenerateVarianceException(Exception):
    """
    Exception raised when the auxiliary channel variance of the AIR estimator is zero
    """
    pass


class ConfigurationException(Exception):
    """
    Exception raised when an experiment configuration fails to parse or validate, message carries line numbers
    """
    pass


class SweepInterruptedException(Exception):
    """
    Exception raised when a sweep is stopped by the user or a stop marker before all points completed
    """
    pass
