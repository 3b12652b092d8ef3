"""File formats, configuration, synthetic data and the ``mlkl`` command line."""

from .commands import cmd_detect, cmd_fit, cmd_sequence, cmd_simulate, fit_filter
from .config import FilterConfig, content_hash
from .filterfile import load_filter, save_filter
from .formats import FrameStack, load_stack, read_csv_stack, read_frame_stack, write_csv_stack, write_frame_stack
from .simulate import SyntheticField, simulate

__all__ = [
    "FilterConfig",
    "FrameStack",
    "SyntheticField",
    "cmd_detect",
    "cmd_fit",
    "cmd_sequence",
    "cmd_simulate",
    "content_hash",
    "fit_filter",
    "load_filter",
    "load_stack",
    "read_csv_stack",
    "read_frame_stack",
    "save_filter",
    "simulate",
    "write_csv_stack",
    "write_frame_stack",
]
