"""minihls: loop-kernel C to pipelined VHDL, with a cycle-accurate
netlist simulator and a golden reference interpreter."""

__version__ = "0.1.0"
