"""Multi-view PatchMatch stereo with planar priors, depth-normal consistency and global refinement."""

__version__ = "0.1.0"
