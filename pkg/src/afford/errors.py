"""Exception types raised by the affordance pipeline."""


class AffordError(Exception):
    """Base class for all errors raised by this package."""


class MalformedFile(AffordError):
    """PLY header or payload is invalid or truncated."""


class EmptyCloud(AffordError):
    """An operation that requires points received a cloud with none."""


class NonFiniteData(AffordError):
    """Coordinates contain NaN or infinity."""


class IoFailure(AffordError):
    """A file could not be written or read at the OS level."""


class InvalidPose(AffordError):
    """Rotation matrix is not orthonormal with determinant +1."""


class NonPositiveLeaf(AffordError):
    """Voxel leaf size must be strictly positive."""


class DegenerateInteraction(AffordError):
    """No bisector could be found between the two clouds."""


class AllPruned(AffordError):
    """Pruning removed every bisector sample."""


class EmptyInput(AffordError):
    """A sequence argument that must be nonempty was empty."""


class EmptyTensor(EmptyInput):
    """The interaction tensor has no entries."""


class InvalidCount(AffordError):
    """A requested count is outside its valid range."""


class MalformedDescriptor(AffordError):
    """Descriptor file violates the schema or its invariants."""


class VersionMismatch(MalformedDescriptor):
    """Descriptor file format_version is not supported."""


class NoDescriptors(AffordError):
    """Batch detection needs at least one descriptor."""


class InvalidDims(AffordError):
    """Primitive dimensions or density are not positive."""


class UnknownArchetype(AffordError):
    """Requested training-pair archetype does not exist."""


class ConfigError(AffordError):
    """Configuration file contains unknown keys or invalid values."""
