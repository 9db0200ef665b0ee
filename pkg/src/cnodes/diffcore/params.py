from collections import OrderedDict

import numpy as np

from cnodes.errors import DimensionError


class ParamVector:
    """Flat float64 parameters with named, contiguous segments.

    Instances are immutable: ``values`` is a read-only array and every update
    returns a new object.
    """

    __slots__ = ("values", "segments")

    def __init__(self, values, segments):
        values = np.array(values, dtype=np.float64).ravel()
        values.flags.writeable = False
        segs = OrderedDict((str(k), (int(o), int(n))) for k, (o, n) in segments.items())
        pos = 0
        for name, (off, length) in segs.items():
            if off != pos or length < 0:
                raise ValueError(f"segment {name!r} does not tile the vector at offset {pos}")
            pos += length
        if pos != values.size:
            raise DimensionError("segment table coverage", values.size, pos)
        self.values = values
        self.segments = segs

    @classmethod
    def from_segments(cls, parts):
        """Merge an ordered mapping ``name -> 1-D array`` into one vector."""
        segs, chunks, pos = OrderedDict(), [], 0
        for name, arr in parts.items():
            arr = np.asarray(arr, dtype=np.float64).ravel()
            segs[name] = (pos, arr.size)
            chunks.append(arr)
            pos += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, segs)

    def __len__(self):
        return self.values.size

    def slice(self, name):
        off, n = self.segments[name]
        return slice(off, off + n)

    def segment(self, name):
        return self.values[self.slice(name)]

    def split(self):
        return OrderedDict((name, self.segment(name).copy()) for name in self.segments)

    def with_values(self, values):
        return ParamVector(values, self.segments)

    def segment_of(self, index):
        for name, (off, n) in self.segments.items():
            if off <= index < off + n:
                return name
        raise IndexError(index)

    def __eq__(self, other):
        return (
            isinstance(other, ParamVector)
            and self.segments == other.segments
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        segs = ", ".join(f"{k}={n}" for k, (_, n) in self.segments.items())
        return f"ParamVector({len(self)} values; {segs})"
