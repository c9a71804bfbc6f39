import struct
import tempfile
import unittest
from pathlib import Path

import numpy as np

from fidel_mtl.core.checkpoint import MAGIC, VERSION, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from fidel_mtl.core.rng import STREAM_INIT, RngStream
from fidel_mtl.errors import FormatError


class CheckpointTests(unittest.TestCase):
    def test_save_and_load_preserves_tensors_and_meta(self) -> None:
        tensors = {
            "conv1.weight": np.arange(24, dtype=np.float32).reshape(2, 2, 2, 3),
            "conv1.bias": np.array([0.5, -0.25, 1.0], dtype=np.float32),
        }
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "nested" / "model.amcp"
            save_checkpoint(path, tensors, {"epoch": 7, "note": "ቀ"})
            loaded, meta = load_checkpoint(path)
            self.assertFalse((path.parent / "model.amcp.tmp").exists())

        self.assertEqual(list(loaded), ["conv1.weight", "conv1.bias"])
        np.testing.assert_array_equal(loaded["conv1.weight"], tensors["conv1.weight"])
        np.testing.assert_array_equal(loaded["conv1.bias"], tensors["conv1.bias"])
        self.assertEqual(meta, {"epoch": 7, "note": "ቀ"})

    def test_encoding_is_byte_stable(self) -> None:
        tensors = {"w": np.ones((2, 2), dtype=np.float64)}
        self.assertEqual(encode_checkpoint(tensors, {"b": 1, "a": 2}), encode_checkpoint(tensors, {"a": 2, "b": 1}))
        self.assertTrue(encode_checkpoint(tensors).startswith(MAGIC))

    def test_bad_magic_reports_offset_zero(self) -> None:
        blob = b"XXXX" + encode_checkpoint({"w": np.zeros(2)})[4:]
        with self.assertRaises(FormatError) as ctx:
            decode_checkpoint(blob)
        self.assertEqual(ctx.exception.offset, 0)

    def test_truncated_payload_and_prefix(self) -> None:
        blob = encode_checkpoint({"w": np.zeros(8)})
        with self.assertRaises(FormatError):
            decode_checkpoint(blob[:-4])
        with self.assertRaises(FormatError):
            decode_checkpoint(blob[:5])

    def test_header_missing_fields_is_a_format_error(self) -> None:
        for header in (b'{"split":"x"}', b'{"tensors":[{"name":"w","offset":0}]}', b'[1,2]', b'{"tensors":[],"meta":3}'):
            blob = struct.pack("<4sHI", MAGIC, VERSION, len(header)) + header
            with self.assertRaises(FormatError, msg=header) as ctx:
                decode_checkpoint(blob)
            self.assertEqual(ctx.exception.offset, 10)

    def test_unsupported_version(self) -> None:
        blob = bytearray(encode_checkpoint({"w": np.zeros(1)}))
        blob[4] = 99
        with self.assertRaises(FormatError) as ctx:
            decode_checkpoint(bytes(blob))
        self.assertEqual(ctx.exception.offset, 4)


class RngStreamTests(unittest.TestCase):
    def test_same_seed_and_stream_repeat(self) -> None:
        first = RngStream(5, STREAM_INIT).substream(2).random(6)
        second = RngStream(5, STREAM_INIT).substream(2).random(6)
        np.testing.assert_array_equal(first, second)

    def test_streams_are_independent(self) -> None:
        base = RngStream(5, STREAM_INIT)
        self.assertFalse(np.array_equal(base.substream(1).random(6), base.substream(2).random(6)))
        self.assertFalse(np.array_equal(RngStream(5).random(6), RngStream(6).random(6)))

    def test_seed_range(self) -> None:
        with self.assertRaises(ValueError):
            RngStream(-1)
        with self.assertRaises(ValueError):
            RngStream(0, algorithm="MT19937")


if __name__ == "__main__":
    unittest.main()
