import re
import unittest
from pathlib import Path

import uni_chars

ROOT = Path(__file__).parent.parent


class GlyphTests(unittest.TestCase):

    def test_every_glyph_is_printed_somewhere(self):
        sources = "\n".join(path.read_text(encoding='utf-8') for path in ROOT.glob("*.py")
                            if path.name not in ("uni_chars.py", "conftest.py"))
        glyphs = [name for name in vars(uni_chars) if name.isupper()]
        self.assertIn("ERROR", glyphs)
        for name in glyphs:
            self.assertRegex(sources, re.compile(r"\{" + name + r"\}"), name)


if __name__ == '__main__':
    unittest.main()
