from pathlib import Path

import pytest
from PIL import Image


def write_image(path: Path, tag: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    img = Image.new("RGB", (8, 8), (tag % 256, (tag * 7) % 256, (tag * 13) % 256))
    img.putpixel((tag % 8, (tag // 8) % 8), (255, 255, 255))
    img.save(path)


@pytest.fixture
def tree(tmp_path):
    """domain/class image tree with unique file contents."""

    def build(domains, classes, per=2, root_name="data"):
        root = tmp_path / root_name
        tag = 0
        for d in domains:
            for c in classes:
                for i in range(per):
                    write_image(root / d / c / f"img_{i}.png", tag)
                    tag += 1
        return root

    return build
