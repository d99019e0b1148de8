import csv
import json
from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent / "data"

# Published clinical patch counts the synthetic registry reproduces:
# (organ, tumor patches, non-tumor patches, tumor WSIs, non-tumor WSIs)
CLINICAL_SHAPE = [
    ("stomach", 1136, 2079, 6, 7),
    ("intestine", 1846, 2051, 12, 13),
]


def spread(total: int, bins: int) -> list[int]:
    """Split `total` into `bins` positive counts that sum exactly."""
    base, rem = divmod(total, bins)
    return [base + (1 if i < rem else 0) for i in range(bins)]


@pytest.fixture(scope="session")
def clinical_manifest(tmp_path_factory) -> Path:
    """Synthetic 38-WSI patch manifest matching the published totals."""
    path = tmp_path_factory.mktemp("clinical") / "patches.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patch_id", "wsi_id", "organ", "label", "patch_ref"])
        patch_no = 0
        for organ, n_tumor, n_non, w_tumor, w_non in CLINICAL_SHAPE:
            plan = [("tumor", n_tumor, w_tumor, "t"), ("non_tumor", n_non, w_non, "n")]
            for label, total, n_wsis, tag in plan:
                for w, count in enumerate(spread(total, n_wsis), start=1):
                    wsi_id = f"{organ}_{tag}{w:02d}"
                    for _ in range(count):
                        patch_no += 1
                        writer.writerow(
                            [
                                f"p{patch_no:06d}",
                                wsi_id,
                                organ,
                                label,
                                f"patches/p{patch_no:06d}.png",
                            ]
                        )
    return path


@pytest.fixture
def jsonl_writer(tmp_path):
    def write(name: str, rows: list[dict]) -> Path:
        path = tmp_path / name
        with path.open("w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
        return path

    return write
