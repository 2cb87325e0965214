"""KITTI object label files (label_2 format)."""
import logging
from typing import List

from stereosparse.core.errors import DomainError, StereoSparseError
from stereosparse.models.data import VEHICLE_CLASSES, BoundingBox

logger = logging.getLogger(__name__)

KITTI_FIELDS = 15
# 2D box columns: left, top, right, bottom
BOX_COLUMNS = slice(4, 8)

class LabelParseError(StereoSparseError):
    """Raised on a malformed label line; the message names the line number."""
    pass

def parse_kitti_labels(text: str) -> List[BoundingBox]:
    """Vehicle (Car, Van, Truck) boxes from KITTI label text; other classes are dropped."""
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < KITTI_FIELDS:
            raise LabelParseError(f"line {lineno}: expected at least {KITTI_FIELDS} fields, got {len(fields)}")
        try:
            numbers = [float(v) for v in fields[1:KITTI_FIELDS]]
        except ValueError as e:
            raise LabelParseError(f"line {lineno}: {e}")
        if fields[0] not in VEHICLE_CLASSES:
            continue
        left, top, right, bottom = numbers[BOX_COLUMNS.start - 1:BOX_COLUMNS.stop - 1]
        try:
            boxes.append(BoundingBox(fields[0], left, top, right, bottom))
        except DomainError as e:
            raise LabelParseError(f"line {lineno}: {e}")
    logger.debug(f"Parsed {len(boxes)} vehicle boxes")
    return boxes

def load_kitti_labels(path: str) -> List[BoundingBox]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_kitti_labels(f.read())
