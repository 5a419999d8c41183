"""Readers and writers for images, box files and dataset manifests.

Box files hold one record per line, fields separated by whitespace::

    class_id cx cy w h [confidence]

Coordinates are normalized to the original image width and height. Five
fields make a label, six make a prediction. The canonical writer emits single
spaces, six decimals and a trailing newline on every line.

Manifests are tab-separated text::

    # cavityforge manifest v1
    # images=2 features=57
    image<TAB>label<TAB>pixel_scale_nm<TAB>width<TAB>height<TAB>split<TAB>features<TAB>thickness_nm
    images/img_0000.png<TAB>labels/img_0000.txt<TAB>0.095000<TAB>2048<TAB>2048<TAB>train<TAB>31<TAB>100.000000
    ...

Paths are relative to the manifest's directory. Further ``#`` lines are
comments. The column header line is mandatory.
"""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

CLAMP_TOLERANCE = 1e-6
MANIFEST_VERSION = 1
MANIFEST_MAGIC = "# cavityforge manifest v"
MANIFEST_COLUMNS = ("image", "label", "pixel_scale_nm", "width", "height", "split",
                    "features", "thickness_nm")
DEFAULT_THICKNESS_NM = 100.0


class BoxFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.message = message
        self.line = line
        self.path = path

    def __reduce__(self):
        return type(self), (self.message, self.line, self.path)


class ManifestError(ValueError):
    pass


class ImageFormatError(ValueError):
    pass


@dataclass(frozen=True)
class BoxRecord:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float
    confidence: float | None = None

    @property
    def is_prediction(self) -> bool:
        return self.confidence is not None

    def scaled(self, factor: float) -> "BoxRecord":
        """Same centre, width and height multiplied by ``factor``."""
        return BoxRecord(self.class_id, self.cx, self.cy, self.w * factor, self.h * factor,
                         self.confidence)


def _unit(value: float, name: str, line: int | None, path) -> float:
    if not math.isfinite(value):
        raise BoxFormatError(f"{name} is not finite", line, path)
    if value < -CLAMP_TOLERANCE or value > 1.0 + CLAMP_TOLERANCE:
        raise BoxFormatError(f"{name}={value!r} outside [0, 1]", line, path)
    return min(max(value, 0.0), 1.0)


def parse_box_line(line: str, lineno: int | None = None, path=None) -> BoxRecord:
    fields = line.split()
    if len(fields) not in (5, 6):
        raise BoxFormatError(f"expected 5 or 6 fields, got {len(fields)}", lineno, path)
    try:
        class_id = int(fields[0])
    except ValueError:
        raise BoxFormatError(f"class id {fields[0]!r} is not an integer", lineno, path) from None
    if class_id < 0:
        raise BoxFormatError("class id must be non-negative", lineno, path)
    values = []
    for name, text in zip(("cx", "cy", "w", "h", "confidence"), fields[1:]):
        try:
            v = float(text)
        except ValueError:
            raise BoxFormatError(f"{name} {text!r} is not a number", lineno, path) from None
        values.append(_unit(v, name, lineno, path))
    conf = values[4] if len(values) == 5 else None
    return BoxRecord(class_id, *values[:4], confidence=conf)


def parse_box_file(text: str, path=None) -> list[BoxRecord]:
    """Parse box-file text; blank lines are skipped, errors carry the 1-based line number."""
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            records.append(parse_box_line(line, lineno, path))
    return records


def format_box(rec: BoxRecord) -> str:
    s = f"{rec.class_id:d} {rec.cx:.6f} {rec.cy:.6f} {rec.w:.6f} {rec.h:.6f}"
    if rec.confidence is not None:
        s += f" {rec.confidence:.6f}"
    return s


def write_box_file(records) -> str:
    records = list(records)
    kinds = {r.is_prediction for r in records}
    if len(kinds) > 1:
        raise BoxFormatError("cannot mix labels and predictions in one file")
    return "".join(format_box(r) + "\n" for r in records)


def read_boxes(path) -> list[BoxRecord]:
    path = Path(path)
    return parse_box_file(path.read_text(encoding="utf-8"), path=path)


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a sibling temp file, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_boxes(path, records) -> None:
    atomic_write_text(path, write_box_file(records))


# -- images -------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """Load a grayscale raster as uint8 or uint16, never narrowing the bit depth."""
    with Image.open(path) as im:
        mode = im.mode
        if mode == "L":
            arr = np.asarray(im, dtype=np.uint8)
        elif mode in ("I;16", "I;16B", "I;16L"):
            arr = np.asarray(im).astype(np.uint16)
        elif mode == "I":
            arr = np.asarray(im)
            if arr.min() < 0 or arr.max() > 65535:
                raise ImageFormatError(f"{path}: 32-bit integer image exceeds 16-bit range")
            arr = arr.astype(np.uint16)
        else:
            raise ImageFormatError(f"{path}: unsupported image mode {mode!r}; expected grayscale")
    return np.array(arr)


def encode_png(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ImageFormatError("only 2D grayscale images are supported")
    if pixels.dtype == np.uint8:
        im = Image.fromarray(np.ascontiguousarray(pixels))
    elif pixels.dtype == np.uint16:
        im = Image.fromarray(np.ascontiguousarray(pixels, dtype="<u2"))
    else:
        raise ImageFormatError(f"pixel dtype {pixels.dtype} is not uint8 or uint16")
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def write_image(path, pixels: np.ndarray) -> None:
    atomic_write_bytes(path, encode_png(pixels))


# -- manifests ----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    image: str
    label: str
    pixel_scale: float
    width: int
    height: int
    split: str = "test"
    features: int = 0
    thickness_nm: float = DEFAULT_THICKNESS_NM

    @property
    def stem(self) -> str:
        return Path(self.image).stem


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...] = ()
    version: int = MANIFEST_VERSION

    @property
    def counts(self) -> tuple[int, int]:
        return len(self.entries), sum(e.features for e in self.entries)

    def by_stem(self) -> dict[str, ManifestEntry]:
        return {e.stem: e for e in self.entries}

    def split_counts(self) -> dict[str, tuple[int, int]]:
        out: dict[str, tuple[int, int]] = {}
        for e in self.entries:
            n, f = out.get(e.split, (0, 0))
            out[e.split] = (n + 1, f + e.features)
        return out


def manifest_to_text(manifest: DatasetManifest) -> str:
    n_img, n_feat = manifest.counts
    lines = [f"{MANIFEST_MAGIC}{manifest.version}",
             f"# images={n_img} features={n_feat}",
             "\t".join(MANIFEST_COLUMNS)]
    for e in manifest.entries:
        for text in (e.image, e.label, e.split):
            if "\t" in text or "\n" in text:
                raise ManifestError(f"entry {e.image!r}: tabs and newlines are not allowed")
        lines.append("\t".join([e.image, e.label, f"{e.pixel_scale:.6f}", str(e.width),
                                str(e.height), e.split, str(e.features),
                                f"{e.thickness_nm:.6f}"]))
    return "\n".join(lines) + "\n"


def _parse_entry(fields: list[str], lineno: int) -> ManifestEntry:
    if len(fields) != len(MANIFEST_COLUMNS):
        raise ManifestError(f"line {lineno}: expected {len(MANIFEST_COLUMNS)} columns, "
                            f"got {len(fields)}")
    try:
        return ManifestEntry(fields[0], fields[1], float(fields[2]), int(fields[3]),
                             int(fields[4]), fields[5], int(fields[6]), float(fields[7]))
    except ValueError as exc:
        raise ManifestError(f"line {lineno} ({fields[0]}): {exc}") from None


def manifest_from_text(text: str) -> tuple[DatasetManifest, tuple[int, int]]:
    """Parse manifest text; returns the manifest and the header's declared counts."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MANIFEST_MAGIC):
        raise ManifestError("missing manifest version header")
    try:
        version = int(lines[0][len(MANIFEST_MAGIC):])
    except ValueError:
        raise ManifestError("malformed manifest version header") from None
    if version != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {version}")
    declared = None
    seen_columns = False
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if declared is None and body.startswith("images="):
                try:
                    parts = dict(p.split("=", 1) for p in body.split())
                    declared = (int(parts["images"]), int(parts["features"]))
                except (ValueError, KeyError):
                    raise ManifestError(f"line {lineno}: malformed counts header") from None
            continue
        fields = line.split("\t")
        if not seen_columns:
            if tuple(fields) != MANIFEST_COLUMNS:
                raise ManifestError(f"line {lineno}: expected column header")
            seen_columns = True
            continue
        entries.append(_parse_entry(fields, lineno))
    if declared is None:
        raise ManifestError("missing counts header")
    if not seen_columns:
        raise ManifestError("missing column header")
    return DatasetManifest(tuple(entries), version), declared


def save_manifest(path, manifest: DatasetManifest) -> None:
    atomic_write_text(path, manifest_to_text(manifest))


def load_manifest(path, verify_files: bool = True) -> DatasetManifest:
    """Load and verify a manifest.

    Header counts must match the entries. With ``verify_files`` every image
    and label file must exist and each label file must hold exactly the
    entry's feature count.
    """
    path = Path(path)
    manifest, declared = manifest_from_text(path.read_text(encoding="utf-8"))
    if declared != manifest.counts:
        raise ManifestError(f"{path}: header declares {declared[0]} images / {declared[1]} "
                            f"features but entries sum to {manifest.counts[0]} / "
                            f"{manifest.counts[1]}")
    if verify_files:
        root = path.parent
        for e in manifest.entries:
            for rel in (e.image, e.label):
                if not (root / rel).is_file():
                    raise ManifestError(f"entry {e.image}: missing file {rel}")
            try:
                n = len(read_boxes(root / e.label))
            except BoxFormatError as exc:
                raise ManifestError(f"entry {e.image}: {exc}") from None
            if n != e.features:
                raise ManifestError(f"entry {e.image}: label file has {n} features, "
                                    f"manifest says {e.features}")
    return manifest
