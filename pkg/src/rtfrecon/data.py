"""Room sampling, microphone masks, and the on-disk dataset format.

A dataset is a directory of fixed-size binary record files plus a
meta.json. Each record holds one room: header, dense complex64 field
over the receiver grid, and the stored microphone mask.

Record layout (little-endian, 64-byte header):

    offset  size  field
    0       4     magic "MDF1"
    4       12    grid_w, grid_h, K        (3x uint32)
    16      8     record seed              (uint64)
    24      32    lx, ly, lz, t60, sx, sy, sz, z_plane  (8x float32)
    56      8     padding (zeros)
    64      ...   field data, grid_w*grid_h*K complex64, C-order (w, h, k)
    ...     ...   mask, grid_w*grid_h uint8, C-order (w, h)

t60 may be NaN only for measured imports. Generation is a pure function
of (config, seed): records are derived from per-index seed sequences, so
regenerating any subset yields identical bytes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .modal import DEFAULT_F_CUTOFF, FieldGrid, RoomSpec, synthesize_field

MAGIC = b"MDF1"
_HEADER = struct.Struct("<4sIIIQ8f8x")
assert _HEADER.size == 64

DEFAULT_T60_LEVELS = (0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6)
DEFAULT_MIC_COUNTS = (5, 10, 15, 35, 55)
DEFAULT_BAND = (30.0, 300.0)
DEFAULT_K = 40

SOURCE_MARGIN = 0.1


def default_freqs(k: int = DEFAULT_K, f_lo: float = DEFAULT_BAND[0],
                  f_hi: float = DEFAULT_BAND[1]) -> np.ndarray:
    """K frequencies uniformly spaced over [f_lo, f_hi], endpoints included."""
    if k < 2:
        raise ValueError("need at least 2 frequencies")
    if not 0 < f_lo < f_hi:
        raise ValueError("need 0 < f_lo < f_hi")
    return np.linspace(f_lo, f_hi, k)


@dataclass(frozen=True)
class GenConfig:
    """Everything that determines a generated dataset."""

    n_rooms: int
    seed: int
    split: float = 0.75
    t60_choices: tuple[float, ...] = DEFAULT_T60_LEVELS
    mic_choices: tuple[int, ...] = DEFAULT_MIC_COUNTS
    k_freqs: int = DEFAULT_K
    f_lo: float = DEFAULT_BAND[0]
    f_hi: float = DEFAULT_BAND[1]
    grid_w: int = 32
    grid_h: int = 32
    f_cutoff: float = DEFAULT_F_CUTOFF

    def __post_init__(self):
        object.__setattr__(self, "t60_choices", tuple(float(t) for t in self.t60_choices))
        object.__setattr__(self, "mic_choices", tuple(int(m) for m in self.mic_choices))
        if self.n_rooms < 1:
            raise ValueError("n_rooms must be >= 1")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must lie in (0, 1)")
        if not self.t60_choices or any(t <= 0 for t in self.t60_choices):
            raise ValueError("t60_choices must be positive")
        if not self.mic_choices or any(m < 1 for m in self.mic_choices):
            raise ValueError("mic_choices must be >= 1")
        if max(self.mic_choices) > self.grid_w * self.grid_h:
            raise ValueError("more microphones than grid points")
        if self.k_freqs < 2:
            raise ValueError("k_freqs must be >= 2")
        if not 0 < self.f_lo < self.f_hi <= self.f_cutoff:
            raise ValueError("need 0 < f_lo < f_hi <= f_cutoff")
        if self.grid_w < 2 or self.grid_h < 2:
            raise ValueError("grid dimensions must be at least 2")

    @property
    def freqs(self) -> np.ndarray:
        return default_freqs(self.k_freqs, self.f_lo, self.f_hi)

    @property
    def n_train(self) -> int:
        return int(self.n_rooms * self.split)


@dataclass
class MicMask:
    """Microphone placement on the grid.

    mask is (grid_w, grid_h) uint8 in {0, 1}; observed lists the (w, h)
    pairs of the active points in row-major order.
    """

    mask: np.ndarray
    observed: list[tuple[int, int]]

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        want = [tuple(int(v) for v in wh) for wh in np.argwhere(self.mask == 1)]
        if sorted(self.observed) != want:
            raise ValueError("observed list inconsistent with mask array")
        if not self.observed:
            raise ValueError("mask selects no microphones")

    @property
    def m(self) -> int:
        return len(self.observed)


@dataclass
class SampleRecord:
    """One room: geometry, dense field, stored mask, and its seed."""

    room: RoomSpec
    field: FieldGrid
    mask: MicMask
    seed: int

    def __post_init__(self):
        if self.field.data.shape[:2] != (self.room.grid_w, self.room.grid_h):
            raise ValueError("field grid does not match room grid")
        if self.mask.mask.shape != (self.room.grid_w, self.room.grid_h):
            raise ValueError("mask shape does not match room grid")


def sample_room(rng: np.random.Generator, config: GenConfig,
                max_tries: int = 1000) -> RoomSpec:
    """Draw one room following the typical-listening-room recipe.

    Height U[2.3, 3.0] m and floor area U[20, 60] m^2 with aspect ratio
    Lx/Ly U[1, 3]; candidates are rejected until the proportions satisfy
    Lx/Lz <= 4.5*(Ly/Lz) - 4, Lx/Lz < 3, Ly/Lz < 3 and Lx >= Ly. T60 is
    drawn uniformly from config.t60_choices, the source uniformly inside
    the room with a 0.1 m wall margin. The draw order (Lz, area, ratio
    per attempt; then T60; then source x, y, z) is fixed: two configs
    differing only in t60_choices yield identical geometry from the same
    rng state.
    """
    for _ in range(max_tries):
        lz = rng.uniform(2.3, 3.0)
        area = rng.uniform(20.0, 60.0)
        ratio = rng.uniform(1.0, 3.0)
        ly = math.sqrt(area / ratio)
        lx = ratio * ly
        rx, ry = lx / lz, ly / lz
        if rx <= 4.5 * ry - 4.0 and rx < 3.0 and ry < 3.0 and lx >= ly:
            break
    else:
        raise ValueError(f"no admissible room in {max_tries} draws")
    t60 = config.t60_choices[int(rng.integers(len(config.t60_choices)))]
    source = (
        rng.uniform(SOURCE_MARGIN, lx - SOURCE_MARGIN),
        rng.uniform(SOURCE_MARGIN, ly - SOURCE_MARGIN),
        rng.uniform(SOURCE_MARGIN, lz - SOURCE_MARGIN),
    )
    return RoomSpec(lx=lx, ly=ly, lz=lz, t60=t60, source=source,
                    z_plane=lz / 2.0, grid_w=config.grid_w, grid_h=config.grid_h)


def sample_mask(rng: np.random.Generator, m: int, grid_w: int, grid_h: int) -> MicMask:
    """m distinct grid points uniformly without replacement."""
    n = grid_w * grid_h
    if not 1 <= m <= n:
        raise ValueError(f"mic count {m} outside [1, {n}]")
    flat = np.sort(rng.choice(n, size=m, replace=False))
    mask = np.zeros(n, dtype=np.uint8)
    mask[flat] = 1
    observed = [(int(i) // grid_h, int(i) % grid_h) for i in flat]
    return MicMask(mask=mask.reshape(grid_w, grid_h), observed=observed)


def mask_seed_for(record_seed: int, m: int) -> np.random.Generator:
    """The canonical RNG for re-drawing a record's mask at a given mic count."""
    ss = np.random.SeedSequence([int(record_seed), int(m)])
    return np.random.default_rng(ss)


def apply_mask(field: FieldGrid, mask: MicMask) -> FieldGrid:
    """Zero the field everywhere no microphone sits."""
    if mask.mask.shape != field.data.shape[:2]:
        raise ValueError("mask shape does not match field grid")
    data = field.data * mask.mask[:, :, None]
    return FieldGrid(data=data, freqs=field.freqs, room_id=field.room_id)


def build_input(masked: FieldGrid, mask: MicMask,
                dtype=np.complex64) -> np.ndarray:
    """Network input: masked field stacked with the mask replicated K times.

    Shape (grid_w, grid_h, 2K); channels 0..K-1 are the masked field,
    channels K..2K-1 the {0,1} mask.
    """
    k = len(masked.freqs)
    mask_ch = np.broadcast_to(mask.mask[:, :, None], masked.data.shape[:2] + (k,))
    return np.concatenate(
        [masked.data.astype(dtype), mask_ch.astype(dtype)], axis=2
    )


def record_seed_for(config_seed: int, index: int) -> int:
    """Per-record seed derived from the dataset seed and record index."""
    ss = np.random.SeedSequence([int(config_seed), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def generate_record(config: GenConfig, index: int) -> SampleRecord:
    """Record `index` of the dataset; independent of all other records."""
    seed = record_seed_for(config.seed, index)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, index]))
    room = sample_room(rng, config)
    m = config.mic_choices[int(rng.integers(len(config.mic_choices)))]
    mask = sample_mask(rng, m, config.grid_w, config.grid_h)
    field = synthesize_field(room, config.freqs, f_cutoff=config.f_cutoff,
                             room_id=f"room_{index:05d}")
    return SampleRecord(room=room, field=field, mask=mask, seed=seed)


def generate_records(config: GenConfig):
    """Yield all records of a dataset in index order."""
    for i in range(config.n_rooms):
        yield generate_record(config, i)


def write_record(path, record: SampleRecord) -> None:
    room, fld = record.room, record.field
    k = len(fld.freqs)
    header = _HEADER.pack(
        MAGIC, room.grid_w, room.grid_h, k, record.seed & 0xFFFFFFFFFFFFFFFF,
        room.lx, room.ly, room.lz, room.t60,
        room.source[0], room.source[1], room.source[2], room.z_plane,
    )
    payload = np.ascontiguousarray(fld.data, dtype="<c8").tobytes()
    mask_bytes = np.ascontiguousarray(record.mask.mask, dtype=np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(mask_bytes)


def read_record(path, freqs=None) -> SampleRecord:
    """Load one record.

    freqs overrides the frequency grid (needed when no meta.json is
    around); by default the spec band [30, 300] Hz with the header's K.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read record {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise DataError(f"record {path} truncated (no header)")
    magic, gw, gh, k, seed, lx, ly, lz, t60, sx, sy, sz, zp = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataError(f"record {path} has bad magic {magic!r}")
    n_payload = gw * gh * k * 8
    want = _HEADER.size + n_payload + gw * gh
    if len(blob) != want:
        raise DataError(
            f"record {path} has {len(blob)} bytes, expected {want} "
            f"for a {gw}x{gh}x{k} grid"
        )
    for name, v in (("lx", lx), ("ly", ly), ("lz", lz), ("sx", sx),
                    ("sy", sy), ("sz", sz), ("z_plane", zp)):
        if not math.isfinite(v):
            raise DataError(f"record {path}: header field {name} is not finite")
    data = np.frombuffer(blob, dtype="<c8", count=gw * gh * k,
                         offset=_HEADER.size).reshape(gw, gh, k)
    if not np.all(np.isfinite(data)):
        bad = np.argwhere(~np.isfinite(data))[0]
        raise DataError(f"record {path}: non-finite field value at {tuple(bad)}")
    mask_arr = np.frombuffer(blob, dtype=np.uint8,
                             offset=_HEADER.size + n_payload).reshape(gw, gh)
    if not np.all(mask_arr <= 1):
        raise DataError(f"record {path}: mask bytes outside {{0, 1}}")
    if freqs is None:
        freqs = default_freqs(k)
    elif len(freqs) != k:
        raise DataError(f"record {path}: {k} frequency bins but {len(freqs)} freqs given")
    room = RoomSpec(lx=lx, ly=ly, lz=lz, t60=t60, source=(sx, sy, sz),
                    z_plane=zp, grid_w=gw, grid_h=gh)
    fld = FieldGrid(data=np.array(data, dtype=np.complex64),
                    freqs=tuple(freqs), room_id=path.stem)
    observed = [tuple(int(v) for v in wh) for wh in np.argwhere(mask_arr == 1)]
    mask = MicMask(mask=mask_arr.copy(), observed=observed)
    return SampleRecord(room=room, field=fld, mask=mask, seed=int(seed))


def record_name(index: int) -> str:
    return f"room_{index:05d}.mdf"


def write_dataset(config: GenConfig, out_dir, force: bool = False,
                  progress=None) -> Path:
    """Generate and persist a whole dataset directory."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise DataError(
                f"output directory {out} is not empty; pass force to overwrite"
            )
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(config.n_rooms):
        rec = generate_record(config, i)
        name = record_name(i)
        write_record(out / name, rec)
        names.append(name)
        if progress is not None:
            progress(i, config.n_rooms)
    meta = {
        "format": MAGIC.decode(),
        "config": asdict(config),
        "freqs": [float(f) for f in config.freqs],
        "records": names,
        "n_train": config.n_train,
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


@dataclass
class Dataset:
    """An on-disk dataset opened for reading."""

    config: GenConfig
    freqs: tuple[float, ...]
    paths: list[Path]

    @classmethod
    def open(cls, dataset_dir) -> "Dataset":
        root = Path(dataset_dir)
        meta_path = root / "meta.json"
        if not meta_path.exists():
            raise DataError(f"{root} has no meta.json")
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{meta_path} is not valid JSON: {exc}") from exc
        try:
            cfg = GenConfig(**meta["config"])
            freqs = tuple(float(f) for f in meta["freqs"])
            names = meta["records"]
        except (KeyError, TypeError) as exc:
            raise DataError(f"{meta_path} missing required keys: {exc}") from exc
        paths = [root / n for n in names]
        missing = [p.name for p in paths if not p.exists()]
        if missing:
            raise DataError(f"{root} missing record files: {missing[:5]}")
        return cls(config=cfg, freqs=freqs, paths=paths)

    def __len__(self) -> int:
        return len(self.paths)

    def load(self, index: int) -> SampleRecord:
        return read_record(self.paths[index], freqs=self.freqs)

    @property
    def train_indices(self) -> range:
        return range(self.config.n_train)

    @property
    def val_indices(self) -> range:
        return range(self.config.n_train, len(self.paths))

    def load_train(self) -> list[SampleRecord]:
        return [self.load(i) for i in self.train_indices]

    def load_val(self) -> list[SampleRecord]:
        return [self.load(i) for i in self.val_indices]


def import_measured_grid(path, freqs=None, mic_count: int | None = None,
                         rng: np.random.Generator | None = None) -> SampleRecord:
    """Load a measured-grid record, optionally re-drawing the mask.

    The record format is the same; T60 may be NaN (unknown). When
    mic_count is given a fresh mask is drawn with `rng` (falls back to
    the record's own seed).
    """
    rec = read_record(path, freqs=freqs)
    if mic_count is not None:
        if rng is None:
            rng = mask_seed_for(rec.seed, mic_count)
        mask = sample_mask(rng, mic_count, rec.room.grid_w, rec.room.grid_h)
        rec = SampleRecord(room=rec.room, field=rec.field, mask=mask, seed=rec.seed)
    return rec
