"""Sample formats, bandwidth profiles, timestamp arithmetic, and FDM band planning.

Everything in this module is a pure value or a pure function. The transport
and streaming layers build on these types without adding any state here, so
all of it is safe to share freely across threads.

Wire conventions, fixed for the whole project:

* one I/Q sample is 4 bytes: int16 I then int16 Q, little-endian;
* sample timestamps are unsigned 64-bit tick counts at the channel sample
  rate, counted from the radio epoch (a u64 at 30.72 Msps outlasts any
  session by roughly 19,000 years, so wrapping is not handled);
* frequencies are integer Hz, rates integer samples/second.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

# Interleaved int16 I/Q, explicit little-endian so tobytes() is the wire format
# regardless of host endianness.
SAMPLE_DTYPE = np.dtype("<i2")
BYTES_PER_SAMPLE = 4

_SAMPLE_STRUCT = struct.Struct("<hh")

# Ticks of TX lead over the first RX timestamp at 25 PRB; other profiles scale
# proportionally so the lead stays just under four subframes at every rate.
TX_LEAD_TICKS_25PRB = 30640

# A sample timestamp is a plain int (ticks since radio epoch).
SampleTimestamp = int
SliceId = int
RadioChannelId = int


class UnsupportedProfileError(ValueError):
    """PRB count outside the supported set."""


class ConfigError(ValueError):
    """Malformed slice configuration file."""


@dataclass(frozen=True)
class IQSample:
    """One complex sample, int16 in-phase and quadrature in ADC units."""

    i: int
    q: int

    def __post_init__(self) -> None:
        for v in (self.i, self.q):
            if not -32768 <= v <= 32767:
                raise ValueError(f"component {v} outside int16 range")

    def to_bytes(self) -> bytes:
        return _SAMPLE_STRUCT.pack(self.i, self.q)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "IQSample":
        i, q = _SAMPLE_STRUCT.unpack(raw)
        return cls(i, q)


class IQBuffer:
    """A contiguous run of I/Q samples backed by an (n, 2) int16 array.

    ``tobytes()`` / ``from_bytes()`` round-trip the interleaved little-endian
    wire form; ``to_complex()`` / ``from_complex()`` bridge into float DSP.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.ascontiguousarray(data, dtype=SAMPLE_DTYPE)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"expected shape (n, 2), got {arr.shape}")
        self.data = arr

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def nbytes(self) -> int:
        return self.data.shape[0] * BYTES_PER_SAMPLE

    def tobytes(self) -> bytes:
        return self.data.tobytes()

    @classmethod
    def zeros(cls, n: int) -> "IQBuffer":
        return cls(np.zeros((n, 2), dtype=SAMPLE_DTYPE))

    @classmethod
    def from_bytes(cls, raw: bytes | bytearray | memoryview) -> "IQBuffer":
        if len(raw) % BYTES_PER_SAMPLE != 0:
            raise ValueError(f"byte length {len(raw)} is not a whole number of samples")
        flat = np.frombuffer(bytes(raw), dtype=SAMPLE_DTYPE)
        return cls(flat.reshape(-1, 2))

    def to_complex(self) -> np.ndarray:
        return self.data[:, 0].astype(np.float64) + 1j * self.data[:, 1].astype(np.float64)

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "IQBuffer":
        """Quantize a complex float waveform to int16 I/Q with clipping."""
        out = np.empty((len(z), 2), dtype=SAMPLE_DTYPE)
        np.clip(np.round(z.real), -32768, 32767, out=out[:, 0], casting="unsafe")
        np.clip(np.round(z.imag), -32768, 32767, out=out[:, 1], casting="unsafe")
        return cls(out)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IQBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))


@dataclass(frozen=True)
class BandwidthProfile:
    """One supported channel bandwidth: PRB count plus its derived rates."""

    prbs: int
    sample_rate: int  # samples/second
    samples_per_subframe: int  # samples per 1 ms

    def __post_init__(self) -> None:
        if self.sample_rate != self.samples_per_subframe * 1000:
            raise ValueError("sample_rate must be samples_per_subframe x 1000")

    @classmethod
    def from_prbs(cls, prbs: int) -> "BandwidthProfile":
        try:
            return _PROFILES[prbs]
        except KeyError:
            raise UnsupportedProfileError(
                f"unsupported PRB count {prbs}, expected one of {sorted(_PROFILES)}"
            ) from None


_PROFILES = {
    25: BandwidthProfile(25, 7_680_000, 7680),
    50: BandwidthProfile(50, 15_360_000, 15360),
    100: BandwidthProfile(100, 30_720_000, 30720),
}

SUPPORTED_PRBS = tuple(sorted(_PROFILES))


def samples_per_subframe(profile: BandwidthProfile) -> int:
    """Samples in one 1 ms subframe (7680 / 15360 / 30720)."""
    if profile.prbs not in _PROFILES:
        raise UnsupportedProfileError(f"unsupported PRB count {profile.prbs}")
    return profile.samples_per_subframe


def bytes_per_subframe(profile: BandwidthProfile) -> int:
    """Wire bytes of one subframe: 4 bytes per sample."""
    return BYTES_PER_SAMPLE * samples_per_subframe(profile)


def required_link_rate(profile: BandwidthProfile) -> int:
    """Bits/second a transport must sustain for continuous streaming (32 bits/sample)."""
    if profile.prbs not in _PROFILES:
        raise UnsupportedProfileError(f"unsupported PRB count {profile.prbs}")
    return profile.sample_rate * 32


def tx_offset(profile: BandwidthProfile, lead_25prb: int = TX_LEAD_TICKS_25PRB) -> int:
    """TX lead in ticks over the first RX timestamp.

    Exactly ``lead_25prb`` at 25 PRB; other profiles scale proportionally to
    the sample rate so the lead is the same length of time everywhere.
    """
    spsf = samples_per_subframe(profile)
    if spsf == 7680:
        return lead_25prb
    return round(lead_25prb * spsf / 7680)


@dataclass(frozen=True)
class Band:
    """Half-open frequency interval [lo, hi) in Hz."""

    lo: int
    hi: int

    @classmethod
    def around(cls, center_hz: int, sample_rate: int) -> "Band":
        # Conservative edge rule: the full sample rate, not occupied bandwidth.
        half = sample_rate // 2
        return cls(center_hz - half, center_hz + half)

    def overlaps(self, other: "Band") -> bool:
        return self.lo < other.hi and other.lo < self.hi


@dataclass(frozen=True)
class SliceConfig:
    """Radio-facing configuration of one slice."""

    slice_id: SliceId
    profile: BandwidthProfile
    dl_freq_hz: int
    ul_freq_hz: int
    rx_gain_db: int
    tx_gain_db: int
    radio_channel: RadioChannelId
    phy_profile_name: str
    tx_lead_ticks: int | None = None  # None: profile-scaled default

    def dl_band(self) -> Band:
        return Band.around(self.dl_freq_hz, self.profile.sample_rate)

    def ul_band(self) -> Band:
        return Band.around(self.ul_freq_hz, self.profile.sample_rate)

    def effective_tx_lead(self) -> int:
        if self.tx_lead_ticks is not None:
            return self.tx_lead_ticks
        return tx_offset(self.profile)

    def with_bands(self, dl_freq_hz: int, ul_freq_hz: int) -> "SliceConfig":
        return replace(self, dl_freq_hz=dl_freq_hz, ul_freq_hz=ul_freq_hz)


@dataclass(frozen=True)
class FdmEntry:
    slice_id: SliceId
    dl: Band
    ul: Band
    radio_channel: RadioChannelId

    @classmethod
    def from_config(cls, cfg: SliceConfig) -> "FdmEntry":
        return cls(cfg.slice_id, cfg.dl_band(), cfg.ul_band(), cfg.radio_channel)


@dataclass(frozen=True)
class FdmPlan:
    entries: tuple[FdmEntry, ...]

    @classmethod
    def from_configs(cls, configs) -> "FdmPlan":
        return cls(tuple(FdmEntry.from_config(c) for c in configs))


@dataclass(frozen=True)
class FdmConflict:
    slice_a: SliceId
    slice_b: SliceId
    kind: str  # "dl" | "ul" | "radio_channel"
    detail: str

    def __str__(self) -> str:
        return f"slice {self.slice_a} vs slice {self.slice_b}: {self.detail}"


def validate_fdm_plan(plan: FdmPlan) -> list[FdmConflict]:
    """Check pairwise DL and UL band disjointness and radio-channel uniqueness.

    Returns the empty list when the plan is valid; otherwise one conflict
    record per violating pair and dimension. Order-insensitive: permuting
    the entries changes nothing but the a/b labelling inside each record.
    """
    conflicts: list[FdmConflict] = []
    entries = plan.entries
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            a, b = entries[i], entries[j]
            if a.dl.overlaps(b.dl):
                conflicts.append(FdmConflict(
                    a.slice_id, b.slice_id, "dl",
                    f"dl bands [{a.dl.lo},{a.dl.hi}) and [{b.dl.lo},{b.dl.hi}) overlap",
                ))
            if a.ul.overlaps(b.ul):
                conflicts.append(FdmConflict(
                    a.slice_id, b.slice_id, "ul",
                    f"ul bands [{a.ul.lo},{a.ul.hi}) and [{b.ul.lo},{b.ul.hi}) overlap",
                ))
            if a.radio_channel == b.radio_channel:
                conflicts.append(FdmConflict(
                    a.slice_id, b.slice_id, "radio_channel",
                    f"both mapped to radio channel {a.radio_channel}",
                ))
    return conflicts


# ---------------------------------------------------------------------------
# Slice configuration files
#
# Flat "key = value" text, one key per line, '#' starts a comment. Keys:
#
#   slice_id      int, unique per running slice
#   prbs          25 | 50 | 100
#   dl_freq_hz    int Hz
#   ul_freq_hz    int Hz
#   rx_gain_db    int dB            (optional, default 0)
#   tx_gain_db    int dB            (optional, default 0)
#   radio_channel int channel index
#   phy_profile   string            (e.g. "phy-a")
#   tx_lead_ticks int               (optional, overrides the profile default)
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = {"slice_id", "prbs", "dl_freq_hz", "ul_freq_hz", "radio_channel", "phy_profile"}
_OPTIONAL_KEYS = {"rx_gain_db", "tx_gain_db", "tx_lead_ticks"}


def parse_slice_config(text: str) -> SliceConfig:
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in fields:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key not in _REQUIRED_KEYS | _OPTIONAL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        fields[key] = value

    missing = _REQUIRED_KEYS - fields.keys()
    if missing:
        raise ConfigError(f"missing required keys: {sorted(missing)}")

    def as_int(key: str, default: int | None = None) -> int:
        if key not in fields:
            assert default is not None
            return default
        try:
            return int(fields[key], 0)
        except ValueError:
            raise ConfigError(f"key {key!r}: {fields[key]!r} is not an integer") from None

    profile = BandwidthProfile.from_prbs(as_int("prbs"))
    return SliceConfig(
        slice_id=as_int("slice_id"),
        profile=profile,
        dl_freq_hz=as_int("dl_freq_hz"),
        ul_freq_hz=as_int("ul_freq_hz"),
        rx_gain_db=as_int("rx_gain_db", 0),
        tx_gain_db=as_int("tx_gain_db", 0),
        radio_channel=as_int("radio_channel"),
        phy_profile_name=fields["phy_profile"],
        tx_lead_ticks=as_int("tx_lead_ticks") if "tx_lead_ticks" in fields else None,
    )


def load_slice_config(path: str | Path) -> SliceConfig:
    return parse_slice_config(Path(path).read_text())


def format_slice_config(cfg: SliceConfig) -> str:
    lines = [
        f"slice_id = {cfg.slice_id}",
        f"prbs = {cfg.profile.prbs}",
        f"dl_freq_hz = {cfg.dl_freq_hz}",
        f"ul_freq_hz = {cfg.ul_freq_hz}",
        f"rx_gain_db = {cfg.rx_gain_db}",
        f"tx_gain_db = {cfg.tx_gain_db}",
        f"radio_channel = {cfg.radio_channel}",
        f"phy_profile = {cfg.phy_profile_name}",
    ]
    if cfg.tx_lead_ticks is not None:
        lines.append(f"tx_lead_ticks = {cfg.tx_lead_ticks}")
    return "\n".join(lines) + "\n"
