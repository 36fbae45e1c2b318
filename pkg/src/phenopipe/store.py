"""On-disk study layout, participant registry, keystore and upload metadata.

Layout under a study root::

    study.json                      configuration
    registry.json                   participants (public material only)
    keystore/<pid>.key              private keys (on-premise only)
    <study>/<pid>/<kind>/<ts>.hcz   encrypted raw uploads
    <study>/<pid>/<kind>/<ts>.meta.json   plaintext upload metadata
    decrypted/ 1.decrypted/ ... 5.decrypted/   pipeline stage outputs
    anomaly/scores.csv
"""

from __future__ import annotations

import json
import os
import secrets
import string
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .crypto import FILE_EXT, KeyPair, generate_keypair
from .schemas import FeatureKind

STAGE_DIRS = ("decrypted", "1.decrypted", "2.decrypted", "3.decrypted", "4.decrypted", "5.decrypted")
META_SUFFIX = ".meta.json"
REGISTRY_NAME = "registry.json"
_ID_ALPHABET = string.ascii_letters + string.digits


class RegistryError(Exception):
    pass


class DuplicateParticipant(RegistryError):
    pass


class UnknownParticipant(RegistryError):
    pass


class LayoutError(Exception):
    pass


def atomic_write(path: Path, data: bytes) -> None:
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class StudyLayout:
    root: Path
    study: str

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    @property
    def raw(self) -> Path:
        return self.root / self.study

    def stage(self, k: int) -> Path:
        """Output directory of pipeline stage ``k`` (1..6)."""
        if not 1 <= k <= 6:
            raise ValueError(f"stage {k} out of range")
        return self.root / STAGE_DIRS[k - 1] / self.study

    @property
    def keystore(self) -> Path:
        return self.root / "keystore"

    @property
    def registry_path(self) -> Path:
        return self.root / REGISTRY_NAME

    @property
    def anomaly_dir(self) -> Path:
        return self.root / "anomaly"

    @property
    def state_dir(self) -> Path:
        return self.root / ".state"

    def raw_file(self, pid: str, kind, stamp: int | str) -> Path:
        return self.raw / pid / FeatureKind(kind).value / f"{stamp}{FILE_EXT}"

    def participants(self) -> list[str]:
        if not self.raw.is_dir():
            return []
        return sorted(p.name for p in self.raw.iterdir() if p.is_dir() and not p.name.startswith("."))

    def raw_files(self, pid: str | None = None) -> list[tuple[str, FeatureKind, Path]]:
        """All encrypted raw files as ``(participant, kind, path)`` in lexicographic order."""
        out = []
        pids = [pid] if pid else self.participants()
        for p in pids:
            base = self.raw / p
            if not base.is_dir():
                continue
            for kdir in sorted(base.iterdir()):
                if not kdir.is_dir():
                    continue
                try:
                    kind = FeatureKind(kdir.name)
                except ValueError:
                    continue
                for f in sorted(kdir.iterdir()):
                    if f.name.endswith(FILE_EXT):
                        out.append((p, kind, f))
        return out


def scan_new_files(layout: StudyLayout, stage: int = 1) -> list[tuple[str, FeatureKind, Path]]:
    """Raw files whose decrypted (stage 1) or patched (stage 2) output is absent."""
    if not layout.root.is_dir():
        raise LayoutError(f"missing study root {layout.root}")
    if stage not in (1, 2):
        raise ValueError("per-file scanning applies to stages 1 and 2")
    out_dir = layout.stage(stage)
    new = []
    for pid, kind, path in layout.raw_files():
        target = out_dir / pid / kind.value / (path.name[: -len(FILE_EXT)] + ".csv")
        if not target.exists():
            new.append((pid, kind, path))
    return new


@dataclass
class Participant:
    participant_id: str
    public_key: str  # hex
    contact_salt: str  # hex, 16 bytes
    gps_offset: tuple[float, float]  # (dx_m, dy_m)
    enrollment_date: str
    visit_dates: list[str] = field(default_factory=list)
    phone_model: str = ""
    tz_offset_min: int = 480
    tokens: dict | None = None
    credential_hash: str = ""  # sha256 of the upload credential handed to the phone

    @property
    def salt(self) -> bytes:
        return bytes.fromhex(self.contact_salt)

    @property
    def pub(self) -> bytes:
        return bytes.fromhex(self.public_key)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gps_offset"] = list(self.gps_offset)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Participant":
        d = dict(d)
        d["gps_offset"] = tuple(d["gps_offset"])
        return cls(**d)


def new_participant_id(rng=None) -> str:
    if rng is None:
        return "".join(secrets.choice(_ID_ALPHABET) for _ in range(10))
    idx = rng.integers(0, len(_ID_ALPHABET), size=10)
    return "".join(_ID_ALPHABET[i] for i in idx)


class Registry:
    """Participants of one study, persisted as ``registry.json``."""

    def __init__(self, study: str, participants: dict[str, Participant] | None = None):
        self.study = study
        self.participants: dict[str, Participant] = dict(participants or {})

    def __contains__(self, pid: str) -> bool:
        return pid in self.participants

    def __iter__(self):
        return iter(sorted(self.participants))

    def __len__(self):
        return len(self.participants)

    def get(self, pid: str) -> Participant:
        try:
            return self.participants[pid]
        except KeyError:
            raise UnknownParticipant(pid) from None

    def add(self, p: Participant) -> None:
        if p.participant_id in self.participants:
            raise DuplicateParticipant(p.participant_id)
        self.participants[p.participant_id] = p

    def to_json(self) -> str:
        body = {"study": self.study,
                "participants": {pid: self.participants[pid].to_dict() for pid in sorted(self.participants)}}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Registry":
        body = json.loads(text)
        return cls(body["study"], {pid: Participant.from_dict(d) for pid, d in body["participants"].items()})

    def save(self, layout: StudyLayout) -> None:
        atomic_write(layout.registry_path, self.to_json().encode())

    @classmethod
    def load(cls, layout: StudyLayout) -> "Registry":
        if not layout.registry_path.exists():
            return cls(layout.study)
        return cls.from_json(layout.registry_path.read_text())


def save_private_key(layout: StudyLayout, pid: str, keypair: KeyPair) -> Path:
    path = layout.keystore / f"{pid}.key"
    atomic_write(path, keypair.private_key.hex().encode() + b"\n")
    os.chmod(path, 0o600)
    return path


def load_private_key(layout: StudyLayout, pid: str) -> bytes:
    path = layout.keystore / f"{pid}.key"
    if not path.exists():
        raise UnknownParticipant(f"no private key for {pid}")
    return bytes.fromhex(path.read_text().strip())


def enroll(layout: StudyLayout, registry: Registry, *, pid: str | None = None, enrollment_date: str,
           phone_model: str = "", tz_offset_min: int = 480, rng=None, key_seed=None,
           offset_range_m: float = 20_000.0, visit_dates: list[str] | None = None) -> tuple[Participant, KeyPair]:
    """Create keys, contact salt and GPS displacement for a new participant."""
    if rng is None:
        pid = pid or new_participant_id()
        salt = secrets.token_bytes(16)
        dx = (secrets.randbelow(2_000_001) / 1_000_000 - 1.0) * offset_range_m
        dy = (secrets.randbelow(2_000_001) / 1_000_000 - 1.0) * offset_range_m
    else:
        pid = pid or new_participant_id(rng)
        salt = rng.bytes(16)
        dx, dy = (rng.uniform(-offset_range_m, offset_range_m, size=2)).tolist()
    if pid in registry:
        raise DuplicateParticipant(pid)
    keypair = generate_keypair(key_seed)
    p = Participant(participant_id=pid, public_key=keypair.public_key.hex(), contact_salt=salt.hex(),
                    gps_offset=(round(dx, 3), round(dy, 3)), enrollment_date=enrollment_date,
                    visit_dates=list(visit_dates or [enrollment_date]), phone_model=phone_model,
                    tz_offset_min=tz_offset_min)
    registry.add(p)
    save_private_key(layout, pid, keypair)
    return p, keypair


def write_meta(raw_path: Path, meta: dict) -> None:
    path = Path(str(raw_path)[: -len(FILE_EXT)] + META_SUFFIX)
    atomic_write(path, (json.dumps(meta, sort_keys=True) + "\n").encode())


def load_metadata(layout: StudyLayout) -> list[dict]:
    """Upload metadata sidecars; never touches encrypted payloads."""
    out = []
    for pid in layout.participants():
        base = layout.raw / pid
        for kdir in sorted(p for p in base.iterdir() if p.is_dir()):
            for f in sorted(kdir.glob("*" + META_SUFFIX)):
                m = json.loads(f.read_text())
                m.setdefault("participant", pid)
                m.setdefault("kind", kdir.name)
                out.append(m)
    return out
