"""
Secure Store - encrypted record files and the encrypted preference store

Record file layout (big-endian):
    header: magic "DDSR" (4) | version (1) | keyset_id (16) | salt (16)
    chunk:  seq_no (4) | nonce (12) | ct_len (4) | ct
The last chunk is an empty-plaintext sentinel. Chunks are sealed under a
per-file key HKDF(value_key, salt) with AAD sha256(header) | seq_no | final flag.

Preference store directory:
    keyset.json  KDF salt/iterations and the wrapped keyset
    prefs.ddsr   record file of (key_tag_len, key_tag, nonce, ct) entries
"""
import json
import os
import struct
import tempfile
from typing import Any, Dict, List, Optional, Tuple

from filelock import FileLock

from common.crypto import (
    KEYSET_ID_LEN, NONCE_LEN, SALT_LEN, TAG_LEN, KdfParams, Keyset,
    aead_decrypt, aead_encrypt, create_keyset, derive_master_key, derive_subkey,
    hash_data, keyed_tag, new_salt, open_keyset
)
from common.errors import AuthError, NotFound, StoreIoError
from common.logger import get_logger

logger = get_logger('SecureStore')

RECORD_MAGIC = b'DDSR'
RECORD_VERSION = 1
PREF_FORMAT_VERSION = 1

_HEADER = struct.Struct('>4sB16s16s')
_CHUNK = struct.Struct('>I12sI')
_SEQ = struct.Struct('>I')
_LEN16 = struct.Struct('>H')

_DATA_FLAG = b'\x00'
_FINAL_FLAG = b'\x01'
_FILE_KEY_INFO = b'drowsywatch record file v1'

KEYSET_FILE = 'keyset.json'
PREFS_FILE = 'prefs.ddsr'
LOCK_FILE = '.lock'


# Record files

def _chunk_aad(header_hash: bytes, seq_no: int, flag: bytes) -> bytes:
    return header_hash + _SEQ.pack(seq_no) + flag


def seal_records(keyset: Keyset, records: List[bytes]) -> bytes:
    """
    Encrypt records into the record-file byte layout

    Args:
        keyset: Open keyset (value_key seeds the per-file key)
        records: Plaintext records, in order

    Returns:
        Complete file contents
    """
    salt = new_salt()
    header = _HEADER.pack(RECORD_MAGIC, RECORD_VERSION, keyset.keyset_id, salt)
    file_key = derive_subkey(keyset.value_key, salt, _FILE_KEY_INFO)
    header_hash = hash_data(header)

    out = [header]
    for seq_no, record in enumerate(records):
        nonce, ct = aead_encrypt(file_key, bytes(record), _chunk_aad(header_hash, seq_no, _DATA_FLAG))
        out.append(_CHUNK.pack(seq_no, nonce, len(ct)) + ct)

    seq_no = len(records)
    nonce, ct = aead_encrypt(file_key, b'', _chunk_aad(header_hash, seq_no, _FINAL_FLAG))
    out.append(_CHUNK.pack(seq_no, nonce, len(ct)) + ct)

    return b''.join(out)


def open_records(keyset: Keyset, data: bytes) -> List[bytes]:
    """
    Verify and decrypt record-file contents

    Raises:
        AuthError: header mismatch, or the first chunk (seq_no) that fails
            verification, is out of place or is missing
    """
    if len(data) < _HEADER.size:
        raise AuthError(detail='truncated header')
    magic, version, keyset_id, salt = _HEADER.unpack_from(data, 0)
    if magic != RECORD_MAGIC:
        raise AuthError(detail='not a record file')
    if version != RECORD_VERSION:
        raise AuthError(detail=f"unsupported record file version {version}")
    if keyset_id != keyset.keyset_id:
        raise AuthError(detail='record file belongs to another keyset')

    header_hash = hash_data(data[:_HEADER.size])
    file_key = derive_subkey(keyset.value_key, salt, _FILE_KEY_INFO)

    records = []
    pos = _HEADER.size
    expected = 0

    while True:
        if len(data) - pos < _CHUNK.size:
            raise AuthError(expected, 'truncated: final chunk missing')
        seq_no, nonce, ct_len = _CHUNK.unpack_from(data, pos)
        pos += _CHUNK.size
        if seq_no != expected:
            raise AuthError(expected, f"chunk out of place (found seq_no {seq_no})")
        if ct_len < TAG_LEN or ct_len > len(data) - pos:
            raise AuthError(expected, 'truncated chunk')
        ct = data[pos:pos + ct_len]
        pos += ct_len

        try:
            records.append(aead_decrypt(file_key, nonce, ct, _chunk_aad(header_hash, seq_no, _DATA_FLAG)))
            expected += 1
            continue
        except AuthError:
            if ct_len != TAG_LEN:
                raise AuthError(expected) from None

        try:
            aead_decrypt(file_key, nonce, ct, _chunk_aad(header_hash, seq_no, _FINAL_FLAG))
        except AuthError:
            raise AuthError(expected) from None

        if pos != len(data):
            raise AuthError(expected + 1, 'data after final chunk')
        return records


def _atomic_write(path: str, data: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_records(path: str, keyset: Keyset, records: List[bytes]):
    """
    Write an encrypted record file (atomically replaces path)

    Raises:
        StoreIoError: the file could not be written
    """
    data = seal_records(keyset, records)
    try:
        _atomic_write(path, data)
    except OSError as e:
        raise StoreIoError(f"Cannot write {path}: {e}") from e
    logger.info(f"Wrote {len(records)} records to {path}")


def read_records(path: str, keyset: Keyset) -> List[bytes]:
    """
    Read and verify an encrypted record file

    Raises:
        StoreIoError: the file could not be read
        AuthError: tampering, truncation or wrong keyset
    """
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise StoreIoError(f"Cannot read {path}: {e}") from e
    return open_records(keyset, data)


# Preference store

def _pack_entry(key_tag: bytes, nonce: bytes, ct: bytes) -> bytes:
    return _LEN16.pack(len(key_tag)) + key_tag + nonce + ct


def _unpack_entry(record: bytes) -> Tuple[bytes, bytes, bytes]:
    if len(record) < _LEN16.size:
        raise AuthError(detail='malformed preference entry')
    (tag_len,) = _LEN16.unpack_from(record, 0)
    start = _LEN16.size
    if len(record) < start + tag_len + NONCE_LEN + TAG_LEN:
        raise AuthError(detail='malformed preference entry')
    tag = record[start:start + tag_len]
    nonce = record[start + tag_len:start + tag_len + NONCE_LEN]
    return tag, nonce, record[start + tag_len + NONCE_LEN:]


class SecureStore:
    """
    Encrypted key-value preferences

    Names are stored only as deterministic keyed tags; values (with the name
    embedded for export) are AES-256-GCM sealed under fresh random nonces.
    One writer at a time holds the directory lock.
    """

    def __init__(self, path: str, keyset: Keyset):
        self.path = path
        self.keyset = keyset
        self.prefs_path = os.path.join(path, PREFS_FILE)
        self._lock = FileLock(os.path.join(path, LOCK_FILE))
        self._entries: Dict[bytes, Tuple[bytes, bytes]] = {}
        self._load()

    @staticmethod
    def exists(path: str) -> bool:
        return os.path.exists(os.path.join(path, KEYSET_FILE))

    @classmethod
    def create(cls, path: str, passphrase: str, params: Optional[KdfParams] = None) -> 'SecureStore':
        """
        Initialize a new store directory

        Raises:
            StoreIoError: a store already exists at path, or it cannot be written
            WeakParams: KDF cost below the minimum
        """
        params = params or KdfParams()
        if cls.exists(path):
            raise StoreIoError(f"A store already exists at {path}")

        salt = new_salt()
        with derive_master_key(passphrase, salt, params) as master:
            wrapped = create_keyset(master)
            keyset = open_keyset(master, wrapped)

        descriptor = {
            'version': 1,
            'kdf': 'pbkdf2-hmac-sha256',
            'kdf_iterations': params.iterations,
            'salt': salt.hex(),
            'keyset_id': keyset.keyset_id.hex(),
            'wrapped_keyset': wrapped.hex(),
        }
        try:
            os.makedirs(path, exist_ok=True)
            _atomic_write(os.path.join(path, KEYSET_FILE), json.dumps(descriptor, indent=2).encode('utf-8'))
        except OSError as e:
            raise StoreIoError(f"Cannot create store at {path}: {e}") from e

        store = cls(path, keyset)
        with store._lock:
            store._save()
        logger.info(f"Created store {path} (keyset {keyset.keyset_id.hex()})")
        return store

    @classmethod
    def open(cls, path: str, passphrase: str) -> 'SecureStore':
        """
        Open an existing store

        Raises:
            StoreIoError: no readable store at path
            AuthError: wrong passphrase or tampered files
        """
        descriptor = cls.read_descriptor(path)
        try:
            salt = bytes.fromhex(descriptor['salt'])
            params = KdfParams(iterations=int(descriptor['kdf_iterations']))
            wrapped = bytes.fromhex(descriptor['wrapped_keyset'])
        except (KeyError, TypeError, ValueError):
            raise AuthError(detail='keyset file malformed') from None
        if len(salt) != SALT_LEN:
            raise AuthError(detail='keyset file malformed')

        with derive_master_key(passphrase, salt, params) as master:
            keyset = open_keyset(master, wrapped)

        logger.info(f"Opened store {path}")
        return cls(path, keyset)

    @classmethod
    def open_or_create(cls, path: str, passphrase: str, params: Optional[KdfParams] = None) -> 'SecureStore':
        if cls.exists(path):
            return cls.open(path, passphrase)
        return cls.create(path, passphrase, params)

    @staticmethod
    def read_descriptor(path: str) -> Dict[str, Any]:
        """Public keyset.json contents (no secrets)"""
        keyset_path = os.path.join(path, KEYSET_FILE)
        try:
            with open(keyset_path, 'r', encoding='utf-8') as f:
                descriptor = json.load(f)
        except OSError as e:
            raise StoreIoError(f"Cannot read store {path}: {e}") from e
        except ValueError:
            raise AuthError(detail='keyset file malformed') from None
        if not isinstance(descriptor, dict):
            raise AuthError(detail='keyset file malformed')
        return descriptor

    def key_tag(self, name: str) -> bytes:
        return keyed_tag(self.keyset.key_tag_key, name.encode('utf-8'))

    def put(self, name: str, value: bytes):
        """Encrypt and persist one preference (replaces any previous value)"""
        name_bytes = name.encode('utf-8')
        if len(name_bytes) > 0xFFFF:
            raise ValueError("Preference name too long")
        tag = self.key_tag(name)
        plaintext = _LEN16.pack(len(name_bytes)) + name_bytes + bytes(value)
        nonce, ct = aead_encrypt(self.keyset.value_key, plaintext, self._aad(tag))

        with self._lock:
            self._load()
            self._entries[tag] = (nonce, ct)
            self._save()
        logger.debug(f"Stored preference ({len(self._entries)} entries)")

    def get(self, name: str) -> bytes:
        """
        Decrypt one preference

        Raises:
            NotFound: name not present
            AuthError: entry tampered
        """
        tag = self.key_tag(name)
        if tag not in self._entries:
            raise NotFound(name)
        stored_name, value = self._decrypt(tag)
        if stored_name != name:
            raise AuthError(detail='preference entry does not match its tag')
        return value

    def items(self) -> List[Tuple[str, bytes]]:
        """All decrypted preferences sorted by name"""
        return sorted(self._decrypt(tag) for tag in self._entries)

    def put_json(self, name: str, value: Any):
        self.put(name, json.dumps(value, sort_keys=True, separators=(',', ':')).encode('utf-8'))

    def get_json(self, name: str) -> Any:
        return json.loads(self.get(name).decode('utf-8'))

    def __len__(self) -> int:
        return len(self._entries)

    def _aad(self, tag: bytes) -> bytes:
        return bytes([PREF_FORMAT_VERSION]) + tag

    def _decrypt(self, tag: bytes) -> Tuple[str, bytes]:
        nonce, ct = self._entries[tag]
        plaintext = aead_decrypt(self.keyset.value_key, nonce, ct, self._aad(tag))
        (name_len,) = _LEN16.unpack_from(plaintext, 0)
        name = plaintext[_LEN16.size:_LEN16.size + name_len].decode('utf-8')
        return name, plaintext[_LEN16.size + name_len:]

    def _load(self):
        if not os.path.exists(self.prefs_path):
            self._entries = {}
            return
        entries = {}
        for record in read_records(self.prefs_path, self.keyset):
            tag, nonce, ct = _unpack_entry(record)
            entries[tag] = (nonce, ct)
        self._entries = entries

    def _save(self):
        records = [_pack_entry(tag, *self._entries[tag]) for tag in sorted(self._entries)]
        write_records(self.prefs_path, self.keyset, records)
