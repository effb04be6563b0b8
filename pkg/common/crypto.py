"""
Cryptography module for DrowsyWatch
Master key derivation, keyset wrapping and AES-256-GCM helpers
"""
import os
import secrets
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.backends import default_backend
from cryptography.hazmat.primitives import hashes, hmac
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.kdf.pbkdf2 import PBKDF2HMAC

from common.errors import AuthError, WeakParams
from common.logger import get_logger

logger = get_logger('CryptoManager')

KEY_LEN = 32            # 256 bits
SALT_LEN = 16           # 128 bits
NONCE_LEN = 12          # 96 bits, GCM
TAG_LEN = 16
KEYSET_ID_LEN = 16

MIN_KDF_ITERATIONS = 1000
KEYSET_WRAP_VERSION = 1


@dataclass(frozen=True)
class KdfParams:
    """PBKDF2-HMAC-SHA256 cost"""
    iterations: int = 200000


class MasterKey:
    """
    256-bit key derived from a passphrase.

    Only ever held in memory; release() overwrites the buffer.
    """

    def __init__(self, material: bytes):
        if len(material) != KEY_LEN:
            raise ValueError("Master key must be 32 bytes")
        self._material = bytearray(material)

    @property
    def material(self) -> bytes:
        if not any(self._material):
            raise ValueError("Master key has been released")
        return bytes(self._material)

    def release(self):
        """Zeroize the in-memory key"""
        for i in range(len(self._material)):
            self._material[i] = 0

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.release()

    def __repr__(self):
        return 'MasterKey(<redacted>)'


@dataclass(frozen=True)
class Keyset:
    """Working keys; the plaintext form only exists in memory"""
    keyset_id: bytes
    key_tag_key: bytes
    value_key: bytes

    def __repr__(self):
        return f"Keyset(keyset_id={self.keyset_id.hex()})"


def derive_master_key(passphrase: str, salt: bytes, params: KdfParams) -> MasterKey:
    """
    Derive the master key from a passphrase using PBKDF2

    Args:
        passphrase: User secret
        salt: 16 random bytes stored next to the wrapped keyset
        params: KDF cost

    Returns:
        MasterKey
    """
    if params.iterations < MIN_KDF_ITERATIONS:
        raise WeakParams(
            f"KDF iterations {params.iterations} below minimum {MIN_KDF_ITERATIONS}"
        )
    if len(salt) != SALT_LEN:
        raise ValueError(f"Salt must be {SALT_LEN} bytes")

    kdf = PBKDF2HMAC(
        algorithm=hashes.SHA256(),
        length=KEY_LEN,
        salt=salt,
        iterations=params.iterations,
        backend=default_backend()
    )

    return MasterKey(kdf.derive(passphrase.encode('utf-8')))


def new_salt() -> bytes:
    return secrets.token_bytes(SALT_LEN)


def aead_encrypt(key: bytes, plaintext: bytes, aad: bytes = b'') -> tuple:
    """
    Encrypt data using AES-256-GCM

    Args:
        key: 32-byte key
        plaintext: Data to encrypt
        aad: Associated data bound into the tag

    Returns:
        Tuple of (nonce, ciphertext with 16-byte tag appended)
    """
    nonce = secrets.token_bytes(NONCE_LEN)

    cipher = Cipher(
        algorithms.AES(key),
        modes.GCM(nonce),
        backend=default_backend()
    )
    encryptor = cipher.encryptor()
    encryptor.authenticate_additional_data(aad)
    ciphertext = encryptor.update(plaintext) + encryptor.finalize()

    return nonce, ciphertext + encryptor.tag


def aead_decrypt(key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes = b'') -> bytes:
    """
    Decrypt data using AES-256-GCM

    Raises:
        AuthError: tag mismatch (wrong key, tampered data or AAD)
    """
    if len(nonce) != NONCE_LEN or len(ciphertext) < TAG_LEN:
        raise AuthError(detail='malformed ciphertext')

    body, tag = ciphertext[:-TAG_LEN], ciphertext[-TAG_LEN:]
    cipher = Cipher(
        algorithms.AES(key),
        modes.GCM(nonce, tag),
        backend=default_backend()
    )
    decryptor = cipher.decryptor()
    decryptor.authenticate_additional_data(aad)

    try:
        return decryptor.update(body) + decryptor.finalize()
    except InvalidTag:
        raise AuthError() from None


def keyed_tag(key: bytes, data: bytes) -> bytes:
    """Deterministic keyed pseudorandom transform (HMAC-SHA256)"""
    mac = hmac.HMAC(key, hashes.SHA256(), backend=default_backend())
    mac.update(data)
    return mac.finalize()


def derive_subkey(key: bytes, salt: bytes, info: bytes) -> bytes:
    """HKDF-SHA256 subkey bound to a salt and a purpose label"""
    hkdf = HKDF(
        algorithm=hashes.SHA256(),
        length=KEY_LEN,
        salt=salt,
        info=info,
        backend=default_backend()
    )
    return hkdf.derive(key)


def hash_data(data: bytes) -> bytes:
    """
    Calculate SHA-256 hash of data

    Args:
        data: Data to hash

    Returns:
        32-byte digest
    """
    digest = hashes.Hash(hashes.SHA256(), backend=default_backend())
    digest.update(data)
    return digest.finalize()


def create_keyset(master: MasterKey) -> bytes:
    """
    Generate a fresh keyset and wrap it under the master key

    Wrapped layout: version (1) | keyset_id (16) | nonce (12) | ciphertext+tag

    Returns:
        Wrapped keyset blob
    """
    keyset_id = os.urandom(KEYSET_ID_LEN)
    material = secrets.token_bytes(KEY_LEN) + secrets.token_bytes(KEY_LEN)
    header = bytes([KEYSET_WRAP_VERSION]) + keyset_id

    nonce, ciphertext = aead_encrypt(master.material, material, aad=header)
    logger.info(f"Created keyset {keyset_id.hex()}")

    return header + nonce + ciphertext


def open_keyset(master: MasterKey, wrapped: bytes) -> Keyset:
    """
    Unwrap a keyset

    Raises:
        AuthError: wrong master key or tampered blob
    """
    header_len = 1 + KEYSET_ID_LEN
    if len(wrapped) < header_len + NONCE_LEN + TAG_LEN:
        raise AuthError(detail='wrapped keyset truncated')
    if wrapped[0] != KEYSET_WRAP_VERSION:
        raise AuthError(detail=f"unsupported keyset version {wrapped[0]}")

    header = wrapped[:header_len]
    nonce = wrapped[header_len:header_len + NONCE_LEN]
    try:
        material = aead_decrypt(master.material, nonce, wrapped[header_len + NONCE_LEN:], aad=header)
    except AuthError:
        raise AuthError(detail='cannot unwrap keyset: wrong passphrase or tampered keyset') from None

    if len(material) != 2 * KEY_LEN:
        raise AuthError(detail='keyset material has wrong length')

    return Keyset(
        keyset_id=header[1:],
        key_tag_key=material[:KEY_LEN],
        value_key=material[KEY_LEN:]
    )
