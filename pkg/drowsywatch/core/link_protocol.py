"""
Link Protocol - framed, consent-gated watch <-> phone messaging

Frame layout (big-endian):
    magic "DDSW" (4) | version (1) | msg_type (1) | length (4) | payload | crc32 (4)
The CRC covers msg_type | length | payload. Encoded size is 14 + len(payload).

The watch opens with HELLO, then CONSENT listing the (sensor kind, direction)
scopes the user granted. Once ESTABLISHED it streams SAMPLE frames; the phone
scores them and may push ALERT frames back. Every accepted message is ACKed.
"""
import json
import struct
import zlib
from collections import deque
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Callable, Deque, FrozenSet, Iterable, List, Optional, Tuple, Union

from common.crypto import NONCE_LEN, aead_decrypt, aead_encrypt
from common.errors import (
    AuthError, BadCrc, BadMagic, BadVersion, ClosedSession, ConsentError,
    DrowsyWatchError, FrameError, Oversize, ParseError, ProtocolError, UnknownMessageType
)
from common.logger import get_logger
from drowsywatch.core.sensor_model import (
    SensorKind, SensorSample, parse_json_line, sample_from_record, to_json_line
)

logger = get_logger('LinkProtocol')

MAGIC = b'DDSW'
VERSION = 1
MAX_PAYLOAD = (1 << 24) - 1

_HEADER = struct.Struct('>4sBBI')
_CRC = struct.Struct('>I')
FRAME_OVERHEAD = _HEADER.size + _CRC.size


class MessageType(IntEnum):
    HELLO = 1
    CONSENT = 2
    SAMPLE = 3
    ALERT = 4
    ACK = 5
    ERROR = 6


class Direction(IntEnum):
    READ = 1
    WRITE = 2


class ErrorCode(IntEnum):
    PROTOCOL = 1
    CONSENT = 2
    FRAME = 3
    PAYLOAD = 4


class SessionState(Enum):
    AWAITING_HELLO = 'AWAITING_HELLO'
    AWAITING_CONSENT = 'AWAITING_CONSENT'
    ESTABLISHED = 'ESTABLISHED'
    CLOSED = 'CLOSED'


@dataclass(frozen=True)
class Frame:
    msg_type: MessageType
    payload: bytes = b''

    @property
    def encoded_size(self) -> int:
        return FRAME_OVERHEAD + len(self.payload)


@dataclass(frozen=True)
class NeedMoreData:
    """Decoder needs at least `missing` more bytes"""
    missing: int


# Codec

def encode_frame(msg_type: MessageType, payload: bytes = b'') -> bytes:
    """
    Encode one frame

    Raises:
        Oversize: payload of 2**24 bytes or more
    """
    if len(payload) > MAX_PAYLOAD:
        raise Oversize(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    header = _HEADER.pack(MAGIC, VERSION, int(msg_type), len(payload))
    crc = zlib.crc32(header[4 + 1:] + payload)
    return header + payload + _CRC.pack(crc)


def decode_frame(data: bytes) -> Union[Frame, NeedMoreData]:
    """
    Decode the frame at the start of data

    Returns:
        The Frame (consumed size is frame.encoded_size) or NeedMoreData

    Raises:
        BadMagic, BadVersion, Oversize, BadCrc, UnknownMessageType
    """
    data = bytes(data)
    prefix = data[:len(MAGIC)]
    if prefix != MAGIC[:len(prefix)]:
        raise BadMagic(f"bad magic {prefix!r}")
    if len(data) <= len(MAGIC):
        return NeedMoreData(len(MAGIC) + 1 - len(data))
    if data[4] != VERSION:
        raise BadVersion(f"unsupported version {data[4]}")
    if len(data) < _HEADER.size:
        return NeedMoreData(_HEADER.size - len(data))

    _, _, msg_type, length = _HEADER.unpack_from(data, 0)
    if length > MAX_PAYLOAD:
        raise Oversize(f"declared payload length {length} exceeds {MAX_PAYLOAD}")

    total = FRAME_OVERHEAD + length
    if len(data) < total:
        return NeedMoreData(total - len(data))

    payload = data[_HEADER.size:_HEADER.size + length]
    (crc,) = _CRC.unpack_from(data, _HEADER.size + length)
    if zlib.crc32(data[5:_HEADER.size] + payload) != crc:
        raise BadCrc(f"crc mismatch on {length}-byte frame")

    try:
        kind = MessageType(msg_type)
    except ValueError:
        raise UnknownMessageType(f"unknown message type {msg_type}") from None
    return Frame(kind, payload)


class FrameDecoder:
    """Incremental decoder over a byte stream; no resynchronization after an error"""

    def __init__(self):
        self._buffer = bytearray()
        self.failed = False

    def feed(self, data: bytes) -> List[Frame]:
        if self.failed:
            raise FrameError("decoder stopped after a previous frame error")
        self._buffer.extend(data)
        frames = []
        while self._buffer:
            try:
                result = decode_frame(self._buffer)
            except FrameError:
                self.failed = True
                raise
            if isinstance(result, NeedMoreData):
                break
            frames.append(result)
            del self._buffer[:result.encoded_size]
        return frames


# Payloads

@dataclass(frozen=True)
class Hello:
    device_id: str
    protocol_version: int = VERSION

    def encode(self) -> bytes:
        return json.dumps({'device_id': self.device_id, 'version': self.protocol_version},
                          separators=(',', ':')).encode('utf-8')

    @classmethod
    def decode(cls, payload: bytes) -> 'Hello':
        try:
            record = parse_json_line(payload)
            return cls(device_id=str(record['device_id']), protocol_version=int(record['version']))
        except (ValueError, KeyError, TypeError) as e:
            raise ValueError(f"malformed HELLO: {e}") from None


@dataclass(frozen=True)
class ConsentGrant:
    """Scopes the user explicitly granted; immutable"""
    scopes: FrozenSet[Tuple[SensorKind, Direction]]

    @classmethod
    def of(cls, kinds: Iterable[SensorKind], direction: Direction = Direction.READ) -> 'ConsentGrant':
        return cls(frozenset((kind, direction) for kind in kinds))

    def allows(self, kind: SensorKind, direction: Direction = Direction.READ) -> bool:
        return (kind, direction) in self.scopes

    def encode(self) -> bytes:
        pairs = sorted((kind.code, int(direction)) for kind, direction in self.scopes)
        if len(pairs) > 255:
            raise ValueError("too many consent scopes")
        return bytes([len(pairs)]) + b''.join(bytes(pair) for pair in pairs)

    @classmethod
    def decode(cls, payload: bytes) -> 'ConsentGrant':
        if not payload or len(payload) != 1 + 2 * payload[0]:
            raise ValueError("malformed CONSENT: length does not match count")
        scopes = set()
        for i in range(payload[0]):
            kind_code, direction = payload[1 + 2 * i], payload[2 + 2 * i]
            scopes.add((SensorKind.from_code(kind_code), Direction(direction)))
        return cls(frozenset(scopes))


def encode_error(code: ErrorCode, message: str) -> bytes:
    return bytes([int(code)]) + message.encode('utf-8')


def decode_error(payload: bytes) -> Tuple[int, str]:
    if not payload:
        return int(ErrorCode.PROTOCOL), ''
    return payload[0], payload[1:].decode('utf-8', errors='replace')


def encode_sample(sample: SensorSample) -> bytes:
    return to_json_line(sample).encode('utf-8')


def decode_sample(payload: bytes) -> SensorSample:
    try:
        return sample_from_record(parse_json_line(payload))
    except ParseError as e:
        raise ValueError(f"malformed SAMPLE: {e.reason}") from None


# Transports

class LoopbackTransport:
    """One end of an in-process byte pipe"""

    def __init__(self, inbox: Deque[bytes], outbox: Deque[bytes]):
        self._inbox = inbox
        self._outbox = outbox

    @classmethod
    def pair(cls) -> Tuple['LoopbackTransport', 'LoopbackTransport']:
        a_to_b: Deque[bytes] = deque()
        b_to_a: Deque[bytes] = deque()
        return cls(b_to_a, a_to_b), cls(a_to_b, b_to_a)

    def send(self, data: bytes):
        self._outbox.append(bytes(data))

    def recv(self) -> bytes:
        chunks = []
        while self._inbox:
            chunks.append(self._inbox.popleft())
        return b''.join(chunks)


class AeadTransport:
    """
    AES-256-GCM record layer over another transport

    Each send() becomes one record: length (4) | nonce | ciphertext. The AAD
    binds the sender role and a per-direction sequence number, so replayed,
    dropped or reflected records fail authentication.
    """

    _LEN = struct.Struct('>I')

    def __init__(self, inner, key: bytes, role: bytes, peer_role: bytes):
        self.inner = inner
        self.key = key
        self.role = role
        self.peer_role = peer_role
        self._send_seq = 0
        self._recv_seq = 0
        self._buffer = bytearray()

    def send(self, data: bytes):
        aad = self.role + self._LEN.pack(self._send_seq)
        nonce, ct = aead_encrypt(self.key, data, aad)
        self._send_seq += 1
        self.inner.send(self._LEN.pack(len(nonce) + len(ct)) + nonce + ct)

    def recv(self) -> bytes:
        self._buffer.extend(self.inner.recv())
        out = []
        while len(self._buffer) >= self._LEN.size:
            (size,) = self._LEN.unpack_from(self._buffer, 0)
            if len(self._buffer) < self._LEN.size + size:
                break
            record = bytes(self._buffer[self._LEN.size:self._LEN.size + size])
            del self._buffer[:self._LEN.size + size]
            aad = self.peer_role + self._LEN.pack(self._recv_seq)
            out.append(aead_decrypt(self.key, record[:NONCE_LEN], record[NONCE_LEN:], aad))
            self._recv_seq += 1
        return b''.join(out)


# Sessions

class _Endpoint:
    """Shared frame plumbing for both roles"""

    def __init__(self, transport, name: str):
        self.transport = transport
        self.name = name
        self.state = SessionState.AWAITING_HELLO
        self._decoder = FrameDecoder()

    def _send(self, msg_type: MessageType, payload: bytes = b''):
        self.transport.send(encode_frame(msg_type, payload))

    def _receive(self) -> List[Frame]:
        return self._decoder.feed(self.transport.recv())

    def _close(self):
        if self.state is not SessionState.CLOSED:
            logger.info(f"{self.name} session closed")
        self.state = SessionState.CLOSED


class PhoneListener(_Endpoint):
    """
    Receiving side: enforces message order and consent, hands samples on

    Args:
        on_sample: Called with every delivered SensorSample
        key: Optional pre-shared 32-byte key; wraps the link in AeadTransport
    """

    def __init__(self, on_sample: Optional[Callable[[SensorSample], None]] = None, key: Optional[bytes] = None):
        super().__init__(None, 'phone')
        self.on_sample = on_sample
        self.key = key
        self.hello: Optional[Hello] = None
        self.consent: Optional[ConsentGrant] = None
        self.delivered: List[SensorKind] = []
        self.refused = 0

    def connect(self):
        """Open a fresh link; returns the watch's end of the transport"""
        phone_end, watch_end = LoopbackTransport.pair()
        if self.key is not None:
            phone_end = AeadTransport(phone_end, self.key, b'P', b'W')
            watch_end = AeadTransport(watch_end, self.key, b'W', b'P')
        self.transport = phone_end
        self._decoder = FrameDecoder()
        self.state = SessionState.AWAITING_HELLO
        self.hello = None
        self.consent = None
        return watch_end

    def pump(self) -> List[SensorSample]:
        """
        Handle everything the watch has sent

        Returns:
            Samples delivered by this call

        Raises:
            ClosedSession: the session is already closed
            ProtocolError: message out of order or malformed (session closed)
            FrameError: undecodable frame (session closed)
        """
        if self.transport is None:
            raise ClosedSession("phone is not connected")
        if self.state is SessionState.CLOSED:
            raise ClosedSession("phone session is closed")

        try:
            frames = self._receive()
        except (FrameError, AuthError) as e:
            self._fail(ErrorCode.FRAME, str(e))
            raise

        delivered = []
        for frame in frames:
            sample = self._handle(frame)
            if sample is not None:
                delivered.append(sample)
            if self.state is SessionState.CLOSED:
                break
        return delivered

    def send_alert(self, alert: dict):
        """Push an ALERT (vibration request) to the watch"""
        if self.state is SessionState.CLOSED:
            raise ClosedSession("phone session is closed")
        if self.state is not SessionState.ESTABLISHED:
            raise ProtocolError("ALERT before the session is established")
        self._send(MessageType.ALERT, json.dumps(alert, separators=(',', ':')).encode('utf-8'))

    def _fail(self, code: ErrorCode, message: str):
        logger.warning(f"Link error ({code.name.lower()}): {message}")
        self._send(MessageType.ERROR, encode_error(code, message))
        self._close()

    def _violation(self, message: str):
        self._fail(ErrorCode.PROTOCOL, message)
        raise ProtocolError(message)

    def _handle(self, frame: Frame) -> Optional[SensorSample]:
        kind = frame.msg_type

        if kind is MessageType.ERROR:
            code, message = decode_error(frame.payload)
            logger.warning(f"Watch reported error {code}: {message}")
            self._close()
            return None

        if kind is MessageType.HELLO:
            if self.state is not SessionState.AWAITING_HELLO:
                self._violation(f"HELLO in state {self.state.value}")
            try:
                self.hello = Hello.decode(frame.payload)
            except ValueError as e:
                self._fail(ErrorCode.PAYLOAD, str(e))
                raise ProtocolError(str(e)) from None
            self.state = SessionState.AWAITING_CONSENT
            self._send(MessageType.ACK)
            return None

        if kind is MessageType.CONSENT:
            if self.state is not SessionState.AWAITING_CONSENT:
                self._violation(f"CONSENT in state {self.state.value}")
            try:
                self.consent = ConsentGrant.decode(frame.payload)
            except ValueError as e:
                self._fail(ErrorCode.PAYLOAD, str(e))
                raise ProtocolError(str(e)) from None
            self.state = SessionState.ESTABLISHED
            logger.info(f"Link established with {self.hello.device_id}: {len(self.consent.scopes)} scope(s)")
            self._send(MessageType.ACK)
            return None

        if self.state is not SessionState.ESTABLISHED:
            self._violation(f"{kind.name} in state {self.state.value}")

        if kind is MessageType.SAMPLE:
            try:
                sample = decode_sample(frame.payload)
            except ValueError as e:
                self._fail(ErrorCode.PAYLOAD, str(e))
                raise ProtocolError(str(e)) from None
            if not self.consent.allows(sample.kind, Direction.READ):
                self.refused += 1
                logger.warning(f"Refused {sample.kind.value} sample: no READ consent")
                self._send(MessageType.ERROR, encode_error(ErrorCode.CONSENT, f"no READ consent for {sample.kind.value}"))
                return None
            self.delivered.append(sample.kind)
            self._send(MessageType.ACK)
            if self.on_sample is not None:
                self.on_sample(sample)
            return sample

        if kind is MessageType.ACK:
            return None

        self._violation(f"{kind.name} is not accepted from the watch")
        return None


class WatchLink(_Endpoint):
    """
    Sending side of an established link

    Every request is answered synchronously: the watch sends, the phone is
    pumped, and the response frames are read back.
    """

    def __init__(self, transport, pump: Callable[[], object], device_id: str = 'watch'):
        super().__init__(transport, 'watch')
        self._pump = pump
        self.device_id = device_id
        self.consent: Optional[ConsentGrant] = None
        self.vibrations: List[dict] = []

    def permits(self, kind: SensorKind) -> bool:
        return self.consent is not None and self.consent.allows(kind, Direction.READ)

    def send_hello(self, hello: Hello):
        self._request(MessageType.HELLO, hello.encode())
        self.state = SessionState.AWAITING_CONSENT

    def send_consent(self, consent: ConsentGrant):
        self._request(MessageType.CONSENT, consent.encode())
        self.consent = consent
        self.state = SessionState.ESTABLISHED

    def send_sample(self, sample: SensorSample) -> bool:
        """
        Stream one sample

        Returns:
            True once the phone ACKed it

        Raises:
            ConsentError: kind not granted (session stays open)
            ClosedSession: session already closed
            ProtocolError: the phone closed the session
        """
        self._request(MessageType.SAMPLE, encode_sample(sample))
        return True

    def poll(self) -> List[dict]:
        """Read pending phone messages; returns ALERT payloads received"""
        if self.state is SessionState.CLOSED:
            raise ClosedSession("watch session is closed")
        before = len(self.vibrations)
        self._drain(expect_reply=False)
        return self.vibrations[before:]

    def close(self):
        self._close()

    def _request(self, msg_type: MessageType, payload: bytes):
        if self.state is SessionState.CLOSED:
            raise ClosedSession("watch session is closed")
        self._send(msg_type, payload)
        try:
            self._pump()
        except DrowsyWatchError as e:
            logger.debug(f"Phone rejected {msg_type.name}: {e}")
        self._drain(expect_reply=True)

    def _drain(self, expect_reply: bool):
        replied = False
        for frame in self._receive():
            if frame.msg_type is MessageType.ALERT:
                try:
                    alert = parse_json_line(frame.payload)
                except ParseError as e:
                    message = f"malformed ALERT: {e.reason}"
                    self._send(MessageType.ERROR, encode_error(ErrorCode.PAYLOAD, message))
                    self._close()
                    raise ProtocolError(message) from None
                self.vibrations.append(alert)
                logger.info("Vibration alert received")
                self._send(MessageType.ACK)
                try:
                    self._pump()
                except DrowsyWatchError:
                    pass
            elif frame.msg_type is MessageType.ACK:
                replied = True
            elif frame.msg_type is MessageType.ERROR:
                code, message = decode_error(frame.payload)
                if code == ErrorCode.CONSENT:
                    raise ConsentError(message)
                self._close()
                raise ProtocolError(message)
        if expect_reply and not replied:
            self._close()
            raise ProtocolError("no reply from phone")


def handshake(listener: PhoneListener, hello: Hello, consent: ConsentGrant) -> WatchLink:
    """
    Connect to the listener and run HELLO / CONSENT

    Returns:
        WatchLink in ESTABLISHED state

    Raises:
        ProtocolError: the phone refused the handshake
    """
    transport = listener.connect()
    link = WatchLink(transport, listener.pump, device_id=hello.device_id)
    link.send_hello(hello)
    link.send_consent(consent)
    return link
