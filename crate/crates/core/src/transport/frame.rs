//! Frame layout (all integers little-endian):
//!
//! ```text
//! "C3SL" | version u16 | msg_type u8 | payload_len u32 | payload
//! ```

use super::ProtocolError;

pub const MAGIC: [u8; 4] = *b"C3SL";
pub const PROTOCOL_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 11;
pub const DEFAULT_MAX_PAYLOAD: usize = 64 << 20;
pub const MAX_FRAME_ENV: &str = "C3SL_MAX_FRAME";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Config = 1,
    ConfigAck = 2,
    Features = 3,
    Gradients = 4,
    EpochEnd = 5,
    Shutdown = 6,
    Error = 7,
}

impl MsgType {
    pub const ALL: [MsgType; 7] = [
        MsgType::Config,
        MsgType::ConfigAck,
        MsgType::Features,
        MsgType::Gradients,
        MsgType::EpochEnd,
        MsgType::Shutdown,
        MsgType::Error,
    ];
}

impl TryFrom<u8> for MsgType {
    type Error = ProtocolError;

    fn try_from(v: u8) -> Result<Self, ProtocolError> {
        MsgType::ALL
            .into_iter()
            .find(|t| *t as u8 == v)
            .ok_or(ProtocolError::UnknownType(v))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub version: u16,
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Self { version: PROTOCOL_VERSION, msg_type, payload }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum Deframed {
    /// A complete frame and the number of bytes it occupied.
    Frame(Frame, usize),
    /// The buffer holds a valid prefix; at least this many more bytes are needed.
    NeedMore(usize),
}

/// Frame validation settings for one endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameCodec {
    pub version: u16,
    pub max_payload: usize,
}

impl Default for FrameCodec {
    fn default() -> Self {
        Self { version: PROTOCOL_VERSION, max_payload: DEFAULT_MAX_PAYLOAD }
    }
}

impl FrameCodec {
    /// Default codec with the payload cap taken from `C3SL_MAX_FRAME` when set.
    pub fn from_env() -> Result<Self, ProtocolError> {
        let mut codec = Self::default();
        if let Ok(v) = std::env::var(MAX_FRAME_ENV) {
            codec.max_payload = v
                .trim()
                .parse()
                .map_err(|_| ProtocolError::Malformed(format!("{MAX_FRAME_ENV}={v:?} is not a byte count")))?;
        }
        Ok(codec)
    }

    pub fn frame(&self, msg_type: MsgType, payload: Vec<u8>) -> Frame {
        Frame { version: self.version, msg_type, payload }
    }

    /// Parses one frame from the front of `buf`.
    ///
    /// Frames of another version are rejected, except CONFIG and ERROR,
    /// which are passed up so the session can answer or report a mismatch.
    pub fn decode(&self, buf: &[u8]) -> Result<Deframed, ProtocolError> {
        let magic_len = buf.len().min(4);
        if buf[..magic_len] != MAGIC[..magic_len] {
            let mut found = [0u8; 4];
            found[..magic_len].copy_from_slice(&buf[..magic_len]);
            return Err(ProtocolError::BadMagic(found));
        }
        if buf.len() < HEADER_LEN {
            return Ok(Deframed::NeedMore(HEADER_LEN - buf.len()));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        let msg_type = MsgType::try_from(buf[6])?;
        let len = u32::from_le_bytes(buf[7..11].try_into().unwrap()) as usize;
        if len > self.max_payload {
            return Err(ProtocolError::Oversize { len, max: self.max_payload });
        }
        if version != self.version && !matches!(msg_type, MsgType::Config | MsgType::Error) {
            return Err(ProtocolError::VersionMismatch { expected: self.version, found: version });
        }
        let total = HEADER_LEN + len;
        if buf.len() < total {
            return Ok(Deframed::NeedMore(total - buf.len()));
        }
        let frame = Frame { version, msg_type, payload: buf[HEADER_LEN..total].to_vec() };
        Ok(Deframed::Frame(frame, total))
    }
}
