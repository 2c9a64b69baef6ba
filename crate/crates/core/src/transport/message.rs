//! Typed payloads. All integers and floats little-endian.
//!
//! ```text
//! CONFIG      version u16 | D u32 | R u16 | B u32 | key_seed u64 | classes u32 | digest [32]
//! CONFIG_ACK  (empty)
//! FEATURES    batch_id u64 | G u32 | group_sizes u32×G | data f32×G·D | labels u32×B
//! GRADIENTS   batch_id u64 | data f32×G·D | loss f64
//! EPOCH_END   epoch u32
//! SHUTDOWN    (empty)
//! ERROR       code u16 | UTF-8 message
//! ```
//!
//! FEATURES carries no explicit `D`: it follows from the payload length once
//! the group sizes (and hence `B`) are known.

use super::frame::{Frame, FrameCodec, MsgType, HEADER_LEN};
use super::ProtocolError;

pub const CONFIG_PAYLOAD_LEN: usize = 2 + 4 + 2 + 4 + 8 + 4 + 32;

/// Total FEATURES frame size for `groups` compressed vectors of width `dim`
/// carrying `batch` labels.
pub fn features_frame_len(groups: usize, dim: usize, batch: usize) -> usize {
    HEADER_LEN + 8 + 4 + 4 * groups + 4 * groups * dim + 4 * batch
}

pub fn gradients_frame_len(groups: usize, dim: usize) -> usize {
    HEADER_LEN + 8 + 4 * groups * dim + 8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    Version = 1,
    Digest = 2,
    Protocol = 3,
    Numeric = 4,
    Internal = 5,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<Self> {
        [Self::Version, Self::Digest, Self::Protocol, Self::Numeric, Self::Internal]
            .into_iter()
            .find(|c| *c as u16 == v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigMsg {
    pub protocol_version: u16,
    pub dim: u32,
    pub ratio: u16,
    pub batch_size: u32,
    pub key_seed: u64,
    pub num_classes: u32,
    pub digest: [u8; 32],
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturesMsg {
    pub batch_id: u64,
    pub group_sizes: Vec<u32>,
    pub data: Vec<f32>,
    pub labels: Vec<u32>,
}

impl FeaturesMsg {
    pub fn dim(&self) -> usize {
        if self.group_sizes.is_empty() {
            0
        } else {
            self.data.len() / self.group_sizes.len()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientsMsg {
    pub batch_id: u64,
    pub data: Vec<f32>,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Config(ConfigMsg),
    ConfigAck,
    Features(FeaturesMsg),
    Gradients(GradientsMsg),
    EpochEnd { epoch: u32 },
    Shutdown,
    Error { code: u16, message: String },
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: MsgType,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(ProtocolError::Malformed(format!("{:?} payload too short", self.what)));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, ProtocolError> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>, ProtocolError> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn finish(self) -> Result<(), ProtocolError> {
        if self.remaining() != 0 {
            return Err(ProtocolError::Malformed(format!("trailing bytes in {:?} payload", self.what)));
        }
        Ok(())
    }
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Config(_) => MsgType::Config,
            Message::ConfigAck => MsgType::ConfigAck,
            Message::Features(_) => MsgType::Features,
            Message::Gradients(_) => MsgType::Gradients,
            Message::EpochEnd { .. } => MsgType::EpochEnd,
            Message::Shutdown => MsgType::Shutdown,
            Message::Error { .. } => MsgType::Error,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Message::Error { code: code as u16, message: message.into() }
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            Message::Config(c) => {
                p.extend_from_slice(&c.protocol_version.to_le_bytes());
                p.extend_from_slice(&c.dim.to_le_bytes());
                p.extend_from_slice(&c.ratio.to_le_bytes());
                p.extend_from_slice(&c.batch_size.to_le_bytes());
                p.extend_from_slice(&c.key_seed.to_le_bytes());
                p.extend_from_slice(&c.num_classes.to_le_bytes());
                p.extend_from_slice(&c.digest);
            }
            Message::ConfigAck | Message::Shutdown => {}
            Message::Features(f) => {
                p.reserve(12 + 4 * (f.group_sizes.len() + f.data.len() + f.labels.len()));
                p.extend_from_slice(&f.batch_id.to_le_bytes());
                p.extend_from_slice(&(f.group_sizes.len() as u32).to_le_bytes());
                f.group_sizes.iter().for_each(|v| p.extend_from_slice(&v.to_le_bytes()));
                f.data.iter().for_each(|v| p.extend_from_slice(&v.to_le_bytes()));
                f.labels.iter().for_each(|v| p.extend_from_slice(&v.to_le_bytes()));
            }
            Message::Gradients(g) => {
                p.reserve(16 + 4 * g.data.len());
                p.extend_from_slice(&g.batch_id.to_le_bytes());
                g.data.iter().for_each(|v| p.extend_from_slice(&v.to_le_bytes()));
                p.extend_from_slice(&g.loss.to_le_bytes());
            }
            Message::EpochEnd { epoch } => p.extend_from_slice(&epoch.to_le_bytes()),
            Message::Error { code, message } => {
                p.extend_from_slice(&code.to_le_bytes());
                p.extend_from_slice(message.as_bytes());
            }
        }
        p
    }

    pub fn to_frame(&self, codec: &FrameCodec) -> Frame {
        codec.frame(self.msg_type(), self.payload())
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, ProtocolError> {
        let what = frame.msg_type;
        let mut r = Reader { buf: &frame.payload, pos: 0, what };
        let msg = match what {
            MsgType::Config => {
                let protocol_version = r.u16()?;
                let dim = r.u32()?;
                let ratio = r.u16()?;
                let batch_size = r.u32()?;
                let key_seed = r.u64()?;
                let num_classes = r.u32()?;
                let digest = r.take(32)?.try_into().unwrap();
                Message::Config(ConfigMsg { protocol_version, dim, ratio, batch_size, key_seed, num_classes, digest })
            }
            MsgType::ConfigAck => Message::ConfigAck,
            MsgType::Shutdown => Message::Shutdown,
            MsgType::Features => {
                let batch_id = r.u64()?;
                let groups = r.u32()? as usize;
                if groups == 0 {
                    return Err(ProtocolError::Malformed("FEATURES with zero groups".into()));
                }
                if groups.saturating_mul(4) > r.remaining() {
                    return Err(ProtocolError::Malformed("FEATURES group count exceeds payload".into()));
                }
                let group_sizes = r.u32s(groups)?;
                let batch: usize = group_sizes.iter().map(|&n| n as usize).sum();
                let rest = r.remaining().checked_sub(4 * batch).ok_or_else(|| {
                    ProtocolError::Malformed("FEATURES label block exceeds payload".into())
                })?;
                if rest % (4 * groups) != 0 || rest == 0 {
                    return Err(ProtocolError::Malformed(format!(
                        "FEATURES data block of {rest} bytes does not split into {groups} vectors"
                    )));
                }
                let data = r.f32s(rest / 4)?;
                let labels = r.u32s(batch)?;
                Message::Features(FeaturesMsg { batch_id, group_sizes, data, labels })
            }
            MsgType::Gradients => {
                let batch_id = r.u64()?;
                let body = r.remaining().checked_sub(8).filter(|n| n % 4 == 0).ok_or_else(|| {
                    ProtocolError::Malformed("GRADIENTS payload has a partial float".into())
                })?;
                let data = r.f32s(body / 4)?;
                let loss = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
                Message::Gradients(GradientsMsg { batch_id, data, loss })
            }
            MsgType::EpochEnd => Message::EpochEnd { epoch: r.u32()? },
            MsgType::Error => {
                let code = r.u16()?;
                let message = String::from_utf8_lossy(r.take(r.remaining())?).into_owned();
                Message::Error { code, message }
            }
        };
        r.finish()?;
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_layout_and_size() {
        let msg = Message::Features(FeaturesMsg {
            batch_id: 7,
            group_sizes: vec![2, 1],
            data: vec![1.0, 2.0, 3.0, 4.0],
            labels: vec![0, 1, 2],
        });
        let frame = msg.to_frame(&FrameCodec::default());
        assert_eq!(frame.encoded_len(), features_frame_len(2, 2, 3));
        assert_eq!(&frame.payload[..12], &[7, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(Message::from_frame(&frame).unwrap(), msg);
    }

    #[test]
    fn reference_scale_payload_size() {
        // R=16, D=2048, B=64: 4 groups of 16.
        let g = 64 / 16;
        let header = HEADER_LEN + 12 + 4 * g;
        assert_eq!(features_frame_len(g, 2048, 64), 4 * g * 2048 + 4 * 64 + header);
    }

    #[test]
    fn malformed_payloads() {
        let codec = FrameCodec::default();
        let frame = |t, p: Vec<u8>| codec.frame(t, p);
        assert!(Message::from_frame(&frame(MsgType::Config, vec![0; 10])).is_err());
        assert!(Message::from_frame(&frame(MsgType::Shutdown, vec![0])).is_err());
        assert!(Message::from_frame(&frame(MsgType::Gradients, vec![0; 18])).is_err());
        let mut f = vec![0u8; 8];
        f.extend_from_slice(&1u32.to_le_bytes());
        f.extend_from_slice(&1u32.to_le_bytes());
        f.extend_from_slice(&[0; 6]);
        assert!(Message::from_frame(&frame(MsgType::Features, f)).is_err());
        let mut zero_groups = vec![0u8; 8];
        zero_groups.extend_from_slice(&0u32.to_le_bytes());
        assert!(Message::from_frame(&frame(MsgType::Features, zero_groups)).is_err());
    }
}
