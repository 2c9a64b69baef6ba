//! Edge/cloud split training over a byte stream.
//!
//! The edge owns the data and `f_θ`; the cloud owns `f_ψ` and the loss. Both
//! regenerate the same keys from the seed carried in CONFIG, and both run the
//! step functions from [`crate::pipeline`], so a networked run follows the
//! in-process trajectory bit for bit.

pub mod frame;
pub mod message;
pub mod session;

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::net::{AdamConfig, Architecture, Mlp};
use crate::pipeline::{
    cloud_step, edge_complete, edge_forward, elapsed_ms, shuffled_order, Codec, CompressedBatch, Compression,
    RunOptions, Tally, TrainConfig, WirePrecision,
};
use frame::{Deframed, FrameCodec, MsgType, PROTOCOL_VERSION};
use message::{ConfigMsg, ErrorCode, FeaturesMsg, GradientsMsg, Message};
use session::{Negotiated, Phase, Role, Session};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ProtocolError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("unknown message type {0}")]
    UnknownType(u8),

    #[error("protocol version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("payload of {len} bytes exceeds the {max}-byte cap")]
    Oversize { len: usize, max: usize },

    #[error("malformed payload: {0}")]
    Malformed(String),

    #[error("{msg:?} not allowed in phase {phase:?}")]
    UnexpectedMessage { phase: Phase, msg: MsgType },

    #[error("batch id {found} out of order, expected {expected}")]
    BatchOrder { expected: u64, found: u64 },

    #[error("handshake rejected: {0}")]
    Rejected(String),

    #[error("peer reported error {code}: {message}")]
    Remote { code: u16, message: String },
}

impl ProtocolError {
    /// Code reported to the peer when this error ends a session.
    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::VersionMismatch { .. } => ErrorCode::Version,
            ProtocolError::Rejected(_) => ErrorCode::Digest,
            _ => ErrorCode::Protocol,
        }
    }
}

/// Everything the cloud half must agree on with the edge, hashed into CONFIG.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CloudProfile {
    pub cut_dim: usize,
    pub cloud_hidden: Vec<usize>,
    pub num_classes: usize,
    /// Seed for the cloud's initial weights.
    pub seed: u64,
    pub adam: AdamConfig,
    pub compression: Compression,
}

impl CloudProfile {
    pub fn from_train(config: &TrainConfig, num_classes: usize) -> Self {
        Self {
            cut_dim: config.cut_dim,
            cloud_hidden: config.cloud_hidden.clone(),
            num_classes,
            seed: config.seed,
            adam: config.adam,
            compression: config.compression,
        }
    }

    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("profile serializes");
        Sha256::digest(&json).into()
    }

    fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: 1,
            edge_hidden: vec![],
            cut_dim: self.cut_dim,
            cloud_hidden: self.cloud_hidden.clone(),
            num_classes: self.num_classes,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CloudConfig {
    pub profile: CloudProfile,
    pub frames: FrameCodec,
    pub exec: Exec,
    pub timing: bool,
}

impl CloudConfig {
    pub fn new(profile: CloudProfile) -> Self {
        Self { profile, frames: FrameCodec::default(), exec: Exec::default(), timing: true }
    }
}

/// A framed, session-checked message stream.
pub struct Connection<S> {
    stream: S,
    frames: FrameCodec,
    session: Session,
    buf: Vec<u8>,
    bytes_sent: u64,
    bytes_received: u64,
    last_received: u64,
}

impl<S: Read + Write> Connection<S> {
    pub fn new(stream: S, role: Role, frames: FrameCodec) -> Self {
        Self {
            stream,
            frames,
            session: Session::new(role),
            buf: Vec::new(),
            bytes_sent: 0,
            bytes_received: 0,
            last_received: 0,
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent
    }

    pub fn bytes_received(&self) -> u64 {
        self.bytes_received
    }

    pub fn into_inner(self) -> S {
        self.stream
    }

    /// Writes one message and returns its size on the wire.
    pub fn send(&mut self, msg: &Message) -> Result<u64> {
        self.session.on_send(msg)?;
        let bytes = msg.to_frame(&self.frames).encode();
        self.stream.write_all(&bytes)?;
        self.stream.flush()?;
        self.bytes_sent += bytes.len() as u64;
        Ok(bytes.len() as u64)
    }

    /// Reads the next message. A peer ERROR surfaces as [`ProtocolError::Remote`].
    pub fn recv(&mut self) -> Result<Message> {
        let (frame, used) = loop {
            match self.frames.decode(&self.buf)? {
                Deframed::Frame(frame, used) => break (frame, used),
                Deframed::NeedMore(n) => {
                    let start = self.buf.len();
                    self.buf.resize(start + n.max(4096), 0);
                    let got = self.stream.read(&mut self.buf[start..])?;
                    self.buf.truncate(start + got);
                    if got == 0 {
                        let what = if start == 0 { "peer closed the connection" } else { "stream ended mid-frame" };
                        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, what).into());
                    }
                }
            }
        };
        self.buf.drain(..used);
        self.bytes_received += used as u64;
        self.last_received = used as u64;
        let msg = Message::from_frame(&frame)?;
        self.session.on_receive(&msg)?;
        if let Message::Error { code, message } = msg {
            return Err(ProtocolError::Remote { code, message }.into());
        }
        if frame.version != self.frames.version {
            return Err(ProtocolError::VersionMismatch { expected: self.frames.version, found: frame.version }.into());
        }
        Ok(msg)
    }

    /// Best-effort ERROR to the peer before giving up on the session.
    fn abort(&mut self, err: Error) -> Error {
        let code = match &err {
            Error::Protocol(ProtocolError::Remote { .. }) | Error::Io(_) => return err,
            Error::Protocol(p) => p.code(),
            Error::Numeric(_) => ErrorCode::Numeric,
            Error::InvalidArgument(_) | Error::Contract(_) | Error::Format(_) => ErrorCode::Protocol,
            Error::Internal(_) => ErrorCode::Internal,
        };
        if self.session.phase() != Phase::Closed {
            let _ = self.send(&Message::error(code, err.to_string()));
        }
        err
    }
}

#[derive(Clone, Debug)]
pub struct EdgeOutcome {
    pub edge: Mlp,
    pub codec: Codec,
    pub negotiated: Negotiated,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

#[derive(Clone, Debug)]
pub struct CloudOutcome {
    pub cloud: Mlp,
    pub codec: Codec,
    pub negotiated: Negotiated,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

fn to_f64(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| v as f64).collect()
}

/// Trains the edge half against a remote cloud. Per-step metrics go into
/// `tally` as they happen, so a failed session still leaves partial metrics.
pub fn run_edge<S: Read + Write>(
    config: &TrainConfig,
    train_set: &Dataset,
    conn: &mut Connection<S>,
    opts: RunOptions,
    tally: &mut Tally,
) -> Result<EdgeOutcome> {
    config.validate()?;
    if config.wire != WirePrecision::F32 {
        return Err(Error::invalid("networked runs carry 32-bit floats"));
    }
    let classes = train_set.num_classes();
    let negotiated = Negotiated {
        protocol_version: conn.frames.version,
        dim: config.cut_dim,
        ratio: config.ratio,
        batch_size: config.batch_size,
        key_seed: config.key_seed(),
        num_classes: classes,
    };
    let hello = ConfigMsg {
        protocol_version: negotiated.protocol_version,
        dim: u32::try_from(config.cut_dim).map_err(|_| Error::invalid("cut dimension too large"))?,
        ratio: u16::try_from(config.ratio).map_err(|_| Error::invalid("ratio too large"))?,
        batch_size: u32::try_from(config.batch_size).map_err(|_| Error::invalid("batch size too large"))?,
        key_seed: negotiated.key_seed,
        num_classes: classes as u32,
        digest: CloudProfile::from_train(config, classes).digest(),
    };
    let mut edge = config.init_model(train_set.input_dim(), classes)?.edge;
    let codec = config.codec()?;
    conn.send(&Message::Config(hello))?;
    match conn.recv()? {
        Message::ConfigAck => {}
        other => unreachable!("session admitted {:?} after CONFIG", other.msg_type()),
    }
    conn.session.negotiated = Some(negotiated.clone());

    let result = (|| {
        for epoch in 0..config.epochs {
            let order = shuffled_order(config, train_set.len(), epoch);
            for batch in train_set.batches(&order, config.batch_size) {
                let start = Instant::now();
                let strict = config.strict_for(batch.len());
                let (compressed, pending) =
                    edge_forward(&edge, &codec, &batch.inputs, strict, config.wire, opts.exec)?;
                let batch_id = conn.session.next_batch();
                let sent = conn.send(&Message::Features(FeaturesMsg {
                    batch_id,
                    group_sizes: compressed.group_sizes.iter().map(|&n| n as u32).collect(),
                    data: to_f32(&compressed.data),
                    labels: batch.labels.clone(),
                }))?;
                let reply = match conn.recv()? {
                    Message::Gradients(g) => g,
                    other => unreachable!("session admitted {:?} while awaiting gradients", other.msg_type()),
                };
                let groups = compressed.num_groups();
                if reply.data.len() != groups * codec.dim() {
                    return Err(ProtocolError::Malformed(format!(
                        "GRADIENTS carries {} floats, expected {}",
                        reply.data.len(),
                        groups * codec.dim()
                    ))
                    .into());
                }
                let grad = CompressedBatch {
                    dim: codec.dim(),
                    group_sizes: compressed.group_sizes.clone(),
                    data: to_f64(&reply.data),
                };
                edge_complete(&mut edge, &codec, &pending, &grad, opts.exec)?;
                tally.record(
                    epoch,
                    reply.loss,
                    None,
                    batch.len(),
                    groups,
                    codec.dim(),
                    (sent, conn.last_received),
                    elapsed_ms(start, opts.timing),
                );
            }
            conn.send(&Message::EpochEnd { epoch: epoch as u32 })?;
        }
        conn.send(&Message::Shutdown)?;
        Ok(())
    })();
    result.map_err(|e| conn.abort(e))?;
    Ok(EdgeOutcome {
        edge,
        codec,
        negotiated,
        bytes_sent: conn.bytes_sent,
        bytes_received: conn.bytes_received,
    })
}

fn check_hello(config: &CloudConfig, hello: &ConfigMsg) -> std::result::Result<Negotiated, ProtocolError> {
    let profile = &config.profile;
    if hello.protocol_version != config.frames.version {
        return Err(ProtocolError::VersionMismatch { expected: config.frames.version, found: hello.protocol_version });
    }
    if hello.dim as usize != profile.cut_dim {
        return Err(ProtocolError::Rejected(format!(
            "edge cut dimension {} does not match cloud {}",
            hello.dim, profile.cut_dim
        )));
    }
    if hello.num_classes as usize != profile.num_classes {
        return Err(ProtocolError::Rejected(format!(
            "edge has {} classes, cloud {}",
            hello.num_classes, profile.num_classes
        )));
    }
    if hello.digest != profile.digest() {
        return Err(ProtocolError::Rejected("model configuration digest differs".into()));
    }
    if hello.ratio == 0 || hello.batch_size == 0 {
        return Err(ProtocolError::Malformed("ratio and batch size must be positive".into()));
    }
    Ok(Negotiated {
        protocol_version: hello.protocol_version,
        dim: hello.dim as usize,
        ratio: hello.ratio as usize,
        batch_size: hello.batch_size as usize,
        key_seed: hello.key_seed,
        num_classes: hello.num_classes as usize,
    })
}

fn features_batch(msg: &FeaturesMsg, n: &Negotiated) -> std::result::Result<CompressedBatch, ProtocolError> {
    if msg.dim() != n.dim {
        return Err(ProtocolError::Malformed(format!("FEATURES of width {}, negotiated {}", msg.dim(), n.dim)));
    }
    if msg.group_sizes.iter().any(|&g| g == 0 || g as usize > n.ratio) {
        return Err(ProtocolError::Malformed(format!("group sizes must lie in [1, {}]", n.ratio)));
    }
    if msg.labels.len() > n.batch_size {
        return Err(ProtocolError::Malformed(format!("batch of {} exceeds {}", msg.labels.len(), n.batch_size)));
    }
    if let Some(&y) = msg.labels.iter().find(|&&y| y as usize >= n.num_classes) {
        return Err(ProtocolError::Malformed(format!("label {y} out of range")));
    }
    Ok(CompressedBatch {
        dim: n.dim,
        group_sizes: msg.group_sizes.iter().map(|&g| g as usize).collect(),
        data: to_f64(&msg.data),
    })
}

/// Serves one session: handshake, then one cloud step per FEATURES until SHUTDOWN.
pub fn run_cloud<S: Read + Write>(
    config: &CloudConfig,
    conn: &mut Connection<S>,
    tally: &mut Tally,
) -> Result<CloudOutcome> {
    let hello = match conn.recv().map_err(|e| conn.abort(e))? {
        Message::Config(c) => c,
        other => unreachable!("session admitted {:?} first", other.msg_type()),
    };
    let setup = (|| {
        let negotiated = check_hello(config, &hello)?;
        let codec = Codec::new(config.profile.compression, negotiated.dim, negotiated.ratio, negotiated.key_seed)?;
        let cloud = Mlp::init_cloud(&config.profile.architecture(), config.profile.seed, config.profile.adam)?;
        Ok((negotiated, codec, cloud))
    })();
    let (negotiated, codec, mut cloud) = setup.map_err(|e| conn.abort(e))?;
    conn.send(&Message::ConfigAck)?;
    conn.session.negotiated = Some(negotiated.clone());

    let mut epoch = 0usize;
    let result = (|| loop {
        let msg = conn.recv()?;
        let start = Instant::now();
        match msg {
            Message::Features(f) => {
                let received = conn.last_received;
                let compressed = features_batch(&f, &negotiated)?;
                let step = cloud_step(&mut cloud, &codec, &compressed, &f.labels, WirePrecision::F32, config.exec)?;
                let sent = conn.send(&Message::Gradients(GradientsMsg {
                    batch_id: f.batch_id,
                    data: to_f32(&step.grad.data),
                    loss: step.loss,
                }))?;
                let n = f.labels.len();
                tally.record(
                    epoch,
                    step.loss,
                    Some(step.correct as f64 / n as f64),
                    n,
                    compressed.num_groups(),
                    negotiated.dim,
                    (received, sent),
                    elapsed_ms(start, config.timing),
                );
            }
            Message::EpochEnd { epoch: e } => epoch = e as usize + 1,
            Message::Shutdown => return Ok(()),
            other => unreachable!("session admitted {:?} mid-run", other.msg_type()),
        }
    })();
    result.map_err(|e| conn.abort(e))?;
    Ok(CloudOutcome {
        cloud,
        codec,
        negotiated,
        bytes_sent: conn.bytes_sent,
        bytes_received: conn.bytes_received,
    })
}

/// Wraps a TCP stream for the given role, with the frame cap from the environment.
pub fn tcp_connection(stream: TcpStream, role: Role, version: u16) -> Result<Connection<TcpStream>> {
    stream.set_nodelay(true)?;
    let frames = FrameCodec { version, ..FrameCodec::from_env()? };
    Ok(Connection::new(stream, role, frames))
}

pub fn connect_edge(addr: &str) -> Result<Connection<TcpStream>> {
    tcp_connection(TcpStream::connect(addr)?, Role::Edge, PROTOCOL_VERSION)
}

/// Accepts and serves `sessions` connections one after another.
///
/// `on_session` sees each session's result and metrics; it returns `false`
/// to stop serving early.
pub fn serve_cloud(
    listener: &TcpListener,
    config: &CloudConfig,
    sessions: usize,
    mut on_session: impl FnMut(Result<CloudOutcome>, Tally) -> bool,
) -> Result<()> {
    for _ in 0..sessions {
        let (stream, _) = listener.accept()?;
        let mut conn = tcp_connection(stream, Role::Cloud, config.frames.version)?;
        conn.frames.max_payload = config.frames.max_payload;
        let mut tally = Tally::default();
        let outcome = run_cloud(config, &mut conn, &mut tally);
        if !on_session(outcome, tally) {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BlobSpec;
    use crate::pipeline::train;
    use std::thread;

    fn toy() -> (TrainConfig, Dataset) {
        let spec = BlobSpec { input_dim: 5, train: 30, test: 1, num_classes: 3, center_scale: 3.0, noise: 0.5 };
        let (train, _) = spec.generate(1).unwrap();
        let config = TrainConfig {
            ratio: 4,
            batch_size: 8,
            cut_dim: 8,
            seed: 9,
            epochs: 2,
            edge_hidden: vec![6],
            cloud_hidden: vec![6],
            adam: AdamConfig { lr: 1e-2, ..Default::default() },
            ..Default::default()
        };
        (config, train)
    }

    #[test]
    fn loopback_matches_in_process() {
        let (config, train_set) = toy();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let cloud_config = CloudConfig::new(CloudProfile::from_train(&config, 3));
        let server = thread::spawn(move || {
            let mut out = None;
            serve_cloud(&listener, &cloud_config, 1, |r, t| {
                out = Some((r.unwrap(), t));
                true
            })
            .unwrap();
            out.unwrap()
        });
        let mut conn = connect_edge(&addr).unwrap();
        let mut tally = Tally::default();
        let edge = run_edge(&config, &train_set, &mut conn, RunOptions::default(), &mut tally).unwrap();
        let (cloud, cloud_tally) = server.join().unwrap();
        let local = train(&config, &train_set, None, "blobs", RunOptions::default()).unwrap();
        assert_eq!(edge.edge, local.model.edge);
        assert_eq!(cloud.cloud, local.model.cloud);
        assert_eq!(edge.bytes_sent, cloud.bytes_received);
        assert_eq!(tally.steps.len(), local.steps.len());
        for (a, b) in tally.steps.iter().zip(&cloud_tally.steps) {
            assert_eq!(a.loss, b.loss);
            assert_eq!((a.forward_bytes, a.backward_bytes), (b.forward_bytes, b.backward_bytes));
        }
    }

    #[test]
    fn digest_tracks_profile() {
        let (config, _) = toy();
        let a = CloudProfile::from_train(&config, 3);
        let b = CloudProfile { cut_dim: 16, ..a.clone() };
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), CloudProfile::from_train(&config, 3).digest());
    }
}
