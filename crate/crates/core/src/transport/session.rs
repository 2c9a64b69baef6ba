//! Session state machine.
//!
//! A conversation, in transmission order, must follow
//!
//! ```text
//! CONFIG CONFIG_ACK ( (FEATURES GRADIENTS)* EPOCH_END )* SHUTDOWN
//! ```
//!
//! with batch ids counting up from zero by one across the whole session.
//! ERROR may appear at any point before the session closes, and closes it.

use super::frame::MsgType;
use super::message::Message;
use super::ProtocolError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Edge,
    Cloud,
}

impl Role {
    pub fn may_send(self, t: MsgType) -> bool {
        match self {
            Role::Edge => matches!(
                t,
                MsgType::Config | MsgType::Features | MsgType::EpochEnd | MsgType::Shutdown | MsgType::Error
            ),
            Role::Cloud => matches!(t, MsgType::ConfigAck | MsgType::Gradients | MsgType::Error),
        }
    }

    pub fn peer(self) -> Role {
        match self {
            Role::Edge => Role::Cloud,
            Role::Cloud => Role::Edge,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    AwaitingConfig,
    AwaitingAck,
    /// At an epoch boundary.
    Ready,
    AwaitingGradients { batch_id: u64 },
    /// Inside an epoch, between batches.
    AwaitingFeatures,
    Closed,
}

fn batch_id(msg: &Message) -> Option<u64> {
    match msg {
        Message::Features(f) => Some(f.batch_id),
        Message::Gradients(g) => Some(g.batch_id),
        _ => None,
    }
}

/// Role-free view of the message sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conversation {
    phase: Phase,
    next_batch: u64,
}

impl Default for Conversation {
    fn default() -> Self {
        Self { phase: Phase::AwaitingConfig, next_batch: 0 }
    }
}

impl Conversation {
    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn next_batch(&self) -> u64 {
        self.next_batch
    }

    pub fn observe(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        use MsgType as T;
        let t = msg.msg_type();
        let unexpected = || ProtocolError::UnexpectedMessage { phase: self.phase, msg: t };
        if self.phase == Phase::Closed {
            return Err(unexpected());
        }
        if t == T::Error {
            self.phase = Phase::Closed;
            return Ok(());
        }
        self.phase = match (self.phase, t) {
            (Phase::AwaitingConfig, T::Config) => Phase::AwaitingAck,
            (Phase::AwaitingAck, T::ConfigAck) => Phase::Ready,
            (Phase::Ready | Phase::AwaitingFeatures, T::Features) => {
                let id = batch_id(msg).unwrap();
                if id != self.next_batch {
                    return Err(ProtocolError::BatchOrder { expected: self.next_batch, found: id });
                }
                Phase::AwaitingGradients { batch_id: id }
            }
            (Phase::AwaitingGradients { batch_id: want }, T::Gradients) => {
                let id = batch_id(msg).unwrap();
                if id != want {
                    return Err(ProtocolError::BatchOrder { expected: want, found: id });
                }
                self.next_batch += 1;
                Phase::AwaitingFeatures
            }
            (Phase::Ready | Phase::AwaitingFeatures, T::EpochEnd) => Phase::Ready,
            (Phase::Ready, T::Shutdown) => Phase::Closed,
            _ => return Err(unexpected()),
        };
        Ok(())
    }
}

/// Negotiated session parameters, identical on both ends after the handshake.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Negotiated {
    pub protocol_version: u16,
    pub dim: usize,
    pub ratio: usize,
    pub batch_size: usize,
    pub key_seed: u64,
    pub num_classes: usize,
}

/// One endpoint's view: the conversation plus who may send what.
#[derive(Clone, Debug)]
pub struct Session {
    pub role: Role,
    pub negotiated: Option<Negotiated>,
    conversation: Conversation,
}

impl Session {
    pub fn new(role: Role) -> Self {
        Self { role, negotiated: None, conversation: Conversation::default() }
    }

    pub fn phase(&self) -> Phase {
        self.conversation.phase()
    }

    pub fn next_batch(&self) -> u64 {
        self.conversation.next_batch()
    }

    pub fn on_send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        self.check(self.role, msg)
    }

    pub fn on_receive(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        self.check(self.role.peer(), msg)
    }

    fn check(&mut self, sender: Role, msg: &Message) -> Result<(), ProtocolError> {
        if !sender.may_send(msg.msg_type()) {
            return Err(ProtocolError::UnexpectedMessage { phase: self.phase(), msg: msg.msg_type() });
        }
        self.conversation.observe(msg)
    }
}
