//! Message transport between two participants.
//!
//! Frames are a one-byte tag, a little-endian `u32` payload length and the
//! payload. The TCP and in-process channels move identical frames.

mod inprocess;
mod tcp;
pub mod wire;

pub use inprocess::{pair, InProcessChannel};
pub use tcp::{TcpAcceptor, TcpChannel};
pub use wire::{Message, Tag, PROTOCOL_VERSION};

use crate::error::{Error, Result};

/// A reliable, ordered, blocking message pipe to one peer.
pub trait Channel: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;
    fn receive(&mut self) -> Result<Message>;

    /// Receives a message and checks its tag.
    fn expect(&mut self, tag: Tag) -> Result<Message> {
        let msg = self.receive()?;
        if msg.tag != tag {
            return Err(Error::Protocol(format!(
                "expected {tag:?} message, got {:?}",
                msg.tag
            )));
        }
        Ok(msg)
    }
}

impl<C: Channel + ?Sized> Channel for Box<C> {
    fn send(&mut self, msg: &Message) -> Result<()> {
        (**self).send(msg)
    }

    fn receive(&mut self) -> Result<Message> {
        (**self).receive()
    }
}

/// Exchanges HELLO messages and returns the peer's participant name.
pub fn handshake(channel: &mut dyn Channel, name: &str, version: u32) -> Result<String> {
    channel.send(&Message::hello(version, name))?;
    let msg = channel.receive()?;
    if msg.tag != Tag::Hello {
        return Err(Error::Handshake(format!(
            "expected HELLO from peer, got {:?}",
            msg.tag
        )));
    }
    let (peer_version, peer) = wire::decode_hello(&msg.payload)?;
    if peer_version != version {
        return Err(Error::Handshake(format!(
            "protocol version mismatch: local {version}, peer {peer} has {peer_version}"
        )));
    }
    Ok(peer)
}
