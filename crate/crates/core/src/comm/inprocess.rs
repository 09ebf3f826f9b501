use std::io;
use std::sync::mpsc::{channel, Receiver, Sender};

use super::wire::Message;
use super::Channel;
use crate::error::{Error, Result};

/// Channel end backed by a std mpsc queue. Frames are encoded exactly as on
/// TCP so both transports see the same bytes.
pub struct InProcessChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Two connected channel ends.
pub fn pair() -> (InProcessChannel, InProcessChannel) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    (
        InProcessChannel { tx: tx_a, rx: rx_a },
        InProcessChannel { tx: tx_b, rx: rx_b },
    )
}

impl Channel for InProcessChannel {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.tx.send(msg.encode()).map_err(|_| {
            Error::Transport(io::Error::new(io::ErrorKind::BrokenPipe, "peer channel closed"))
        })
    }

    fn receive(&mut self) -> Result<Message> {
        let frame = self.rx.recv().map_err(|_| {
            Error::Transport(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "peer channel closed",
            ))
        })?;
        Message::decode(&frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{handshake, Tag};
    use std::thread;

    #[test]
    fn messages_arrive_in_order() {
        let (mut a, mut b) = pair();
        for i in 0..10u8 {
            a.send(&Message::new(Tag::Storage, vec![i])).unwrap();
        }
        for i in 0..10u8 {
            assert_eq!(b.expect(Tag::Storage).unwrap().payload, vec![i]);
        }
    }

    #[test]
    fn handshake_between_threads() {
        let (mut a, mut b) = pair();
        let t = thread::spawn(move || handshake(&mut b, "B", 1).unwrap());
        assert_eq!(handshake(&mut a, "A", 1).unwrap(), "B");
        assert_eq!(t.join().unwrap(), "A");
    }

    #[test]
    fn version_mismatch() {
        let (mut a, mut b) = pair();
        let t = thread::spawn(move || handshake(&mut b, "B", 2));
        assert!(matches!(handshake(&mut a, "A", 1), Err(Error::Handshake(_))));
        assert!(matches!(t.join().unwrap(), Err(Error::Handshake(_))));
    }

    #[test]
    fn dropped_peer_is_a_transport_error() {
        let (mut a, b) = pair();
        drop(b);
        assert!(matches!(a.receive(), Err(Error::Transport(_))));
        assert!(matches!(a.send(&Message::bye()), Err(Error::Transport(_))));
    }

    #[test]
    fn unexpected_tag_is_a_protocol_error() {
        let (mut a, mut b) = pair();
        a.send(&Message::bye()).unwrap();
        assert!(matches!(b.expect(Tag::Storage), Err(Error::Protocol(_))));
    }
}
