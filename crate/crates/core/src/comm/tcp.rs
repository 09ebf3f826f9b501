use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use super::wire::Message;
use super::Channel;
use crate::error::{Error, Result};

pub const CONNECT_ATTEMPTS: u32 = 50;
pub const CONNECT_BACKOFF: Duration = Duration::from_millis(100);

/// Listening side of a TCP channel.
pub struct TcpAcceptor {
    listener: TcpListener,
}

impl TcpAcceptor {
    pub fn bind(address: &str) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(address)?,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Blocks until one connector arrives.
    pub fn accept(self) -> Result<TcpChannel> {
        let (stream, peer) = self.listener.accept()?;
        log::debug!("accepted connection from {peer}");
        TcpChannel::from_stream(stream)
    }
}

/// One blocking TCP connection carrying framed messages.
pub struct TcpChannel {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpChannel {
    pub fn from_stream(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self {
            reader,
            writer: BufWriter::new(stream),
        })
    }

    /// Binds `address` and waits for the peer.
    pub fn accept(address: &str) -> Result<Self> {
        TcpAcceptor::bind(address)?.accept()
    }

    /// Connects to `address`, retrying while the acceptor is not yet listening.
    pub fn connect(address: &str) -> Result<Self> {
        let mut last = None;
        for attempt in 0..CONNECT_ATTEMPTS {
            let addrs: Vec<SocketAddr> = match address.to_socket_addrs() {
                Ok(a) => a.collect(),
                Err(e) => return Err(Error::Transport(e)),
            };
            match TcpStream::connect(&addrs[..]) {
                Ok(stream) => return Self::from_stream(stream),
                Err(e) => {
                    log::debug!("connect to {address} failed (attempt {}): {e}", attempt + 1);
                    last = Some(e);
                    thread::sleep(CONNECT_BACKOFF);
                }
            }
        }
        Err(Error::Transport(last.unwrap_or_else(|| {
            io::Error::new(io::ErrorKind::NotConnected, "no connection attempt made")
        })))
    }
}

impl Channel for TcpChannel {
    fn send(&mut self, msg: &Message) -> Result<()> {
        msg.write_to(&mut self.writer)
    }

    fn receive(&mut self) -> Result<Message> {
        Message::read_from(&mut self.reader)
    }
}
