//! Byte layout of frames and payloads. All integers and floats are
//! little-endian with fixed widths.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::mapping::Mesh;
use crate::storage::{Sample, Storage};

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on accepted payload sizes.
const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Tag {
    Hello = 1,
    InitialData = 2,
    Storage = 3,
    Convergence = 4,
    Bye = 5,
    Mesh = 6,
}

impl TryFrom<u8> for Tag {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        Ok(match b {
            1 => Tag::Hello,
            2 => Tag::InitialData,
            3 => Tag::Storage,
            4 => Tag::Convergence,
            5 => Tag::Bye,
            6 => Tag::Mesh,
            _ => return Err(Error::Protocol(format!("unknown message tag {b}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub tag: Tag,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(tag: Tag, payload: Vec<u8>) -> Self {
        Self { tag, payload }
    }

    pub fn hello(version: u32, name: &str) -> Self {
        let mut p = Vec::with_capacity(8 + name.len());
        p.extend_from_slice(&version.to_le_bytes());
        put_str(&mut p, name);
        Self::new(Tag::Hello, p)
    }

    pub fn storage(tag: Tag, data_id: u32, storage: &Storage) -> Self {
        Self::new(tag, serialize_storage(data_id, storage))
    }

    pub fn convergence(converged: bool) -> Self {
        Self::new(Tag::Convergence, vec![u8::from(converged)])
    }

    pub fn bye() -> Self {
        Self::new(Tag::Bye, Vec::new())
    }

    pub fn mesh(mesh: &Mesh) -> Self {
        Self::new(Tag::Mesh, encode_mesh(mesh))
    }

    /// Frame bytes: tag, payload length, payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.push(self.tag as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(frame: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(frame);
        let tag = Tag::try_from(r.u8()?)?;
        let len = r.u32()? as usize;
        let payload = r.take(len)?.to_vec();
        r.finish()?;
        Ok(Self::new(tag, payload))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.encode())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; 5];
        r.read_exact(&mut head)?;
        let tag = Tag::try_from(head[0])?;
        let len = u32::from_le_bytes([head[1], head[2], head[3], head[4]]);
        if len > MAX_PAYLOAD {
            return Err(Error::Protocol(format!("payload of {len} bytes exceeds limit")));
        }
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload)?;
        Ok(Self::new(tag, payload))
    }

    pub fn decode_convergence(&self) -> Result<bool> {
        match self.payload.as_slice() {
            [0] => Ok(false),
            [1] => Ok(true),
            other => Err(Error::Protocol(format!(
                "malformed convergence payload {other:?}"
            ))),
        }
    }
}

/// `u32 data_id`, `u32 m`, then per stample `f64 time`, `u32 count` and the values.
pub fn serialize_storage(data_id: u32, storage: &Storage) -> Vec<u8> {
    let values: usize = storage.stamples().iter().map(|s| s.sample.len()).sum();
    let mut out = Vec::with_capacity(8 + 12 * storage.len() + 8 * values);
    out.extend_from_slice(&data_id.to_le_bytes());
    out.extend_from_slice(&(storage.len() as u32).to_le_bytes());
    for st in storage.stamples() {
        out.extend_from_slice(&st.time.to_le_bytes());
        out.extend_from_slice(&(st.sample.len() as u32).to_le_bytes());
        for v in st.sample.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Inverse of [`serialize_storage`]. The degree is not on the wire.
pub fn deserialize_storage(bytes: &[u8], degree: usize) -> Result<(u32, Storage)> {
    let mut r = Cursor::new(bytes);
    let data_id = r.u32()?;
    let m = r.u32()?;
    let mut storage = Storage::new(degree);
    for _ in 0..m {
        let t = r.f64()?;
        let count = r.u32()? as usize;
        let mut values = Vec::with_capacity(count.min(bytes.len() / 8));
        for _ in 0..count {
            values.push(r.f64()?);
        }
        let sample = Sample::new(values).map_err(|e| Error::Protocol(e.to_string()))?;
        if let Some(last) = storage.last() {
            if t <= last.time {
                return Err(Error::Protocol(format!(
                    "stample times not increasing on the wire ({t} after {})",
                    last.time
                )));
            }
        }
        storage
            .set_sample_at_time(t, sample)
            .map_err(|e| Error::Protocol(e.to_string()))?;
    }
    r.finish()?;
    Ok((data_id, storage))
}

pub fn decode_hello(payload: &[u8]) -> Result<(u32, String)> {
    let mut r = Cursor::new(payload);
    let version = r.u32()?;
    let name = r.str()?;
    r.finish()?;
    Ok((version, name))
}

/// Name, `u32` dimensions, `u32` vertex count, coordinates.
pub fn encode_mesh(mesh: &Mesh) -> Vec<u8> {
    let mut out = Vec::new();
    put_str(&mut out, mesh.name());
    out.extend_from_slice(&(mesh.dimensions() as u32).to_le_bytes());
    out.extend_from_slice(&(mesh.vertex_count() as u32).to_le_bytes());
    for c in mesh.coords() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn decode_mesh(payload: &[u8]) -> Result<Mesh> {
    let mut r = Cursor::new(payload);
    let name = r.str()?;
    let dims = r.u32()? as usize;
    let count = r.u32()? as usize;
    let n = count
        .checked_mul(dims)
        .filter(|n| n * 8 <= payload.len())
        .ok_or_else(|| Error::Protocol("mesh payload too short".into()))?;
    let coords = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Mesh::new(name, dims, coords).map_err(|e| Error::Protocol(e.to_string()))
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Transport(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    format!("truncated message: need {n} bytes at offset {}", self.pos),
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Protocol("name is not valid UTF-8".into()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Protocol(format!(
                "{} trailing bytes in message",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_single_stample() {
        let st = Storage::with_initial(0.0, Sample::new(vec![1.0]).unwrap(), 1).unwrap();
        let bytes = serialize_storage(0, &st);
        assert_eq!(bytes.len(), 28);
        assert_eq!(
            bytes,
            [
                0, 0, 0, 0, // data_id
                1, 0, 0, 0, // m
                0, 0, 0, 0, 0, 0, 0, 0, // time 0.0
                1, 0, 0, 0, // count
                0, 0, 0, 0, 0, 0, 0xf0, 0x3f, // 1.0
            ]
        );
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), 0.0);
    }

    #[test]
    fn golden_frames() {
        assert_eq!(Message::convergence(true).encode(), [4, 1, 0, 0, 0, 1]);
        assert_eq!(Message::bye().encode(), [5, 0, 0, 0, 0]);
        assert_eq!(
            Message::hello(1, "A").encode(),
            [1, 9, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, b'A']
        );
    }

    #[test]
    fn six_stamples_on_the_wire() {
        let mut st = Storage::new(3);
        for i in 0..6 {
            st.set_sample_at_time(i as f64 * 0.2, Sample::new(vec![i as f64]).unwrap())
                .unwrap();
        }
        let bytes = serialize_storage(3, &st);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 6);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let st = Storage::with_initial(0.0, Sample::new(vec![1.0, 2.0]).unwrap(), 1).unwrap();
        let bytes = serialize_storage(0, &st);
        assert!(deserialize_storage(&bytes[..bytes.len() - 1], 1).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(deserialize_storage(&long, 1), Err(Error::Protocol(_))));
    }

    #[test]
    fn unknown_tag_is_a_protocol_error() {
        assert!(matches!(Message::decode(&[9, 0, 0, 0, 0]), Err(Error::Protocol(_))));
    }

    #[test]
    fn mesh_round_trip() {
        let mesh = Mesh::new("Mesh-A", 2, vec![0.0, 1.0, 2.5, -3.0]).unwrap();
        assert_eq!(decode_mesh(&encode_mesh(&mesh)).unwrap(), mesh);
    }

    #[test]
    fn stream_round_trip() {
        let msgs = [Message::hello(1, "B"), Message::convergence(false), Message::bye()];
        let mut buf = Vec::new();
        for m in &msgs {
            m.write_to(&mut buf).unwrap();
        }
        let mut r = buf.as_slice();
        for m in &msgs {
            assert_eq!(&Message::read_from(&mut r).unwrap(), m);
        }
    }

    fn arb_storage() -> impl Strategy<Value = Storage> {
        (1usize..5, proptest::collection::vec(0.001..1.0f64, 1..8), 0usize..4).prop_flat_map(
            |(dim, steps, degree)| {
                let n = steps.len();
                proptest::collection::vec(-1e6..1e6f64, n * dim).prop_map(move |vals| {
                    let mut st = Storage::new(degree);
                    let mut t = -0.5;
                    for (i, dt) in steps.iter().enumerate() {
                        let s = Sample::new(vals[i * dim..(i + 1) * dim].to_vec()).unwrap();
                        st.set_sample_at_time(t, s).unwrap();
                        t += dt;
                    }
                    st
                })
            },
        )
    }

    proptest! {
        #[test]
        fn storage_round_trip(st in arb_storage(), id in any::<u32>()) {
            let bytes = serialize_storage(id, &st);
            let (back_id, back) = deserialize_storage(&bytes, st.degree()).unwrap();
            prop_assert_eq!(back_id, id);
            prop_assert_eq!(back, st);
        }

        #[test]
        fn frame_round_trip(payload in proptest::collection::vec(any::<u8>(), 0..64)) {
            let m = Message::new(Tag::Storage, payload);
            prop_assert_eq!(Message::decode(&m.encode()).unwrap(), m);
        }
    }
}
