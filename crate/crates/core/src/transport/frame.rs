//! Stream framing for [`Message`]s:
//! `u32 BE payload byte length | u8 tag | u16 BE layer | u16 BE sender | f64 LE payload`.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::transport::{Message, Tag, WorkerId};

pub const FRAME_HEADER_LEN: usize = 9;

pub fn write_frame<W: Write>(out: &mut W, msg: &Message) -> Result<()> {
    let sender = u16::try_from(msg.sender.0)
        .map_err(|_| Error::Transport(format!("{} does not fit the wire format", msg.sender)))?;
    let bytes = u32::try_from(msg.payload.len() * 8)
        .map_err(|_| Error::Transport("payload too large for one frame".into()))?;
    let mut buf = Vec::with_capacity(FRAME_HEADER_LEN + msg.payload.len() * 8);
    buf.extend_from_slice(&bytes.to_be_bytes());
    buf.push(msg.tag.code());
    buf.extend_from_slice(&msg.layer.to_be_bytes());
    buf.extend_from_slice(&sender.to_be_bytes());
    for v in &msg.payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(input: &mut R) -> Result<Option<Message>> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    match input.read_exact(&mut header[..1]) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    input.read_exact(&mut header[1..])?;
    let bytes = u32::from_be_bytes(header[0..4].try_into().unwrap()) as usize;
    let tag = Tag::from_code(header[4])
        .ok_or_else(|| Error::Transport(format!("unknown tag byte {}", header[4])))?;
    let layer = u16::from_be_bytes(header[5..7].try_into().unwrap());
    let sender = u16::from_be_bytes(header[7..9].try_into().unwrap());
    if !bytes.is_multiple_of(8) {
        return Err(Error::Transport(format!("payload length {bytes} is not a whole number of floats")));
    }
    let mut raw = vec![0u8; bytes];
    input.read_exact(&mut raw)?;
    let payload = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some(Message {
        tag,
        layer,
        sender: WorkerId(sender as usize),
        payload,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_layout() {
        let msg = Message::new(Tag::ErrorBroadcast, 0x0102, WorkerId(0x0304), vec![1.0]);
        let mut buf = Vec::new();
        write_frame(&mut buf, &msg).unwrap();
        let mut expect = vec![0, 0, 0, 8, 3, 1, 2, 3, 4];
        expect.extend_from_slice(&1.0f64.to_le_bytes());
        assert_eq!(buf, expect);
    }

    #[test]
    fn rejects_bad_tag_and_length() {
        let bad_tag = [0u8, 0, 0, 0, 42, 0, 0, 0, 0];
        assert!(read_frame(&mut &bad_tag[..]).is_err());
        let bad_len = [0u8, 0, 0, 3, 1, 0, 0, 0, 0, 1, 2, 3];
        assert!(read_frame(&mut &bad_len[..]).is_err());
        assert!(read_frame(&mut &[][..]).unwrap().is_none());
    }

    #[test]
    fn frames_cross_a_socket() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let msg = Message::new(Tag::PartialActivation, 7, WorkerId(3), vec![0.25, -1.5, 1e300]);
        let sent = msg.clone();
        let writer = std::thread::spawn(move || {
            let mut s = std::net::TcpStream::connect(addr).unwrap();
            write_frame(&mut s, &sent).unwrap();
        });
        let (mut conn, _) = listener.accept().unwrap();
        writer.join().unwrap();
        assert_eq!(read_frame(&mut conn).unwrap(), Some(msg));
    }

    proptest! {
        #[test]
        fn round_trip(tag in 0u8..9, layer: u16, sender: u16, payload in proptest::collection::vec(any::<f64>(), 0..32)) {
            let msg = Message { tag: Tag::from_code(tag).unwrap(), layer, sender: WorkerId(sender as usize), payload };
            let mut buf = Vec::new();
            write_frame(&mut buf, &msg).unwrap();
            let back = read_frame(&mut buf.as_slice()).unwrap().unwrap();
            prop_assert_eq!(back.tag, msg.tag);
            prop_assert_eq!(back.layer, msg.layer);
            prop_assert_eq!(back.sender, msg.sender);
            let a: Vec<u64> = back.payload.iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = msg.payload.iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
