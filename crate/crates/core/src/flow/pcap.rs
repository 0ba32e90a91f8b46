//! Classic libpcap container: 24-byte global header followed by 16-byte
//! record headers. Both byte orders are read; files are written
//! little-endian with microsecond timestamps.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::wire::{RawPacket, Timestamp};

pub const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
pub const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
pub const LINKTYPE_ETHERNET: u32 = 1;
const SNAPLEN: u32 = 65_535;

/// Streaming reader over a pcap byte source.
pub struct PcapReader<R> {
    inner: R,
    big_endian: bool,
    nanos: bool,
    offset: u64,
    pub link_type: u32,
}

impl PcapReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        PcapReader::new(BufReader::new(file))
    }
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut hdr = [0u8; 24];
        read_exact_or(&mut inner, &mut hdr, 0, "global header")?;
        let magic_le = u32::from_le_bytes(hdr[0..4].try_into().unwrap());
        let magic_be = u32::from_be_bytes(hdr[0..4].try_into().unwrap());
        let (big_endian, nanos) = match (magic_le, magic_be) {
            (MAGIC_MICROS, _) => (false, false),
            (MAGIC_NANOS, _) => (false, true),
            (_, MAGIC_MICROS) => (true, false),
            (_, MAGIC_NANOS) => (true, true),
            _ => return Err(Error::Parse { offset: 0, msg: format!("bad pcap magic {:#010x}", magic_le) }),
        };
        let u32_at = |b: &[u8]| {
            let a: [u8; 4] = b.try_into().unwrap();
            if big_endian {
                u32::from_be_bytes(a)
            } else {
                u32::from_le_bytes(a)
            }
        };
        let link_type = u32_at(&hdr[20..24]);
        if link_type != LINKTYPE_ETHERNET {
            return Err(Error::Unsupported(format!("pcap link type {} (only Ethernet is supported)", link_type)));
        }
        Ok(PcapReader { inner, big_endian, nanos, offset: 24, link_type })
    }

    fn u32_at(&self, b: &[u8]) -> u32 {
        let a: [u8; 4] = b.try_into().unwrap();
        if self.big_endian {
            u32::from_be_bytes(a)
        } else {
            u32::from_le_bytes(a)
        }
    }

    /// Next frame, `Ok(None)` at a clean end of file.
    pub fn next_packet(&mut self) -> Result<Option<RawPacket>> {
        let mut rec = [0u8; 16];
        let got = read_up_to(&mut self.inner, &mut rec)
            .map_err(|e| Error::Parse { offset: self.offset, msg: e.to_string() })?;
        if got == 0 {
            return Ok(None);
        }
        if got < 16 {
            return Err(Error::Parse {
                offset: self.offset,
                msg: format!("truncated record header ({} of 16 bytes)", got),
            });
        }
        let secs = u64::from(self.u32_at(&rec[0..4]));
        let frac = u64::from(self.u32_at(&rec[4..8]));
        let incl = self.u32_at(&rec[8..12]) as usize;
        if incl > 256 * 1024 {
            return Err(Error::Parse { offset: self.offset, msg: format!("record length {} is implausible", incl) });
        }
        let micros = if self.nanos { frac / 1000 } else { frac };
        let mut frame = vec![0u8; incl];
        read_exact_or(&mut self.inner, &mut frame, self.offset + 16, "record body")?;
        self.offset += 16 + incl as u64;
        Ok(Some(RawPacket { ts: Timestamp(secs * 1_000_000 + micros), frame }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<RawPacket>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_packet().transpose()
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    let got = read_up_to(r, buf).map_err(|e| Error::Parse { offset, msg: e.to_string() })?;
    if got < buf.len() {
        return Err(Error::Parse { offset, msg: format!("truncated {} ({} of {} bytes)", what, got, buf.len()) });
    }
    Ok(())
}

pub fn read_packets(path: impl AsRef<Path>) -> Result<Vec<RawPacket>> {
    PcapReader::open(path)?.collect()
}

pub fn write_packets(mut out: impl Write, packets: &[RawPacket]) -> io::Result<()> {
    let mut hdr = Vec::with_capacity(24);
    hdr.extend_from_slice(&MAGIC_MICROS.to_le_bytes());
    hdr.extend_from_slice(&2u16.to_le_bytes());
    hdr.extend_from_slice(&4u16.to_le_bytes());
    hdr.extend_from_slice(&0i32.to_le_bytes());
    hdr.extend_from_slice(&0u32.to_le_bytes());
    hdr.extend_from_slice(&SNAPLEN.to_le_bytes());
    hdr.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    out.write_all(&hdr)?;
    for p in packets {
        let len = p.frame.len() as u32;
        out.write_all(&((p.ts.0 / 1_000_000) as u32).to_le_bytes())?;
        out.write_all(&((p.ts.0 % 1_000_000) as u32).to_le_bytes())?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(&p.frame)?;
    }
    out.flush()
}

pub fn write_capture(path: impl AsRef<Path>, packets: &[RawPacket]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_packets(BufWriter::new(file), packets).map_err(|e| Error::io(path, e))
}

pub fn capture_bytes(packets: &[RawPacket]) -> Vec<u8> {
    let mut out = Vec::new();
    write_packets(&mut out, packets).expect("writing to a Vec cannot fail");
    out
}
