//! Frame types, on-air durations, NAV arithmetic and the canonical byte layout.
//!
//! Layouts follow 802.11 control/data skeletons: a two-byte frame control
//! word (kind code, flag bits), a two-byte duration, six-byte addresses,
//! big-endian integers and a trailing CRC-32 frame check sequence. Data-family
//! frames carry a 22-byte application header per packet at the start of the
//! payload so a frame decodes back to the same packet descriptors.

use alloc::vec::Vec;
use thiserror::Error;

use crate::ids::{Micros, NodeId, PacketId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("{mode:?} CO-PNC needs the CTS NAV of a source that sent no valid CTS")]
    MissingCts { mode: CoPncMode },
    #[error("data NAV would be negative ({0} us); frame sizes are inconsistent")]
    NegativeNav(i64),
    #[error("duration {0} us does not fit the 16-bit duration field")]
    DurationOverflow(Micros),
    #[error("payload of {len} bytes cannot hold {packets} packet headers")]
    PayloadTooShort { len: usize, packets: usize },
    #[error("frame too short: {0} bytes")]
    Truncated(usize),
    #[error("unknown frame kind code {0:#04x}")]
    UnknownKind(u8),
    #[error("frame check sequence mismatch")]
    BadFcs,
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameKind {
    Rts,
    Cts,
    RtsPnc,
    CoPnc,
    Data,
    Ack,
    AckPnc,
    CncRts,
    CncData,
}

impl FrameKind {
    pub const ALL: [FrameKind; 9] = [
        FrameKind::Rts,
        FrameKind::Cts,
        FrameKind::RtsPnc,
        FrameKind::CoPnc,
        FrameKind::Data,
        FrameKind::Ack,
        FrameKind::AckPnc,
        FrameKind::CncRts,
        FrameKind::CncData,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FrameKind::Rts => "RTS",
            FrameKind::Cts => "CTS",
            FrameKind::RtsPnc => "RTS-PNC",
            FrameKind::CoPnc => "CO-PNC",
            FrameKind::Data => "DATA",
            FrameKind::Ack => "ACK",
            FrameKind::AckPnc => "ACK-PNC",
            FrameKind::CncRts => "CNC-RTS",
            FrameKind::CncData => "CNC-DATA",
        }
    }

    fn code(self) -> u8 {
        match self {
            FrameKind::Rts => 0xb4,
            FrameKind::Cts => 0xc4,
            FrameKind::Ack => 0xd4,
            FrameKind::Data => 0x08,
            FrameKind::RtsPnc => 0x74,
            FrameKind::CoPnc => 0x64,
            FrameKind::AckPnc => 0x54,
            FrameKind::CncRts => 0x44,
            FrameKind::CncData => 0x88,
        }
    }

    fn from_code(code: u8) -> Result<FrameKind, FrameError> {
        FrameKind::ALL
            .into_iter()
            .find(|k| k.code() == code)
            .ok_or(FrameError::UnknownKind(code))
    }
}

/// MAC byte counts (header plus FCS, excluding payload).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameSizes {
    pub rts: u64,
    pub rts_pnc: u64,
    pub cts: u64,
    pub co_pnc: u64,
    pub data_header: u64,
    pub ack: u64,
    pub ack_pnc: u64,
    pub cnc_rts: u64,
    pub cnc_rts_per_extra_dest: u64,
}

impl Default for FrameSizes {
    fn default() -> Self {
        FrameSizes {
            rts: 20,
            rts_pnc: 26,
            cts: 14,
            co_pnc: 16,
            data_header: 46,
            ack: 30,
            ack_pnc: 20,
            cnc_rts: 20,
            cnc_rts_per_extra_dest: 6,
        }
    }
}

/// Interframe spaces and PHY constants of the 1 Mbit/s DSSS PHY, in µs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimingParams {
    pub sifs: Micros,
    pub difs: Micros,
    pub slot: Micros,
    pub phy_hdr: Micros,
    /// Bits per microsecond.
    pub bit_rate: u64,
    pub sizes: FrameSizes,
    pub pnc_wait_timeout: Micros,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            sifs: 10,
            difs: 50,
            slot: 20,
            phy_hdr: 192,
            bit_rate: 1,
            sizes: FrameSizes::default(),
            pnc_wait_timeout: 1_000_000,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.sifs == 0 || self.slot == 0 || self.phy_hdr == 0 || self.bit_rate == 0 {
            return Err("timing values must be positive");
        }
        if self.difs != self.sifs + 2 * self.slot {
            return Err("difs must equal sifs + 2 * slot");
        }
        if self.pnc_wait_timeout == 0 {
            return Err("pnc_wait_timeout must be positive");
        }
        Ok(())
    }

    /// Airtime of `bytes` MAC bytes behind a PHY header.
    pub fn airtime_bytes(&self, bytes: u64) -> Micros {
        self.phy_hdr + (8 * bytes).div_ceil(self.bit_rate)
    }

    pub fn t_rts(&self) -> Micros {
        self.airtime_bytes(self.sizes.rts)
    }
    pub fn t_cts(&self) -> Micros {
        self.airtime_bytes(self.sizes.cts)
    }
    pub fn t_rts_pnc(&self) -> Micros {
        self.airtime_bytes(self.sizes.rts_pnc)
    }
    pub fn t_co_pnc(&self) -> Micros {
        self.airtime_bytes(self.sizes.co_pnc)
    }
    pub fn t_ack(&self) -> Micros {
        self.airtime_bytes(self.sizes.ack)
    }
    pub fn t_ack_pnc(&self) -> Micros {
        self.airtime_bytes(self.sizes.ack_pnc)
    }
    pub fn t_cnc_rts(&self, destinations: usize) -> Micros {
        let extra = destinations.saturating_sub(1) as u64;
        self.airtime_bytes(self.sizes.cnc_rts + extra * self.sizes.cnc_rts_per_extra_dest)
    }
    /// MAC header time of a data frame (T_MAC-Hd).
    pub fn t_mac_hdr(&self) -> Micros {
        (8 * self.sizes.data_header).div_ceil(self.bit_rate)
    }
    /// PHY plus MAC header of a data frame.
    pub fn t_data_hdr(&self) -> Micros {
        self.phy_hdr + self.t_mac_hdr()
    }
    /// Full data frame airtime, headers included.
    pub fn t_data(&self, payload_bytes: u64) -> Micros {
        self.airtime_bytes(self.sizes.data_header + payload_bytes)
    }
    /// Payload length carried by a data frame of the given airtime.
    pub fn payload_for_data_airtime(&self, airtime: Micros) -> u64 {
        (airtime.saturating_sub(self.phy_hdr) * self.bit_rate / 8).saturating_sub(self.sizes.data_header)
    }
}

/// Queue status piggybacked on DATA and ACK frames.
///
/// `t_q_cur_ms` is the residence time of the carried packet (for ACKs, which
/// carry no packet, it is the residence time of the advertised packet and the
/// offset is zero). `len_next == 0` means there is no further packet for the
/// `(next_hop, second_hop)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueueAdvert {
    pub next_hop: NodeId,
    pub second_hop: NodeId,
    pub t_q_cur_ms: u16,
    pub t_q_next_offset_ms: u16,
    pub len_next: u16,
}

pub const MAX_OFFSET_MS: u16 = 0x7fff;

impl QueueAdvert {
    /// Residence time of the advertised packet, in ms.
    pub fn t_q_next_ms(&self) -> u16 {
        self.t_q_cur_ms.saturating_sub(self.t_q_next_offset_ms)
    }
}

/// Quantize a residence time to the on-air millisecond field.
pub fn quantize_ms(us: Micros) -> u16 {
    (us / 1000).min(u64::from(u16::MAX)) as u16
}

/// Packet descriptor carried in the payload's application header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PacketInfo {
    pub id: PacketId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub len_bytes: u16,
    pub created_at: Micros,
}

const APP_HEADER_BYTES: usize = 22;

/// DATA (unicast, or the relay's coded forward when two packets are carried)
/// and CNC-DATA share this body.
#[derive(Clone, Debug, PartialEq)]
pub struct DataFrame {
    pub duration: Micros,
    pub transmitter: NodeId,
    pub receiver: NodeId,
    pub receiver2: Option<NodeId>,
    pub second_hop: Option<NodeId>,
    pub prev_hop: Option<NodeId>,
    pub t_q_cur_ms: u16,
    pub next_offset_ms: u16,
    pub len_next: u16,
    pub wait_for_pnc: bool,
    pub bit_reversed: bool,
    /// Sent by a source under a two-source CO-PNC; its NAV counts from the
    /// end of its header rather than the end of the frame.
    pub superposed: bool,
    pub packets: Vec<PacketInfo>,
}

impl DataFrame {
    pub fn payload_len(&self) -> u64 {
        self.packets.iter().map(|p| u64::from(p.len_bytes)).max().unwrap_or(0)
    }

    /// Queue advert for the receiver's virtual queue, if the packet has a
    /// second hop.
    pub fn advert(&self) -> Option<QueueAdvert> {
        let second_hop = self.second_hop?;
        Some(QueueAdvert {
            next_hop: self.receiver,
            second_hop,
            t_q_cur_ms: self.t_q_cur_ms,
            t_q_next_offset_ms: self.next_offset_ms,
            len_next: self.len_next,
        })
    }

    pub fn is_for(&self, node: NodeId) -> bool {
        self.receiver == node || self.receiver2 == Some(node)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoPncMode {
    AOnly,
    BOnly,
    Both,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    Rts {
        duration: Micros,
        ra: NodeId,
        ta: NodeId,
    },
    Cts {
        duration: Micros,
        ra: NodeId,
        has_packet: bool,
    },
    RtsPnc {
        duration: Micros,
        src_a: NodeId,
        src_b: NodeId,
        relay: NodeId,
    },
    CoPnc {
        duration: Micros,
        relay: NodeId,
        a_has_data: bool,
        b_has_data: bool,
        clear_wait_flags: bool,
        /// Synchronisation compensation; zero under ideal synchronisation.
        sync_offset: u16,
    },
    Data(DataFrame),
    Ack {
        duration: Micros,
        ta: NodeId,
        advert: Option<QueueAdvert>,
    },
    AckPnc {
        duration: Micros,
        acked: NodeId,
        acked2: Option<NodeId>,
    },
    CncRts {
        duration: Micros,
        ta: NodeId,
        destinations: Vec<NodeId>,
    },
    CncData(DataFrame),
}

impl Frame {
    pub fn kind(&self) -> FrameKind {
        match self {
            Frame::Rts { .. } => FrameKind::Rts,
            Frame::Cts { .. } => FrameKind::Cts,
            Frame::RtsPnc { .. } => FrameKind::RtsPnc,
            Frame::CoPnc { .. } => FrameKind::CoPnc,
            Frame::Data(_) => FrameKind::Data,
            Frame::Ack { .. } => FrameKind::Ack,
            Frame::AckPnc { .. } => FrameKind::AckPnc,
            Frame::CncRts { .. } => FrameKind::CncRts,
            Frame::CncData(_) => FrameKind::CncData,
        }
    }

    pub fn duration(&self) -> Micros {
        match self {
            Frame::Rts { duration, .. }
            | Frame::Cts { duration, .. }
            | Frame::RtsPnc { duration, .. }
            | Frame::CoPnc { duration, .. }
            | Frame::Ack { duration, .. }
            | Frame::AckPnc { duration, .. }
            | Frame::CncRts { duration, .. } => *duration,
            Frame::Data(d) | Frame::CncData(d) => d.duration,
        }
    }

    pub fn data(&self) -> Option<&DataFrame> {
        match self {
            Frame::Data(d) | Frame::CncData(d) => Some(d),
            _ => None,
        }
    }

    pub fn payload_len(&self) -> u64 {
        self.data().map_or(0, DataFrame::payload_len)
    }

    /// MAC bytes excluding payload.
    pub fn mac_bytes(&self, sizes: &FrameSizes) -> u64 {
        match self {
            Frame::Rts { .. } => sizes.rts,
            Frame::Cts { .. } => sizes.cts,
            Frame::RtsPnc { .. } => sizes.rts_pnc,
            Frame::CoPnc { .. } => sizes.co_pnc,
            Frame::Data(_) | Frame::CncData(_) => sizes.data_header,
            Frame::Ack { .. } => sizes.ack,
            Frame::AckPnc { .. } => sizes.ack_pnc,
            Frame::CncRts { destinations, .. } => {
                sizes.cnc_rts
                    + destinations.len().saturating_sub(1) as u64 * sizes.cnc_rts_per_extra_dest
            }
        }
    }

    /// Receivers named by the frame, for trace output.
    pub fn addressees(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        match self {
            Frame::Rts { ra, .. } | Frame::Cts { ra, .. } => out.push(*ra),
            Frame::RtsPnc { src_a, src_b, .. } => out.extend([*src_a, *src_b]),
            Frame::CoPnc { .. } | Frame::Ack { .. } => {}
            Frame::Data(d) | Frame::CncData(d) => {
                out.push(d.receiver);
                out.extend(d.receiver2);
            }
            Frame::AckPnc { acked, acked2, .. } => {
                out.push(*acked);
                out.extend(*acked2);
            }
            Frame::CncRts { destinations, .. } => out.extend(destinations.iter().copied()),
        }
        out
    }

    /// Airtime of the PHY plus MAC header. For control frames the header is
    /// the whole frame.
    pub fn header_airtime(&self, t: &TimingParams) -> Micros {
        match self {
            Frame::Data(_) | Frame::CncData(_) => t.t_data_hdr(),
            _ => frame_airtime(self, t),
        }
    }

    pub fn is_bit_reversed(&self) -> bool {
        self.data().is_some_and(|d| d.bit_reversed)
    }

    /// Offset from the frame start at which the NAV carried in the header
    /// starts counting.
    pub fn nav_reference_offset(&self, t: &TimingParams) -> Micros {
        match self.data() {
            Some(d) if d.superposed && !d.bit_reversed => t.t_data_hdr(),
            _ => frame_airtime(self, t),
        }
    }
}

/// On-air duration of a frame: PHY header plus MAC bytes plus payload.
pub fn frame_airtime(frame: &Frame, timing: &TimingParams) -> Micros {
    timing.airtime_bytes(frame.mac_bytes(&timing.sizes) + frame.payload_len())
}

// NAV arithmetic.

/// NAV of RTS-PNC: the relay holds the channel until CO-PNC has been sent.
pub fn nav_rts_pnc(t: &TimingParams) -> Micros {
    3 * t.sifs + 2 * t.t_cts() + t.t_co_pnc()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtsRole {
    A,
    B,
    NoPacket,
}

/// NAV a source writes in its CTS answering RTS-PNC, covering the exchange
/// as if it were the only transmitting source.
pub fn nav_cts(role: CtsRole, data_airtime: Micros, t: &TimingParams) -> Micros {
    match role {
        CtsRole::NoPacket => 0,
        CtsRole::A => 4 * t.sifs + t.t_cts() + t.t_co_pnc() + data_airtime + t.t_ack(),
        CtsRole::B => {
            4 * t.sifs + t.t_co_pnc() + t.phy_hdr + t.t_mac_hdr() + data_airtime + t.t_ack()
        }
    }
}

/// NAV of CO-PNC, derived from the CTS NAVs of the transmitting source(s).
pub fn nav_co_pnc(
    mode: CoPncMode,
    nav_cts_a: Option<Micros>,
    nav_cts_b: Option<Micros>,
    t: &TimingParams,
) -> Result<Micros, FrameError> {
    let missing = FrameError::MissingCts { mode };
    let sub = |x: Micros, y: Micros| {
        x.checked_sub(y)
            .ok_or(FrameError::NegativeNav(x as i64 - y as i64))
    };
    match mode {
        CoPncMode::AOnly => {
            let a = nav_cts_a.filter(|&v| v > 0).ok_or(missing)?;
            sub(a, 2 * t.sifs + t.t_cts() + t.t_co_pnc())
        }
        CoPncMode::BOnly => {
            let b = nav_cts_b.filter(|&v| v > 0).ok_or(missing)?;
            sub(b, t.sifs + t.t_co_pnc())
        }
        CoPncMode::Both => {
            nav_cts_a.filter(|&v| v > 0).ok_or(missing.clone())?;
            let b = nav_cts_b.filter(|&v| v > 0).ok_or(missing)?;
            Ok(sub(2 * sub(b, t.t_co_pnc())? + t.t_ack_pnc(), t.sifs)?)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataRole {
    A,
    B,
    Single,
}

/// NAV a source writes in its data frame. Under a two-source exchange it
/// counts from the end of that frame's header.
pub fn nav_data(
    role: DataRole,
    nav_co_pnc_both: Micros,
    data_airtime_b: Micros,
    t: &TimingParams,
) -> Result<Micros, FrameError> {
    let hdr = (t.phy_hdr + t.t_mac_hdr()) as i64;
    let v = match role {
        DataRole::Single => return Ok(0),
        DataRole::A => nav_co_pnc_both as i64 - t.sifs as i64 - hdr,
        DataRole::B => {
            nav_co_pnc_both as i64 - 2 * t.sifs as i64 - hdr - data_airtime_b as i64
        }
    };
    if v < 0 {
        return Err(FrameError::NegativeNav(v));
    }
    Ok(v as Micros)
}

/// NAV of the relay's coded forward: two source ACKs then ACK-PNC.
pub fn nav_pnc_forward(t: &TimingParams) -> Micros {
    3 * t.sifs + 2 * t.t_ack() + t.t_ack_pnc()
}

/// NAV of a source's ACK to the relay's coded forward. The first ACK also
/// covers the second source's ACK.
pub fn nav_pnc_ack(first: bool, t: &TimingParams) -> Micros {
    if first {
        2 * t.sifs + t.t_ack() + t.t_ack_pnc()
    } else {
        t.sifs + t.t_ack_pnc()
    }
}

/// Plain 802.11 RTS NAV for a data frame of `data_airtime`.
pub fn nav_rts(data_airtime: Micros, t: &TimingParams) -> Micros {
    3 * t.sifs + t.t_cts() + data_airtime + t.t_ack()
}

pub fn nav_cts_reply(rts_nav: Micros, t: &TimingParams) -> Micros {
    rts_nav.saturating_sub(t.sifs + t.t_cts())
}

pub fn nav_unicast_data(t: &TimingParams) -> Micros {
    t.sifs + t.t_ack()
}

/// CNC reliable broadcast: RTS to n destinations, n sequential CTSs, coded
/// DATA, n sequential ACKs.
pub fn nav_cnc_rts(destinations: usize, data_airtime: Micros, t: &TimingParams) -> Micros {
    let n = destinations as u64;
    n * (t.sifs + t.t_cts()) + t.sifs + data_airtime + n * (t.sifs + t.t_ack())
}

/// NAV of the `index`-th CTS (0-based) in a CNC exchange.
pub fn nav_cnc_cts(rts_nav: Micros, index: usize, t: &TimingParams) -> Micros {
    rts_nav.saturating_sub((index as u64 + 1) * (t.sifs + t.t_cts()))
}

pub fn nav_cnc_data(destinations: usize, t: &TimingParams) -> Micros {
    destinations as u64 * (t.sifs + t.t_ack())
}

pub fn nav_cnc_ack(destinations: usize, index: usize, t: &TimingParams) -> Micros {
    (destinations - 1 - index) as u64 * (t.sifs + t.t_ack())
}

// Byte layout.

const FCS_BYTES: usize = 4;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn addr(&mut self, n: Option<NodeId>) {
        self.0.extend_from_slice(&n.map_or([0; 6], NodeId::to_mac));
    }
    fn duration(&mut self, d: Micros) -> Result<(), FrameError> {
        let v = u16::try_from(d).map_err(|_| FrameError::DurationOverflow(d))?;
        self.u16(v);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        let end = self.pos + n;
        let s = self.buf.get(self.pos..end).ok_or(FrameError::Truncated(self.buf.len()))?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, FrameError> {
        let s = self.take(2)?;
        Ok(u16::from_be_bytes([s[0], s[1]]))
    }
    fn u64(&mut self) -> Result<u64, FrameError> {
        let s = self.take(8)?;
        let mut b = [0; 8];
        b.copy_from_slice(s);
        Ok(u64::from_be_bytes(b))
    }
    fn addr(&mut self) -> Result<Option<NodeId>, FrameError> {
        let s = self.take(6)?;
        let mut b = [0; 6];
        b.copy_from_slice(s);
        Ok(NodeId::from_mac(b))
    }
    fn req_addr(&mut self) -> Result<NodeId, FrameError> {
        self.addr()?.ok_or(FrameError::Malformed("missing address"))
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

const FLAG_HAS_PACKET: u8 = 0x01;
const FLAG_BIT_REVERSED: u8 = 0x02;
const FLAG_SUPERPOSED: u8 = 0x04;

const CO_A_HAS_DATA: u16 = 0x8000;
const CO_B_HAS_DATA: u16 = 0x4000;
const CO_CLEAR_WAIT: u16 = 0x2000;
const CO_SYNC_MASK: u16 = 0x1fff;

const WAIT_FLAG_BIT: u16 = 0x8000;

/// Serialize a frame to its canonical byte layout, FCS included.
pub fn encode(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    let mut w = Writer(Vec::new());
    w.u8(frame.kind().code());
    let flags = match frame {
        Frame::Cts { has_packet: true, .. } => FLAG_HAS_PACKET,
        Frame::Data(d) | Frame::CncData(d) => {
            (if d.bit_reversed { FLAG_BIT_REVERSED } else { 0 })
                | (if d.superposed { FLAG_SUPERPOSED } else { 0 })
        }
        _ => 0,
    };
    w.u8(flags);
    w.duration(frame.duration())?;
    match frame {
        Frame::Rts { ra, ta, .. } => {
            w.addr(Some(*ra));
            w.addr(Some(*ta));
        }
        Frame::Cts { ra, .. } => w.addr(Some(*ra)),
        Frame::RtsPnc { src_a, src_b, relay, .. } => {
            w.addr(Some(*src_a));
            w.addr(Some(*src_b));
            w.addr(Some(*relay));
        }
        Frame::CoPnc {
            relay,
            a_has_data,
            b_has_data,
            clear_wait_flags,
            sync_offset,
            ..
        } => {
            w.addr(Some(*relay));
            let mut ctrl = sync_offset & CO_SYNC_MASK;
            if *a_has_data {
                ctrl |= CO_A_HAS_DATA;
            }
            if *b_has_data {
                ctrl |= CO_B_HAS_DATA;
            }
            if *clear_wait_flags {
                ctrl |= CO_CLEAR_WAIT;
            }
            w.u16(ctrl);
        }
        Frame::Data(d) | Frame::CncData(d) => encode_data(&mut w, d)?,
        Frame::Ack { ta, advert, .. } => {
            w.addr(Some(*ta));
            w.addr(advert.map(|a| a.next_hop));
            w.addr(advert.map(|a| a.second_hop));
            w.u16(advert.map_or(0, |a| a.t_q_next_ms()));
            w.u16(advert.map_or(0, |a| a.len_next));
        }
        Frame::AckPnc { acked, acked2, .. } => {
            w.addr(Some(*acked));
            w.addr(*acked2);
        }
        Frame::CncRts { ta, destinations, .. } => {
            if destinations.is_empty() {
                return Err(FrameError::Malformed("CNC-RTS needs a destination"));
            }
            w.addr(Some(*ta));
            for d in destinations {
                w.addr(Some(*d));
            }
        }
    }
    let fcs = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&fcs.to_be_bytes());
    Ok(w.0)
}

fn encode_data(w: &mut Writer, d: &DataFrame) -> Result<(), FrameError> {
    if d.packets.is_empty() || d.packets.len() > 2 {
        return Err(FrameError::Malformed("data frame carries one or two packets"));
    }
    let payload = d.payload_len() as usize;
    if payload < APP_HEADER_BYTES * d.packets.len() {
        return Err(FrameError::PayloadTooShort {
            len: payload,
            packets: d.packets.len(),
        });
    }
    w.addr(Some(d.receiver));
    w.addr(Some(d.transmitter));
    w.addr(d.receiver2);
    w.u16(d.packets[0].id.0 as u16);
    w.addr(d.second_hop);
    w.addr(d.prev_hop);
    w.u16(d.t_q_cur_ms);
    let mut off = d.next_offset_ms.min(MAX_OFFSET_MS);
    if d.wait_for_pnc {
        off |= WAIT_FLAG_BIT;
    }
    w.u16(off);
    w.u16(d.len_next);
    let start = w.0.len();
    for p in &d.packets {
        w.u64(p.id.0);
        w.u16(p.origin.0);
        w.u16(p.destination.0);
        w.u16(p.len_bytes);
        w.u64(p.created_at);
    }
    w.0.resize(start + payload, 0);
    Ok(())
}

/// Parse a frame from its canonical byte layout, checking the FCS.
pub fn decode(bytes: &[u8]) -> Result<Frame, FrameError> {
    if bytes.len() < 4 + FCS_BYTES {
        return Err(FrameError::Truncated(bytes.len()));
    }
    let (body, fcs) = bytes.split_at(bytes.len() - FCS_BYTES);
    if crc32fast::hash(body).to_be_bytes() != fcs {
        return Err(FrameError::BadFcs);
    }
    let mut r = Reader { buf: body, pos: 0 };
    let kind = FrameKind::from_code(r.u8()?)?;
    let flags = r.u8()?;
    let duration = Micros::from(r.u16()?);
    let frame = match kind {
        FrameKind::Rts => Frame::Rts {
            duration,
            ra: r.req_addr()?,
            ta: r.req_addr()?,
        },
        FrameKind::Cts => Frame::Cts {
            duration,
            ra: r.req_addr()?,
            has_packet: flags & FLAG_HAS_PACKET != 0,
        },
        FrameKind::RtsPnc => Frame::RtsPnc {
            duration,
            src_a: r.req_addr()?,
            src_b: r.req_addr()?,
            relay: r.req_addr()?,
        },
        FrameKind::CoPnc => {
            let relay = r.req_addr()?;
            let ctrl = r.u16()?;
            Frame::CoPnc {
                duration,
                relay,
                a_has_data: ctrl & CO_A_HAS_DATA != 0,
                b_has_data: ctrl & CO_B_HAS_DATA != 0,
                clear_wait_flags: ctrl & CO_CLEAR_WAIT != 0,
                sync_offset: ctrl & CO_SYNC_MASK,
            }
        }
        FrameKind::Data => Frame::Data(decode_data(&mut r, duration, flags)?),
        FrameKind::CncData => Frame::CncData(decode_data(&mut r, duration, flags)?),
        FrameKind::Ack => {
            let ta = r.req_addr()?;
            let next = r.addr()?;
            let second = r.addr()?;
            let t_q = r.u16()?;
            let len_next = r.u16()?;
            let advert = match (next, second) {
                (Some(next_hop), Some(second_hop)) => Some(QueueAdvert {
                    next_hop,
                    second_hop,
                    t_q_cur_ms: t_q,
                    t_q_next_offset_ms: 0,
                    len_next,
                }),
                _ => None,
            };
            Frame::Ack { duration, ta, advert }
        }
        FrameKind::AckPnc => Frame::AckPnc {
            duration,
            acked: r.req_addr()?,
            acked2: r.addr()?,
        },
        FrameKind::CncRts => {
            let ta = r.req_addr()?;
            let mut destinations = Vec::new();
            while r.remaining() >= 6 {
                destinations.push(r.req_addr()?);
            }
            if destinations.is_empty() {
                return Err(FrameError::Malformed("CNC-RTS needs a destination"));
            }
            Frame::CncRts { duration, ta, destinations }
        }
    };
    if r.remaining() != 0 {
        return Err(FrameError::Malformed("trailing bytes"));
    }
    Ok(frame)
}

fn decode_data(r: &mut Reader<'_>, duration: Micros, flags: u8) -> Result<DataFrame, FrameError> {
    let receiver = r.req_addr()?;
    let transmitter = r.req_addr()?;
    let receiver2 = r.addr()?;
    let _seq = r.u16()?;
    let second_hop = r.addr()?;
    let prev_hop = r.addr()?;
    let t_q_cur_ms = r.u16()?;
    let off = r.u16()?;
    let len_next = r.u16()?;
    let payload = r.remaining();
    let count = if receiver2.is_some() { 2 } else { 1 };
    if payload < APP_HEADER_BYTES * count {
        return Err(FrameError::PayloadTooShort { len: payload, packets: count });
    }
    let mut packets = Vec::with_capacity(count);
    for _ in 0..count {
        packets.push(PacketInfo {
            id: PacketId(r.u64()?),
            origin: NodeId(r.u16()?),
            destination: NodeId(r.u16()?),
            len_bytes: r.u16()?,
            created_at: r.u64()?,
        });
    }
    let max_len = packets.iter().map(|p| usize::from(p.len_bytes)).max().unwrap_or(0);
    if max_len != payload {
        return Err(FrameError::Malformed("payload length disagrees with packet headers"));
    }
    r.take(payload - APP_HEADER_BYTES * count)?;
    Ok(DataFrame {
        duration,
        transmitter,
        receiver,
        receiver2,
        second_hop,
        prev_hop,
        t_q_cur_ms,
        next_offset_ms: off & MAX_OFFSET_MS,
        len_next,
        wait_for_pnc: off & WAIT_FLAG_BIT != 0,
        bit_reversed: flags & FLAG_BIT_REVERSED != 0,
        superposed: flags & FLAG_SUPERPOSED != 0,
        packets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t() -> TimingParams {
        TimingParams::default()
    }

    fn data(payload: u16) -> Frame {
        Frame::Data(DataFrame {
            duration: 442,
            transmitter: NodeId(1),
            receiver: NodeId(2),
            receiver2: None,
            second_hop: Some(NodeId(3)),
            prev_hop: None,
            t_q_cur_ms: 12,
            next_offset_ms: 4,
            len_next: 1000,
            wait_for_pnc: true,
            bit_reversed: false,
            superposed: false,
            packets: vec![PacketInfo {
                id: PacketId(77),
                origin: NodeId(1),
                destination: NodeId(3),
                len_bytes: payload,
                created_at: 123_456,
            }],
        })
    }

    #[test]
    fn airtimes_of_default_frames() {
        let t = t();
        assert_eq!(t.t_cts(), 304);
        assert_eq!(t.t_ack(), 432);
        assert_eq!(t.t_co_pnc(), 320);
        assert_eq!(t.t_rts_pnc(), 400);
        assert_eq!(t.t_ack_pnc(), 352);
        assert_eq!(t.t_rts(), 352);
        assert_eq!(t.t_data(1000), 8560);
        assert_eq!(frame_airtime(&data(1000), &t), 8560);
        assert_eq!(t.t_mac_hdr(), 368);
        assert_eq!(t.payload_for_data_airtime(8560), 1000);
        assert_eq!(t.t_cnc_rts(2), 400);
        assert!(t.validate().is_ok());
    }

    #[test]
    fn timing_validation() {
        let mut bad = t();
        bad.difs = 40;
        assert!(bad.validate().is_err());
        let mut bad = t();
        bad.sifs = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rts_pnc_nav() {
        let t = t();
        assert_eq!(nav_rts_pnc(&t), 958);
        let mut t2 = t.clone();
        t2.sifs *= 2;
        t2.difs = t2.sifs + 2 * t2.slot;
        assert_eq!(nav_rts_pnc(&t2), 958 + 30);
    }

    #[test]
    fn cts_navs() {
        let t = t();
        assert_eq!(nav_cts(CtsRole::NoPacket, 8560, &t), 0);
        assert_eq!(nav_cts(CtsRole::A, 8560, &t), 9656);
        assert_eq!(nav_cts(CtsRole::B, 8560, &t), 9912);
        assert_eq!(
            nav_cts(CtsRole::B, 8560, &t) - nav_cts(CtsRole::A, 8560, &t),
            t.phy_hdr + t.t_mac_hdr() - t.t_cts()
        );
    }

    #[test]
    fn co_pnc_navs() {
        let t = t();
        assert_eq!(nav_co_pnc(CoPncMode::Both, Some(9656), Some(9912), &t), Ok(19526));
        assert_eq!(nav_co_pnc(CoPncMode::AOnly, Some(9656), None, &t), Ok(9012));
        assert_eq!(nav_co_pnc(CoPncMode::BOnly, Some(0), Some(9912), &t), Ok(9582));
        assert_eq!(
            nav_co_pnc(CoPncMode::Both, Some(0), Some(9912), &t),
            Err(FrameError::MissingCts { mode: CoPncMode::Both })
        );
        assert!(nav_co_pnc(CoPncMode::AOnly, None, Some(9912), &t).is_err());
    }

    #[test]
    fn data_navs() {
        let t = t();
        assert_eq!(nav_data(DataRole::Single, 19526, 8560, &t), Ok(0));
        assert_eq!(nav_data(DataRole::A, 19526, 8560, &t), Ok(18956));
        assert_eq!(nav_data(DataRole::B, 19526, 8560, &t), Ok(10386));
        assert!(matches!(
            nav_data(DataRole::B, 5000, 8560, &t),
            Err(FrameError::NegativeNav(_))
        ));
    }

    #[test]
    fn encoded_lengths_match_declared_sizes() {
        let t = t();
        let frames = [
            Frame::Rts { duration: 1, ra: NodeId(1), ta: NodeId(2) },
            Frame::Cts { duration: 0, ra: NodeId(1), has_packet: false },
            Frame::RtsPnc { duration: 958, src_a: NodeId(1), src_b: NodeId(2), relay: NodeId(3) },
            Frame::CoPnc {
                duration: 5,
                relay: NodeId(3),
                a_has_data: true,
                b_has_data: false,
                clear_wait_flags: true,
                sync_offset: 0,
            },
            data(1000),
            Frame::Ack { duration: 0, ta: NodeId(4), advert: None },
            Frame::AckPnc { duration: 0, acked: NodeId(1), acked2: Some(NodeId(2)) },
            Frame::CncRts { duration: 9, ta: NodeId(3), destinations: vec![NodeId(1), NodeId(2)] },
        ];
        for f in &frames {
            let bytes = encode(f).unwrap();
            assert_eq!(
                bytes.len() as u64,
                f.mac_bytes(&t.sizes) + f.payload_len(),
                "{:?}",
                f.kind()
            );
            assert_eq!(&decode(&bytes).unwrap(), f);
        }
    }

    #[test]
    fn decode_rejects_corruption() {
        let mut bytes = encode(&data(200)).unwrap();
        bytes[10] ^= 0x40;
        assert_eq!(decode(&bytes), Err(FrameError::BadFcs));
        assert!(matches!(decode(&bytes[..5]), Err(FrameError::Truncated(_))));
    }

    #[test]
    fn oversize_duration_rejected() {
        let f = Frame::Rts { duration: 70_000, ra: NodeId(1), ta: NodeId(2) };
        assert_eq!(encode(&f), Err(FrameError::DurationOverflow(70_000)));
    }

    #[test]
    fn superposed_a_frame_counts_nav_from_header_end() {
        let t = t();
        let mut f = data(1000);
        if let Frame::Data(d) = &mut f {
            d.superposed = true;
        }
        assert_eq!(f.nav_reference_offset(&t), 560);
        if let Frame::Data(d) = &mut f {
            d.bit_reversed = true;
        }
        assert_eq!(f.nav_reference_offset(&t), 8560);
    }
}
