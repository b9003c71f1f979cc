use core::fmt;

/// Simulated time in whole microseconds. At 1 Mbit/s one bit lasts exactly
/// one microsecond, so every airtime in the model is integral.
pub type Micros = u64;

pub const MICROS_PER_SEC: Micros = 1_000_000;

/// Index of a node in the topology.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u16);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Locally administered 48-bit address used in encoded frames.
    pub fn to_mac(self) -> [u8; 6] {
        let [hi, lo] = self.0.to_be_bytes();
        [0x02, 0, 0, 0, hi, lo]
    }

    /// Inverse of [`NodeId::to_mac`]; the all-zero address means "absent".
    pub fn from_mac(mac: [u8; 6]) -> Option<NodeId> {
        if mac == [0; 6] {
            return None;
        }
        Some(NodeId(u16::from_be_bytes([mac[4], mac[5]])))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}", self.0)
    }
}

/// Globally unique identifier of a generated data packet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PacketId(pub u64);

impl fmt::Display for PacketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}
