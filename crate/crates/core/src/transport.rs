//! Signal delivery between the card and a controller: an in-process
//! loopback wire (the DAC→ADC jumper of the real-time setup) and a tiny UDP
//! datagram protocol that lets an external process play the controller in
//! hardware-in-the-loop fashion. Raw 8-bit codes travel on the wire, so the
//! card's quantization is preserved end to end; on loss the loop holds the
//! last applied control.

use std::fmt;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use crate::controllers::rst::RstController;
use crate::reference::Reference;
use crate::vdevice::{dequantize, quantize, CardConfig, CardError, VirtualAddaCard};

/// Control-action channel ("channel one" of the card).
pub const ACTUATOR_CHANNEL: u8 = 0;
/// Process-feedback channel ("channel two").
pub const SENSOR_CHANNEL: u8 = 1;

pub const FRAME_LEN: usize = 10;
pub const MAGIC: [u8; 2] = [0x48, 0x4C];
pub const VERSION: u8 = 0x01;
pub const DEFAULT_PORT: u16 = 47055;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameError {
    BadLength { got: usize },
    BadMagic { got: [u8; 2] },
    BadVersion { got: u8 },
    BadType { got: u8 },
}

impl fmt::Display for FrameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameError::BadLength { got } => {
                write!(f, "frame must be {FRAME_LEN} bytes, got {got}")
            }
            FrameError::BadMagic { got } => write!(f, "bad magic {:02X} {:02X}", got[0], got[1]),
            FrameError::BadVersion { got } => write!(f, "unsupported version {got:#04X}"),
            FrameError::BadType { got } => write!(f, "unknown message type {got:#04X}"),
        }
    }
}

impl std::error::Error for FrameError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameType {
    /// card → controller: a sensor sample
    Sensor = 0x01,
    /// controller → card: a control action
    Actuator = 0x02,
    /// session start; seq carries the base step in microseconds
    Sync = 0x03,
    /// session end
    Bye = 0x04,
}

impl FrameType {
    fn from_byte(b: u8) -> Result<Self, FrameError> {
        match b {
            0x01 => Ok(FrameType::Sensor),
            0x02 => Ok(FrameType::Actuator),
            0x03 => Ok(FrameType::Sync),
            0x04 => Ok(FrameType::Bye),
            got => Err(FrameError::BadType { got }),
        }
    }
}

/// One 10-byte datagram: magic, version, type, big-endian sequence number,
/// channel, 8-bit sample code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HilFrame {
    pub msg_type: FrameType,
    pub seq: u32,
    pub channel: u8,
    pub code: u8,
}

pub fn encode_frame(f: &HilFrame) -> [u8; FRAME_LEN] {
    let mut out = [0u8; FRAME_LEN];
    out[0] = MAGIC[0];
    out[1] = MAGIC[1];
    out[2] = VERSION;
    out[3] = f.msg_type as u8;
    out[4..8].copy_from_slice(&f.seq.to_be_bytes());
    out[8] = f.channel;
    out[9] = f.code;
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<HilFrame, FrameError> {
    if bytes.len() != FRAME_LEN {
        return Err(FrameError::BadLength { got: bytes.len() });
    }
    if bytes[0..2] != MAGIC {
        return Err(FrameError::BadMagic {
            got: [bytes[0], bytes[1]],
        });
    }
    if bytes[2] != VERSION {
        return Err(FrameError::BadVersion { got: bytes[2] });
    }
    let msg_type = FrameType::from_byte(bytes[3])?;
    Ok(HilFrame {
        msg_type,
        seq: u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
        channel: bytes[8],
        code: bytes[9],
    })
}

/// DAC→ADC channel pairs. After propagation an ADC read on a bound channel
/// sees the most recently settled DAC voltage of its pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wire {
    pairs: Vec<(u8, u8)>,
}

impl Wire {
    pub fn new(pairs: Vec<(u8, u8)>) -> Self {
        Self { pairs }
    }

    /// Both channels jumpered straight back, the wiring of the real-time
    /// simulation setup.
    pub fn loopback() -> Self {
        Self {
            pairs: vec![(0, 0), (1, 1)],
        }
    }

    pub fn propagate(&self, card: &mut VirtualAddaCard) -> Result<(), CardError> {
        for &(dac_ch, adc_ch) in &self.pairs {
            let v = card.dac_settled(dac_ch)?;
            card.set_adc_wire(adc_ch, v)?;
        }
        Ok(())
    }
}

/// Executor-side endpoint: sends sensor codes, awaits the matching actuator
/// reply, holds the last value on timeout.
#[derive(Debug)]
pub struct HilLink {
    socket: UdpSocket,
    step_timeout: Duration,
    last_u_code: u8,
    sync_sent: bool,
    base_step_s: f64,
}

impl HilLink {
    pub fn connect(
        bind: &str,
        peer: impl ToSocketAddrs,
        step_timeout: Duration,
        base_step_s: f64,
    ) -> io::Result<Self> {
        let socket = UdpSocket::bind(bind)?;
        socket.connect(peer)?;
        let mut link = Self {
            socket,
            step_timeout,
            last_u_code: 0,
            sync_sent: false,
            base_step_s,
        };
        link.send_sync()?;
        Ok(link)
    }

    fn send_sync(&mut self) -> io::Result<()> {
        let micros = (self.base_step_s * 1e6).round() as u32;
        let frame = HilFrame {
            msg_type: FrameType::Sync,
            seq: micros,
            channel: ACTUATOR_CHANNEL,
            code: 0,
        };
        self.socket.send(&encode_frame(&frame))?;
        self.sync_sent = true;
        Ok(())
    }

    /// Send SENSOR(y_code) with this step's sequence number and await the
    /// ACTUATOR reply carrying the same sequence. Stale or duplicate
    /// sequence numbers are discarded; on timeout the previously applied
    /// code is returned with the `timed_out` flag set.
    pub fn round_trip(&mut self, seq: u32, y_code: u8) -> (u8, bool) {
        let frame = HilFrame {
            msg_type: FrameType::Sensor,
            seq,
            channel: SENSOR_CHANNEL,
            code: y_code,
        };
        if self.socket.send(&encode_frame(&frame)).is_err() {
            return (self.last_u_code, true);
        }
        let deadline = Instant::now() + self.step_timeout;
        let mut buf = [0u8; 64];
        loop {
            let now = Instant::now();
            if now >= deadline {
                return (self.last_u_code, true);
            }
            if self.socket.set_read_timeout(Some(deadline - now)).is_err() {
                return (self.last_u_code, true);
            }
            match self.socket.recv(&mut buf) {
                Ok(n) => match decode_frame(&buf[..n]) {
                    Ok(f) if f.msg_type == FrameType::Actuator && f.seq == seq => {
                        self.last_u_code = f.code;
                        return (f.code, false);
                    }
                    // stale replies and anything unexpected are dropped
                    _ => continue,
                },
                Err(e)
                    if e.kind() == io::ErrorKind::WouldBlock
                        || e.kind() == io::ErrorKind::TimedOut =>
                {
                    return (self.last_u_code, true);
                }
                Err(_) => return (self.last_u_code, true),
            }
        }
    }

    /// End the session; the peer exits its serve loop.
    pub fn close(self) {
        let frame = HilFrame {
            msg_type: FrameType::Bye,
            seq: 0,
            channel: ACTUATOR_CHANNEL,
            code: 0,
        };
        let _ = self.socket.send(&encode_frame(&frame));
    }
}

/// Control law run by the reference external-controller process.
#[allow(clippy::large_enum_variant)]
pub enum PeerLaw {
    /// Reply with the received code; diagnostic loop.
    Echo,
    /// Run an RST law: the reference is generated locally from the sample
    /// time carried by the sequence number, exactly as the in-process
    /// controller would see it.
    Rst {
        controller: RstController,
        reference: Reference,
        quantizer: CardConfig,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeerStats {
    pub sensor_frames: u64,
    pub replies: u64,
    pub got_bye: bool,
}

/// The external-controller side of the UDP protocol. `serve` answers every
/// SENSOR frame with an ACTUATOR frame until BYE or an idle timeout.
#[derive(Debug)]
pub struct HilPeer {
    socket: UdpSocket,
    base_step_s: f64,
}

impl HilPeer {
    /// `fallback_base_step_s` is used for the sample clock until a SYNC
    /// frame announces the real base step.
    pub fn bind(addr: impl ToSocketAddrs, fallback_base_step_s: f64) -> io::Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        Ok(Self {
            socket,
            base_step_s: fallback_base_step_s,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    pub fn serve(&mut self, law: &mut PeerLaw, idle_timeout: Duration) -> io::Result<PeerStats> {
        let mut stats = PeerStats::default();
        let mut buf = [0u8; 64];
        self.socket.set_read_timeout(Some(idle_timeout))?;
        loop {
            let (n, src) = match self.socket.recv_from(&mut buf) {
                Ok(x) => x,
                Err(e)
                    if e.kind() == io::ErrorKind::WouldBlock
                        || e.kind() == io::ErrorKind::TimedOut =>
                {
                    return Ok(stats);
                }
                Err(e) => return Err(e),
            };
            let frame = match decode_frame(&buf[..n]) {
                Ok(f) => f,
                Err(_) => continue,
            };
            match frame.msg_type {
                FrameType::Sync => {
                    // adopt the announced base step unless it is just the
                    // microsecond rounding of the one we already have, which
                    // would needlessly degrade the sample clock
                    let current_us = (self.base_step_s * 1e6).round() as u32;
                    if frame.seq > 0 && frame.seq != current_us {
                        self.base_step_s = frame.seq as f64 / 1e6;
                    }
                }
                FrameType::Sensor => {
                    stats.sensor_frames += 1;
                    let u_code = match law {
                        PeerLaw::Echo => frame.code,
                        PeerLaw::Rst {
                            controller,
                            reference,
                            quantizer,
                        } => {
                            let t = frame.seq as f64 * self.base_step_s;
                            let r = reference.value(t);
                            let y = dequantize(frame.code as u16, quantizer);
                            let u = controller.step(r, y);
                            quantize(u, quantizer) as u8
                        }
                    };
                    let reply = HilFrame {
                        msg_type: FrameType::Actuator,
                        seq: frame.seq,
                        channel: ACTUATOR_CHANNEL,
                        code: u_code,
                    };
                    self.socket.send_to(&encode_frame(&reply), src)?;
                    stats.replies += 1;
                }
                FrameType::Bye => {
                    stats.got_bye = true;
                    return Ok(stats);
                }
                FrameType::Actuator => {}
            }
        }
    }
}
