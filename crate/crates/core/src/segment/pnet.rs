//! `PNET` network files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PNET"  u16 version  u32 c  u32 h  u32 w  u32 layer_count
//! per layer: u8 tag  u8 flags(bit0 bottleneck, bit1 relu)  tag-specific u32 fields
//!     1 dwsep    in, out, kernel, stride, dilation
//!     2 downsample
//!     3 upsample
//!     4 skip     source
//!     5 sigmoid head
//! u32 weight_count  weight_count × f32
//! ```

use super::{Layer, LayerSpec, NetSpec, SegmentError};

pub const PNET_MAGIC: &[u8; 4] = b"PNET";
pub const PNET_VERSION: u16 = 1;

const FLAG_BOTTLENECK: u8 = 1;
const FLAG_RELU: u8 = 2;

pub fn write_pnet(net: &NetSpec) -> Vec<u8> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(PNET_MAGIC);
    out.extend_from_slice(&PNET_VERSION.to_le_bytes());
    let (c, h, w) = net.input_shape();
    for v in [c, h, w, net.layers().len()] {
        u32le(&mut out, v);
    }
    for spec in net.layers() {
        let mut flags = if spec.bottleneck { FLAG_BOTTLENECK } else { 0 };
        match spec.layer {
            Layer::DwSep { in_channels, out_channels, kernel, stride, dilation, relu } => {
                if relu {
                    flags |= FLAG_RELU;
                }
                out.extend_from_slice(&[1, flags]);
                for v in [in_channels, out_channels, kernel, stride, dilation] {
                    u32le(&mut out, v);
                }
            }
            Layer::Downsample => out.extend_from_slice(&[2, flags]),
            Layer::Upsample => out.extend_from_slice(&[3, flags]),
            Layer::SkipConcat { source } => {
                out.extend_from_slice(&[4, flags]);
                u32le(&mut out, source);
            }
            Layer::SigmoidHead => out.extend_from_slice(&[5, flags]),
        }
    }
    u32le(&mut out, net.weights().len());
    for w in net.weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SegmentError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(SegmentError::Format(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, SegmentError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, SegmentError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// Parses and validates a `PNET` buffer.
pub fn read_pnet(bytes: &[u8]) -> Result<NetSpec, SegmentError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != PNET_MAGIC {
        return Err(SegmentError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != PNET_VERSION {
        return Err(SegmentError::Format(format!("unsupported version {version}")));
    }
    let input = (r.u32()?, r.u32()?, r.u32()?);
    let n_layers = r.u32()?;
    if n_layers > 4096 {
        return Err(SegmentError::Format(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let tag = r.u8()?;
        let flags = r.u8()?;
        let layer = match tag {
            1 => Layer::DwSep {
                in_channels: r.u32()?,
                out_channels: r.u32()?,
                kernel: r.u32()?,
                stride: r.u32()?,
                dilation: r.u32()?,
                relu: flags & FLAG_RELU != 0,
            },
            2 => Layer::Downsample,
            3 => Layer::Upsample,
            4 => Layer::SkipConcat { source: r.u32()? },
            5 => Layer::SigmoidHead,
            t => return Err(SegmentError::Format(format!("layer {i}: unknown tag {t}"))),
        };
        layers.push(LayerSpec { layer, bottleneck: flags & FLAG_BOTTLENECK != 0 });
    }
    let n_weights = r.u32()?;
    let raw = r.take(n_weights.checked_mul(4).ok_or_else(|| SegmentError::Format("weight count overflow".into()))?)?;
    if r.pos != bytes.len() {
        return Err(SegmentError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let weights = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    NetSpec::new(input, layers, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let net = NetSpec::random((3, 16, 16), NetSpec::encoder_decoder_layers(3, 4, 2), 5).unwrap();
        let bytes = write_pnet(&net);
        assert_eq!(&bytes[..4], b"PNET");
        assert_eq!(read_pnet(&bytes).unwrap(), net);
    }

    #[test]
    fn corrupt_files_rejected() {
        let net = NetSpec::random((3, 8, 8), NetSpec::encoder_decoder_layers(3, 2, 1), 5).unwrap();
        let bytes = write_pnet(&net);
        assert!(matches!(read_pnet(&bytes[..bytes.len() - 3]), Err(SegmentError::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_pnet(&bad), Err(SegmentError::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(read_pnet(&bad), Err(SegmentError::Format(_))));
    }

    #[test]
    fn loader_checks_shape_chain() {
        // Declared input with odd size cannot be halved.
        let net = NetSpec::random((3, 8, 8), NetSpec::encoder_decoder_layers(3, 2, 1), 5).unwrap();
        let mut bytes = write_pnet(&net);
        bytes[10..14].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(read_pnet(&bytes), Err(SegmentError::ShapeChain { .. })));
    }
}
