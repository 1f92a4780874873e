//! Binary formats: bit-packed masks, full training checkpoints, and per-epoch
//! mask traces.
//!
//! All integers and floats are little-endian. A tensor block is
//! `ndims: u32, dims: [u32; ndims], data: [f32; prod(dims)]`; a mask block has
//! the same header followed by `ceil(prod(dims) / 8)` bytes, bit `j % 8` of
//! byte `j / 8` holding element `j`.
//!
//! Checkpoint layout (version 1):
//!
//! ```text
//! "SMCKPT\0\0" u32 version
//! u32 ndims, u32 dims[..]           per-example input shape
//! u32 num_classes, u32 num_layers
//! per layer: u8 tag (0 linear, 1 conv, 2 relu, 3 max-pool, 4 flatten)
//!     conv:     u32 in, out, kh, kw, stride, padding
//!     max-pool: u32 size, stride
//! per parametric layer:
//!     u32 layer_index, f64 prune_rate,
//!     weights, mask, momentum, velocity, bias, bias_velocity blocks
//! u64 epoch, u64 batches_seen, f64 learning_rate, f64 prune_rate
//! [u8; 32] rng seed, u64 rng stream, u128 rng word position
//! ```
//!
//! Mask trace layout (version 1): `"SMTRACE\0" u32 version u32 num_layers`
//! followed by records `u32 epoch` + one mask block per layer, until EOF.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layer, LayerState, SparseNetwork};
use crate::tensor::{ConvGeometry, Tensor};

const CHECKPOINT_MAGIC: &[u8; 8] = b"SMCKPT\0\0";
const TRACE_MAGIC: &[u8; 8] = b"SMTRACE\0";
const VERSION: u32 = 1;

/// Serializable position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Training-loop state stored next to the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: u64,
    pub batches_seen: u64,
    pub learning_rate: f64,
    pub prune_rate: f64,
    pub rng: RngState,
}

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(read_bytes(r)?) as usize)
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of file".into())
    } else {
        Error::Io(e)
    }
}

fn write_shape(w: &mut impl Write, shape: &[usize]) -> Result<()> {
    write_u32(w, shape.len())?;
    shape.iter().try_for_each(|&d| write_u32(w, d))
}

fn read_shape(r: &mut impl Read) -> Result<Vec<usize>> {
    let n = read_u32(r)?;
    if n == 0 || n > 8 {
        return Err(Error::Format(format!("implausible tensor rank {n}")));
    }
    let shape = (0..n).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
    if shape.contains(&0) {
        return Err(Error::Format(format!("zero extent in shape {shape:?}")));
    }
    Ok(shape)
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    write_shape(w, t.shape())?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let shape = read_shape(r)?;
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(truncated)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(&shape, data)
}

/// Writes a 0/1 mask as a bit-packed block.
pub fn write_mask(w: &mut impl Write, mask: &Tensor) -> Result<()> {
    write_shape(w, mask.shape())?;
    let mut bytes = vec![0u8; mask.numel().div_ceil(8)];
    for (j, &m) in mask.data().iter().enumerate() {
        if m != 0.0 {
            bytes[j / 8] |= 1 << (j % 8);
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_mask(r: &mut impl Read) -> Result<Tensor> {
    let shape = read_shape(r)?;
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut bytes).map_err(truncated)?;
    let data = (0..n)
        .map(|j| if bytes[j / 8] >> (j % 8) & 1 == 1 { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(&shape, data)
}

fn check_magic(r: &mut impl Read, magic: &[u8; 8]) -> Result<()> {
    let got: [u8; 8] = read_bytes(r)?;
    if &got != magic {
        return Err(Error::Format(format!("bad magic {got:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, net: &SparseNetwork, state: &TrainState) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(w, VERSION as usize)?;
    write_shape(w, net.input_shape())?;
    write_u32(w, net.num_classes())?;
    write_u32(w, net.layers().len())?;
    for layer in net.layers() {
        match layer {
            Layer::Linear(_) => w.write_all(&[0])?,
            Layer::Conv { geometry: g, .. } => {
                w.write_all(&[1])?;
                for v in [g.in_channels, g.out_channels, g.kernel_h, g.kernel_w, g.stride, g.padding] {
                    write_u32(w, v)?;
                }
            }
            Layer::Relu => w.write_all(&[2])?,
            Layer::MaxPool { size, stride } => {
                w.write_all(&[3])?;
                write_u32(w, *size)?;
                write_u32(w, *stride)?;
            }
            Layer::Flatten => w.write_all(&[4])?,
        }
    }
    for s in net.params() {
        write_u32(w, s.layer_index)?;
        w.write_all(&s.prune_rate.to_le_bytes())?;
        write_tensor(w, &s.weights)?;
        write_mask(w, &s.mask)?;
        write_tensor(w, &s.momentum)?;
        write_tensor(w, &s.velocity)?;
        write_tensor(w, &s.bias)?;
        write_tensor(w, &s.bias_velocity)?;
    }
    w.write_all(&state.epoch.to_le_bytes())?;
    w.write_all(&state.batches_seen.to_le_bytes())?;
    w.write_all(&state.learning_rate.to_le_bytes())?;
    w.write_all(&state.prune_rate.to_le_bytes())?;
    w.write_all(&state.rng.seed)?;
    w.write_all(&state.rng.stream.to_le_bytes())?;
    w.write_all(&state.rng.word_pos.to_le_bytes())?;
    Ok(())
}

enum LayerTag {
    Param(Option<ConvGeometry>),
    Relu,
    MaxPool(usize, usize),
    Flatten,
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(SparseNetwork, TrainState)> {
    check_magic(r, CHECKPOINT_MAGIC)?;
    let input_shape = read_shape(r)?;
    let num_classes = read_u32(r)?;
    let num_layers = read_u32(r)?;
    let mut tags = Vec::with_capacity(num_layers.min(1024));
    for _ in 0..num_layers {
        let [tag] = read_bytes::<1>(r)?;
        tags.push(match tag {
            0 => LayerTag::Param(None),
            1 => {
                let v = (0..6).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
                LayerTag::Param(Some(ConvGeometry {
                    in_channels: v[0],
                    out_channels: v[1],
                    kernel_h: v[2],
                    kernel_w: v[3],
                    stride: v[4],
                    padding: v[5],
                }))
            }
            2 => LayerTag::Relu,
            3 => LayerTag::MaxPool(read_u32(r)?, read_u32(r)?),
            4 => LayerTag::Flatten,
            other => return Err(Error::Format(format!("unknown layer tag {other}"))),
        });
    }
    let mut layers = Vec::with_capacity(tags.len());
    for tag in tags {
        layers.push(match tag {
            LayerTag::Param(geometry) => {
                let layer_index = read_u32(r)?;
                let prune_rate = f64::from_le_bytes(read_bytes(r)?);
                let weights = read_tensor(r)?;
                let mask = read_mask(r)?;
                let momentum = read_tensor(r)?;
                let velocity = read_tensor(r)?;
                let bias = read_tensor(r)?;
                let bias_velocity = read_tensor(r)?;
                let state = LayerState {
                    layer_index,
                    weights,
                    bias,
                    momentum,
                    mask,
                    prune_rate,
                    velocity,
                    bias_velocity,
                };
                state
                    .check_invariants()
                    .map_err(|e| Error::Format(format!("inconsistent layer: {e}")))?;
                match geometry {
                    Some(geometry) => {
                        if state.weights.shape() != geometry.kernel_shape() {
                            return Err(Error::Format("conv weights disagree with geometry".into()));
                        }
                        Layer::Conv { state, geometry }
                    }
                    None => Layer::Linear(state),
                }
            }
            LayerTag::Relu => Layer::Relu,
            LayerTag::MaxPool(size, stride) => Layer::MaxPool { size, stride },
            LayerTag::Flatten => Layer::Flatten,
        });
    }
    let state = TrainState {
        epoch: u64::from_le_bytes(read_bytes(r)?),
        batches_seen: u64::from_le_bytes(read_bytes(r)?),
        learning_rate: f64::from_le_bytes(read_bytes(r)?),
        prune_rate: f64::from_le_bytes(read_bytes(r)?),
        rng: RngState {
            seed: read_bytes(r)?,
            stream: u64::from_le_bytes(read_bytes(r)?),
            word_pos: u128::from_le_bytes(read_bytes(r)?),
        },
    };
    Ok((SparseNetwork::from_parts(layers, input_shape, num_classes), state))
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &SparseNetwork, state: &TrainState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, net, state)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(SparseNetwork, TrainState)> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

/// Appends one record of per-layer masks per epoch.
pub struct MaskTraceWriter<W: Write> {
    inner: W,
    num_layers: usize,
}

impl MaskTraceWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, num_layers: usize) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), num_layers)
    }
}

impl<W: Write> MaskTraceWriter<W> {
    pub fn new(mut inner: W, num_layers: usize) -> Result<Self> {
        inner.write_all(TRACE_MAGIC)?;
        write_u32(&mut inner, VERSION as usize)?;
        write_u32(&mut inner, num_layers)?;
        Ok(Self { inner, num_layers })
    }

    pub fn append<'a>(&mut self, epoch: usize, masks: impl IntoIterator<Item = &'a Tensor>) -> Result<()> {
        let masks: Vec<&Tensor> = masks.into_iter().collect();
        if masks.len() != self.num_layers {
            return Err(Error::Input(format!(
                "trace expects {} masks, got {}",
                self.num_layers,
                masks.len()
            )));
        }
        write_u32(&mut self.inner, epoch)?;
        masks.into_iter().try_for_each(|m| write_mask(&mut self.inner, m))?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// One trace record.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEpoch {
    pub epoch: usize,
    pub masks: Vec<Tensor>,
}

pub fn read_mask_trace(r: &mut impl Read) -> Result<Vec<TraceEpoch>> {
    check_magic(r, TRACE_MAGIC)?;
    let num_layers = read_u32(r)?;
    let mut out = Vec::new();
    loop {
        let mut first = [0u8; 4];
        match r.read(&mut first[..1])? {
            0 => break,
            _ => r.read_exact(&mut first[1..]).map_err(truncated)?,
        }
        let epoch = u32::from_le_bytes(first) as usize;
        let masks = (0..num_layers).map(|_| read_mask(r)).collect::<Result<Vec<_>>>()?;
        out.push(TraceEpoch { epoch, masks });
    }
    Ok(out)
}

pub fn load_mask_trace(path: impl AsRef<Path>) -> Result<Vec<TraceEpoch>> {
    read_mask_trace(&mut BufReader::new(File::open(path)?))
}
