//! Spatial sequence attention head.
//!
//! Every location `(x, y)` of a feature map gets a capsule: the `T` channel
//! vectors ending at that location and extending up the column (vertical) or
//! left along the row (horizontal). An LSTM encodes the capsule from its far
//! end to the anchor cell, an attention LSTM decoder re-reads the encoder
//! states, and `[dh_T ; attended_T]` is mapped to per-anchor class logits and
//! box offsets.
//!
//! All locations of a map are processed at once: capsule element `t` of every
//! location is one `[N*H*W, C]` row matrix.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use vssa_autodiff::{Padding, Real, SpatialAxis, Tape, Tensor, Var};

use crate::nn::{glorot_uniform, AttentionCell, Bound, LstmCell, ParamId, ParamStore};
use crate::{Error, Result};

/// Direction of the context sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// Capsules run down a column, ending at the anchor cell.
    Vertical,
    /// Capsules run along a row, ending at the anchor cell.
    Horizontal,
    /// No sequence head; plain 3x3 conv heads everywhere.
    None,
}

impl Orientation {
    fn axis(self) -> Option<SpatialAxis> {
        match self {
            Orientation::Vertical => Some(SpatialAxis::Height),
            Orientation::Horizontal => Some(SpatialAxis::Width),
            Orientation::None => None,
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Vertical => "vertical",
            Orientation::Horizontal => "horizontal",
            Orientation::None => "none",
        })
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vertical" => Ok(Orientation::Vertical),
            "horizontal" => Ok(Orientation::Horizontal),
            "none" => Ok(Orientation::None),
            other => Err(Error::Config(format!("unknown orientation `{other}` (vertical|horizontal|none)"))),
        }
    }
}

/// One location's capsule, materialized for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Capsule<T: Real> {
    /// `V_1..V_T`, far end first; positions off the map are zero vectors.
    pub features: Vec<Vec<T>>,
    /// `(x, y)` of the last element.
    pub anchor: (usize, usize),
    pub image: usize,
}

/// Capsules for every location of `map: [N,C,H,W]`, ordered `(n, y, x)`.
pub fn extract_capsules<T: Real>(map: &Tensor<T>, len: usize, orientation: Orientation) -> Result<Vec<Capsule<T>>> {
    let [n, c, h, w] = map.dims4("extract_capsules")?;
    if len == 0 {
        return Err(Error::Config("capsule length must be at least 1".into()));
    }
    let axis = orientation
        .axis()
        .ok_or_else(|| Error::Config("capsules need a vertical or horizontal orientation".into()))?;
    let mut out = Vec::with_capacity(n * h * w);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let features = (0..len)
                    .map(|t| {
                        let back = len - 1 - t;
                        let pos = match axis {
                            SpatialAxis::Height => y.checked_sub(back).map(|yy| (yy, x)),
                            SpatialAxis::Width => x.checked_sub(back).map(|xx| (y, xx)),
                        };
                        match pos {
                            Some((yy, xx)) => (0..c).map(|ch| map.at(&[b, ch, yy, xx])).collect(),
                            None => vec![T::zero(); c],
                        }
                    })
                    .collect();
                out.push(Capsule { features, anchor: (x, y), image: b });
            }
        }
    }
    Ok(out)
}

/// Capsule elements of every location as `len` row matrices `[N*H*W, C]`, far end first.
pub fn capsule_rows<T: Real>(tape: &mut Tape<T>, map: Var, len: usize, orientation: Orientation) -> Result<Vec<Var>> {
    if len == 0 {
        return Err(Error::Config("capsule length must be at least 1".into()));
    }
    let axis = orientation
        .axis()
        .ok_or_else(|| Error::Config("capsules need a vertical or horizontal orientation".into()))?;
    (0..len).map(|t| Ok(tape.gather_shifted(map, len - 1 - t, axis)?)).collect()
}

/// Encoder outputs for a batch of capsules.
#[derive(Debug, Clone)]
pub struct EncoderStates {
    /// `h_1..h_T`, each `[R, H]`.
    pub states: Vec<Var>,
    /// Final cell state `c_T`.
    pub cell: Var,
}

/// Decoder outputs at the last step.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub hidden: Var,
    pub attended: Var,
    /// Attention weights `[R, T]` of every decode step.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct VssaHead {
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    pub attention: AttentionCell,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
    pub capsule_len: usize,
    pub orientation: Orientation,
    pub hidden: usize,
    pub outputs: usize,
}

impl VssaHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        hidden: usize,
        capsule_len: usize,
        orientation: Orientation,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if orientation == Orientation::None {
            return Err(Error::Config("a sequence head needs a vertical or horizontal orientation".into()));
        }
        if capsule_len == 0 || hidden == 0 {
            return Err(Error::Config("capsule length and hidden size must be positive".into()));
        }
        Ok(VssaHead {
            encoder: LstmCell::new(store, &format!("{name}/encoder"), channels, hidden, rng),
            decoder: LstmCell::new(store, &format!("{name}/decoder"), hidden, hidden, rng),
            attention: AttentionCell::new(store, &format!("{name}/attention"), hidden, hidden, rng),
            head_weight: store.add(format!("{name}/head/weight"), glorot_uniform(&[outputs, 2 * hidden], 2 * hidden, outputs, rng), true),
            head_bias: store.add(format!("{name}/head/bias"), Tensor::zeros([outputs]), false),
            capsule_len,
            orientation,
            hidden,
            outputs,
        })
    }

    /// Runs the encoder over `V_1..V_T` from a zero state.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, capsule: &[Var]) -> Result<EncoderStates> {
        let first = *capsule.first().ok_or_else(|| Error::Config("empty capsule".into()))?;
        let rows = tape.shape(first)[0];
        let zeros = Tensor::zeros([rows, self.hidden]);
        let mut h = tape.constant(zeros.clone());
        let mut c = tape.constant(zeros);
        let mut states = Vec::with_capacity(capsule.len());
        for &v in capsule {
            (h, c) = self.encoder.step(tape, p, h, c, v)?;
            states.push(h);
        }
        Ok(EncoderStates { states, cell: c })
    }

    /// Attention decoding for `T` steps, starting from the encoder's final state.
    ///
    /// Step `t` scores the encoder states against the decoder state before the
    /// step, forms `attended_t = sum_i a_i h_i`, and then advances the decoder
    /// with input `h_t`.
    pub fn attend_decode<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, enc: &EncoderStates) -> Result<Decoded> {
        let last = *enc.states.last().ok_or_else(|| Error::Config("no encoder states".into()))?;
        let projected = self.attention.project_states(tape, p, &enc.states)?;
        let (mut dh, mut dc) = (last, enc.cell);
        let mut attention = Vec::with_capacity(enc.states.len());
        let mut attended = last;
        for &h_t in &enc.states {
            let a = self.attention.weights(tape, p, &projected, dh)?;
            attended = AttentionCell::attend(tape, a, &enc.states)?;
            attention.push(a);
            (dh, dc) = self.decoder.step(tape, p, dh, dc, h_t)?;
        }
        Ok(Decoded { hidden: dh, attended, attention })
    }

    /// `[dh_T ; attended_T] -> [R, outputs]`.
    pub fn predict<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, dec: &Decoded) -> Result<Var> {
        let joint = tape.concat(&[dec.hidden, dec.attended], 1)?;
        Ok(tape.linear(joint, p.var(self.head_weight), Some(p.var(self.head_bias)))?)
    }

    /// Per-location outputs `[N*H*W, outputs]` and the attention weights of each step.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, map: Var) -> Result<(Var, Vec<Var>)> {
        let capsule = capsule_rows(tape, map, self.capsule_len, self.orientation)?;
        let enc = self.encode(tape, p, &capsule)?;
        let dec = self.attend_decode(tape, p, &enc)?;
        Ok((self.predict(tape, p, &dec)?, dec.attention))
    }
}

/// Plain 3x3 convolution head.
#[derive(Debug, Clone)]
pub struct ConvHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub outputs: usize,
}

impl ConvHead {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, channels: usize, outputs: usize, rng: &mut R) -> Self {
        ConvHead {
            weight: store.add(
                format!("{name}/weight"),
                glorot_uniform(&[outputs, channels, 3, 3], channels * 9, outputs * 9, rng),
                true,
            ),
            bias: store.add(format!("{name}/bias"), Tensor::zeros([outputs]), false),
            outputs,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, map: Var) -> Result<Var> {
        let y = tape.conv2d(map, p.var(self.weight), Some(p.var(self.bias)), 1, Padding::Same)?;
        Ok(tape.nchw_to_rows(y)?)
    }
}

/// Prediction head of one pyramid level.
#[derive(Debug, Clone)]
pub enum LevelHead {
    Conv(ConvHead),
    Sequence(VssaHead),
}

impl LevelHead {
    /// Rows `[N*H*W, outputs]` plus attention weights (empty for conv heads).
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, map: Var) -> Result<(Var, Vec<Var>)> {
        match self {
            LevelHead::Conv(h) => Ok((h.forward(tape, p, map)?, Vec::new())),
            LevelHead::Sequence(h) => h.forward(tape, p, map),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_map() -> Tensor<f64> {
        // [1, 2, 5, 5], value 100*c + 10*y + x + 1
        Tensor::from_fn([1, 2, 5, 5], |i| {
            let (c, y, x) = (i / 25, (i / 5) % 5, i % 5);
            (100 * c + 10 * y + x + 1) as f64
        })
    }

    #[test]
    fn one_capsule_per_location() {
        let caps = extract_capsules(&ramp_map(), 3, Orientation::Vertical).unwrap();
        assert_eq!(caps.len(), 25);
        assert!(caps.iter().all(|c| c.features.len() == 3));
    }

    #[test]
    fn vertical_boundary_is_zero_padded() {
        let caps = extract_capsules(&ramp_map(), 3, Orientation::Vertical).unwrap();
        // (x=2, y=0)
        let cap = &caps[2];
        assert_eq!(cap.anchor, (2, 0));
        assert_eq!(cap.features, vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![3.0, 103.0]]);
        // (x=1, y=4) reads rows 2, 3, 4 of column 1
        let cap = &caps[4 * 5 + 1];
        assert_eq!(cap.features, vec![vec![22.0, 122.0], vec![32.0, 132.0], vec![42.0, 142.0]]);
    }

    #[test]
    fn horizontal_boundary_is_zero_padded() {
        let caps = extract_capsules(&ramp_map(), 3, Orientation::Horizontal).unwrap();
        // (x=0, y=2)
        let cap = &caps[2 * 5];
        assert_eq!(cap.anchor, (0, 2));
        assert_eq!(cap.features, vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![21.0, 121.0]]);
    }

    #[test]
    fn zero_length_is_rejected() {
        assert!(extract_capsules(&ramp_map(), 0, Orientation::Vertical).is_err());
        assert!(extract_capsules(&ramp_map(), 2, Orientation::None).is_err());
    }

    #[test]
    fn tape_rows_match_materialized_capsules() {
        let map = ramp_map();
        let caps = extract_capsules(&map, 4, Orientation::Vertical).unwrap();
        let mut tape = Tape::new();
        let m = tape.constant(map);
        let rows = capsule_rows(&mut tape, m, 4, Orientation::Vertical).unwrap();
        for (loc, cap) in caps.iter().enumerate() {
            for (t, v) in cap.features.iter().enumerate() {
                assert_eq!(&tape.value(rows[t]).data()[loc * 2..loc * 2 + 2], &v[..]);
            }
        }
    }

    #[test]
    fn orientation_parses() {
        assert_eq!("vertical".parse::<Orientation>().unwrap(), Orientation::Vertical);
        assert_eq!(Orientation::Horizontal.to_string(), "horizontal");
        assert!("diagonal".parse::<Orientation>().is_err());
    }
}
