//! Spatio-temporal attention state encoder and BEV context encoder.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use numkit::nn::{uniform, Conv2dLayer, Linear, LstmCell};
use numkit::{Bound, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use traffic_sim::{ObsConfig, FEATURE_DIM};

use crate::error::{Error, Result};
use crate::features::{EncoderInput, EGO_NOW_DIM};

/// Convolution channels after each stride-2 layer.
pub const CONV_CHANNELS: [usize; 3] = [16, 32, 64];
const KERNEL: usize = 3;
const STRIDE: usize = 2;
const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `s = Z ⊕ c`.
    #[default]
    Full,
    /// `s = Z`; no context encoder.
    ContextFree,
    /// `s = ego_now ⊕ c`; no temporal or attention modules.
    ContextOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::ContextFree, Variant::ContextOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::ContextFree => "context_free",
            Variant::ContextOnly => "context_only",
        }
    }

    fn temporal(self) -> bool {
        self != Variant::ContextOnly
    }

    fn context(self) -> bool {
        self != Variant::ContextFree
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// LSTM hidden size.
    pub d: usize,
    /// Attention width; must equal `d` for the residual sum.
    pub d_a: usize,
    pub d_z: usize,
    pub d_c: usize,
    /// Surrounding-vehicle slots.
    pub n: usize,
    pub map_size: usize,
    /// Metres per pixel.
    pub resolution: f64,
    pub sensor_range: f64,
    pub variant: Variant,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d: 64,
            d_a: 64,
            d_z: 128,
            d_c: 64,
            n: 8,
            map_size: 64,
            resolution: 0.5,
            sensor_range: 50.0,
            variant: Variant::Full,
        }
    }
}

/// Side length after the three stride-2 convolutions.
pub fn conv_output_side(map_size: usize) -> Option<usize> {
    let mut s = map_size;
    for _ in 0..CONV_CHANNELS.len() {
        if s < KERNEL {
            return None;
        }
        s = (s - KERNEL) / STRIDE + 1;
    }
    Some(s)
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("encoder: {m}")));
        if self.d == 0 || self.d_z == 0 || self.d_c == 0 || self.n == 0 {
            return bad("d, d_z, d_c and n must be positive".into());
        }
        if self.d_a != self.d {
            return bad(format!("d_a ({}) must equal d ({}) for the residual sum", self.d_a, self.d));
        }
        if self.d < 2 {
            return bad("d must be at least 2 for layer normalisation".into());
        }
        if self.map_size % 2 != 0 || self.map_size > 128 || conv_output_side(self.map_size).is_none() {
            return bad(format!("map_size {} must be even, at most 128 and at least 16", self.map_size));
        }
        if !(self.resolution > 0.0) || !(self.sensor_range > 0.0) {
            return bad("resolution and sensor_range must be positive".into());
        }
        Ok(())
    }

    pub fn obs_config(&self) -> ObsConfig {
        ObsConfig {
            n_slots: self.n,
            map_size: self.map_size,
            resolution: self.resolution,
            sensor_range: self.sensor_range,
        }
    }

    /// Length of `s_t`.
    pub fn output_dim(&self) -> usize {
        match self.variant {
            Variant::Full => self.d_z + self.d_c,
            Variant::ContextFree => self.d_z,
            Variant::ContextOnly => EGO_NOW_DIM + self.d_c,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub d_a: usize,
}

/// Intermediate and final encodings of one batch.
#[derive(Clone, Debug)]
pub struct Encoding {
    /// `[B x output_dim]`.
    pub s: Var,
    pub p_ego: Option<Var>,
    /// Attention weights `[B x n]`.
    pub weights: Option<Var>,
    pub alpha: Option<Var>,
    pub m: Option<Var>,
    pub z: Option<Var>,
    pub c: Option<Var>,
}

/// Parameter layout of the encoder. The tensors live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub lstm: Option<LstmCell>,
    pub attention: Option<Attention>,
    pub norm: Option<(ParamId, ParamId)>,
    pub fuse: Option<Linear>,
    pub convs: Vec<Conv2dLayer>,
    pub context: Option<Linear>,
    calls: Arc<AtomicU64>,
}

impl Encoder {
    /// Registers the encoder's parameters in `store` under `encoder.*`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut enc = Encoder {
            config: c.clone(),
            lstm: None,
            attention: None,
            norm: None,
            fuse: None,
            convs: Vec::new(),
            context: None,
            calls: Arc::new(AtomicU64::new(0)),
        };
        if c.variant.temporal() {
            enc.lstm = Some(LstmCell::new(store, "encoder.lstm", FEATURE_DIM, c.d, rng));
            let bound = 1.0 / (c.d as f64).sqrt();
            let mut proj = |name: &str| store.add(format!("encoder.attn.{name}"), uniform::<T, R>(rng, vec![c.d, c.d_a], bound));
            let (w_q, w_k, w_v) = (proj("w_q"), proj("w_k"), proj("w_v"));
            enc.attention = Some(Attention { w_q, w_k, w_v, d_a: c.d_a });
            enc.norm = Some((
                store.add("encoder.norm.gain", Tensor::ones(vec![c.d])),
                store.add("encoder.norm.bias", Tensor::zeros(vec![c.d])),
            ));
            enc.fuse = Some(Linear::new(store, "encoder.fuse", EGO_NOW_DIM + c.d, c.d_z, rng));
        }
        if c.variant.context() {
            let mut cin = 2;
            for (i, &cout) in CONV_CHANNELS.iter().enumerate() {
                enc.convs.push(Conv2dLayer::new(store, &format!("encoder.conv{}", i + 1), cin, cout, KERNEL, STRIDE, rng));
                cin = cout;
            }
            let side = conv_output_side(c.map_size).expect("validated map size");
            enc.context = Some(Linear::new(store, "encoder.context", cin * side * side, c.d_c, rng));
        }
        Ok(enc)
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// How many times the attention module has run (any batch size counts once).
    pub fn attention_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn lstm(&self) -> Result<&LstmCell> {
        self.lstm
            .as_ref()
            .ok_or_else(|| Error::Input(format!("variant {} has no temporal encoder", self.config.variant.name())))
    }

    /// Final LSTM hidden state per row. `sequence` is oldest first, each `[rows x 5]`.
    pub fn encode_temporal<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, sequence: &[Var]) -> Result<Var> {
        if sequence.len() != traffic_sim::HISTORY_LEN {
            return Err(Error::Input(format!(
                "history has {} samples, expected {}",
                sequence.len(),
                traffic_sim::HISTORY_LEN
            )));
        }
        Ok(self.lstm()?.run(tape, p, sequence)?)
    }

    /// Ego-query attention over `p_sv: [B*n x d]` with the additive `mask`.
    /// Returns `alpha: [B x d_a]` and `weights: [B x n]`; a batch row with
    /// every slot absent gets zero weights and a zero `alpha`.
    pub fn attend_ego<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        p: &Bound,
        p_ego: Var,
        p_sv: Var,
        mask: &[T],
    ) -> Result<(Var, Var)> {
        let a = self
            .attention
            .as_ref()
            .ok_or_else(|| Error::Input("variant has no attention module".into()))?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let b = tape.shape(p_ego)[0];
        let rows = tape.shape(p_sv)[0];
        if b == 0 || rows % b != 0 || mask.len() != rows {
            return Err(Error::Input(format!(
                "attention got {b} ego rows, {rows} vehicle rows and {} mask entries",
                mask.len()
            )));
        }
        let n = rows / b;
        let da = a.d_a;
        let q = tape.matmul(p_ego, p[a.w_q])?;
        let q = tape.reshape(q, &[b, 1, da])?;
        let k = tape.matmul(p_sv, p[a.w_k])?;
        let k = tape.reshape(k, &[b, n, da])?;
        let kt = tape.transpose_last2(k)?;
        let v = tape.matmul(p_sv, p[a.w_v])?;
        let v = tape.reshape(v, &[b, n, da])?;
        let logits = tape.bmm(q, kt)?;
        let logits = tape.scale(logits, T::one() / T::lit(da as f64).sqrt());
        let w = tape.masked_softmax_or_zero(logits, mask)?;
        let alpha = tape.bmm(w, v)?;
        let alpha = tape.reshape(alpha, &[b, da])?;
        let w = tape.reshape(w, &[b, n])?;
        Ok((alpha, w))
    }

    /// `m = Norm(alpha + p_ego)`, `Z = Linear(ego_now ⊕ m)`.
    pub fn fuse_state<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        p: &Bound,
        alpha: Var,
        p_ego: Var,
        ego_now: Var,
    ) -> Result<(Var, Var)> {
        let (gain, bias) = self.norm.ok_or_else(|| Error::Input("variant has no fusion layer".into()))?;
        let fuse = self.fuse.as_ref().expect("fusion exists with the norm");
        let sum = tape.add(alpha, p_ego)?;
        let m = tape.layer_norm(sum, p[gain], p[bias], T::lit(NORM_EPS))?;
        let x = tape.concat_cols(&[ego_now, m])?;
        let z = fuse.forward(tape, p, x)?;
        Ok((m, z))
    }

    /// Conv stack and linear head over `[B x 2 x S x S]` maps.
    pub fn encode_context<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, maps: Var) -> Result<Var> {
        let head = self
            .context
            .as_ref()
            .ok_or_else(|| Error::Input("variant has no context encoder".into()))?;
        let s = tape.shape(maps).to_vec();
        let size = self.config.map_size;
        if s.len() != 4 || s[1] != 2 || s[2] != size || s[3] != size {
            return Err(Error::Input(format!("context maps have shape {s:?}, expected [B, 2, {size}, {size}]")));
        }
        let mut h = maps;
        for conv in &self.convs {
            h = conv.forward(tape, p, h)?;
            h = tape.relu(h);
        }
        let flat = tape.reshape(h, &[s[0], head.in_dim])?;
        let c = head.forward(tape, p, flat)?;
        Ok(tape.relu(c))
    }

    /// Full forward pass of one batch.
    pub fn encode<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, input: &EncoderInput<T>) -> Result<Encoding> {
        if input.slots != self.config.n {
            return Err(Error::Input(format!("input has {} slots, encoder expects {}", input.slots, self.config.n)));
        }
        let b = input.batch;
        let ego_now = tape.constant(input.ego_now.clone());
        let mut out = Encoding {
            s: ego_now,
            p_ego: None,
            weights: None,
            alpha: None,
            m: None,
            z: None,
            c: None,
        };
        if self.config.variant.temporal() {
            let seq: Vec<Var> = input.sequence.iter().map(|t| tape.constant(t.clone())).collect();
            let h = self.encode_temporal(tape, p, &seq)?;
            let ego_rows: Vec<Option<usize>> = (0..b).map(Some).collect();
            let p_ego = tape.index_rows(h, &ego_rows)?;
            let sv_rows: Vec<Option<usize>> = input.slot_rows.iter().map(|r| r.map(|i| b + i)).collect();
            let p_sv = tape.index_rows(h, &sv_rows)?;
            let (alpha, w) = self.attend_ego(tape, p, p_ego, p_sv, &input.mask)?;
            let (m, z) = self.fuse_state(tape, p, alpha, p_ego, ego_now)?;
            out.p_ego = Some(p_ego);
            out.weights = Some(w);
            out.alpha = Some(alpha);
            out.m = Some(m);
            out.z = Some(z);
        }
        if self.config.variant.context() {
            let maps = tape.constant(input.maps.clone());
            out.c = Some(self.encode_context(tape, p, maps)?);
        }
        out.s = match (out.z, out.c) {
            (Some(z), Some(c)) => tape.concat_cols(&[z, c])?,
            (Some(z), None) => z,
            (None, Some(c)) => tape.concat_cols(&[ego_now, c])?,
            (None, None) => unreachable!("every variant has at least one module"),
        };
        Ok(out)
    }
}
