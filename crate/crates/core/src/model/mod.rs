//! Two-stream intensity model.
//!
//! The synchronous stream runs a conv-LSTM over every frame (image plus
//! detection mask). The asynchronous stream runs a second conv-LSTM only on
//! frames that hold events, fed with the event mask and the inter-event gap.
//! Its hidden state is carried to the current frame by a per-pixel MLP that
//! sees the elapsed time, and a 1x1 head combines both streams into a
//! positive intensity map.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    load_checkpoint, save_checkpoint, Activation, Bound, ConvLstmCell, ConvStack, IntensityActivation, LstmState, Mlp,
    ParamId, ParamStore,
};
use crate::pointprocess::{predict_events, EventGrid, IntensityMap, Prediction};
use crate::tensor::{Graph, Padding, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    /// No recurrence: the intensity depends on the current frame only.
    #[serde(rename = "timeindep")]
    TimeIndependent,
    #[serde(rename = "sync")]
    SyncOnly,
    #[serde(rename = "syncasync")]
    SyncAsync,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [
        ModelVariant::TimeIndependent,
        ModelVariant::SyncOnly,
        ModelVariant::SyncAsync,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::TimeIndependent => "timeindep",
            ModelVariant::SyncOnly => "sync",
            ModelVariant::SyncAsync => "syncasync",
        }
    }

    pub fn has_sync(self) -> bool {
        self != ModelVariant::TimeIndependent
    }

    pub fn has_async(self) -> bool {
        self == ModelVariant::SyncAsync
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}, expected timeindep, sync or syncasync")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output channels of the two convolutional feature extractors.
    pub feature_channels: usize,
    /// Hidden channels of both conv-LSTMs and width of the alignment MLP.
    pub hidden: usize,
    pub kernel_size: usize,
    pub activation: IntensityActivation,
    /// Initial head bias; negative values start from a low event rate.
    pub head_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_channels: 6,
            hidden: 8,
            kernel_size: 3,
            activation: IntensityActivation::Softplus,
            head_bias: -3.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_channels == 0 || self.hidden == 0 {
            return Err(Error::config("model channel counts must be positive"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::config(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !self.head_bias.is_finite() {
            return Err(Error::config("head bias must be finite"));
        }
        if let IntensityActivation::BiasedRelu { eps } = self.activation {
            if !(eps > 0.0) {
                return Err(Error::config("biased relu offset must be positive"));
            }
        }
        Ok(())
    }
}

/// `sigma(w_s * h_s + bias + w_e * h_e)` with 1x1 kernels.
#[derive(Debug, Clone, Copy)]
pub struct IntensityHead {
    pub w_s: ParamId,
    pub w_e: Option<ParamId>,
    pub bias: ParamId,
    pub activation: IntensityActivation,
}

/// Frames and detection masks of one sequence, each `[1, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    height: usize,
    width: usize,
    frames: Vec<Tensor>,
    masks: Vec<Tensor>,
}

fn check_binary(t: &Tensor, what: &str) -> Result<()> {
    match t.data().iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(i) => Err(Error::input(format!(
            "{what} is not binary: entry {i} is {}",
            t.data()[i]
        ))),
        None => Ok(()),
    }
}

impl Sequence {
    pub fn new(frames: Vec<Tensor>, masks: Vec<Tensor>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::input("empty sequence"));
        };
        let shape = first.shape().to_vec();
        if shape.len() != 3 || shape[0] != 1 {
            return Err(Error::input(format!("frames must be [1, H, W], got {shape:?}")));
        }
        if masks.len() != frames.len() {
            return Err(Error::input(format!(
                "{} frames but {} masks",
                frames.len(),
                masks.len()
            )));
        }
        for (t, (f, m)) in frames.iter().zip(&masks).enumerate() {
            if f.shape() != shape.as_slice() || m.shape() != shape.as_slice() {
                return Err(Error::input(format!(
                    "frame {t}: shapes {:?}/{:?} differ from {shape:?}",
                    f.shape(),
                    m.shape()
                )));
            }
            check_binary(m, &format!("detection mask of frame {t}"))?;
        }
        Ok(Sequence {
            height: shape[1],
            width: shape[2],
            frames,
            masks,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frames(&self) -> &[Tensor] {
        &self.frames
    }

    pub fn masks(&self) -> &[Tensor] {
        &self.masks
    }

    /// Frames `start..start + len`, renumbered from zero.
    pub fn window(&self, start: usize, len: usize) -> Result<Sequence> {
        if len == 0 || start + len > self.len() {
            return Err(Error::input(format!(
                "window {start}..{} outside sequence of {} frames",
                start + len,
                self.len()
            )));
        }
        Ok(Sequence {
            height: self.height,
            width: self.width,
            frames: self.frames[start..start + len].to_vec(),
            masks: self.masks[start..start + len].to_vec(),
        })
    }
}

/// How the asynchronous stream learns about past events.
#[derive(Debug, Clone, Copy)]
pub enum EventFeed<'a> {
    /// Ground-truth grids, one per frame.
    Teacher(&'a [EventGrid]),
    /// Grids predicted from the model's own intensities.
    Predicted(Prediction),
}

/// Recurrent state between frames, as graph handles.
#[derive(Debug, Clone, Copy)]
pub struct StepState {
    pub sync: Option<(Var, Var)>,
    pub event: Option<(Var, Var)>,
    /// Most recent frame that held events and has been fed to the async stream.
    pub last_event: Option<usize>,
}

/// Recurrent state between frames, as values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub sync: Option<LstmState>,
    pub event: Option<LstmState>,
    pub last_event: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct StppModel {
    variant: ModelVariant,
    config: ModelConfig,
    params: ParamStore,
    psi1: ConvStack,
    sync_cell: Option<ConvLstmCell>,
    psi2: Option<ConvStack>,
    event_cell: Option<ConvLstmCell>,
    psi3: Option<Mlp>,
    head: IntensityHead,
}

/// A constant `[1, H, W]` map holding `value`.
pub fn constant_plane(value: f64, height: usize, width: usize) -> Tensor {
    Tensor::full(&[1, height, width], value)
}

impl StppModel {
    /// Builds a freshly initialized model. Parameters shared between variants
    /// are drawn first, so variants built from one seed agree on them.
    pub fn new(variant: ModelVariant, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (c, hid, k) = (config.feature_channels, config.hidden, config.kernel_size);
        let psi1 = ConvStack::new(&mut params, "psi1", 2, c, k, &mut rng);
        let sync_cell = variant
            .has_sync()
            .then(|| ConvLstmCell::new(&mut params, "sync_lstm", c, hid, k, &mut rng));
        let head_in = if variant.has_sync() { hid } else { c };
        let w_s = params.add_uniform("head.w_s", &[1, head_in, 1, 1], head_in, &mut rng);
        let bias = params.add("head.bias", Tensor::full(&[1], config.head_bias));
        let (mut psi2, mut event_cell, mut psi3, mut w_e) = (None, None, None, None);
        if variant.has_async() {
            psi2 = Some(ConvStack::new(&mut params, "psi2", 2, c, k, &mut rng));
            event_cell = Some(ConvLstmCell::new(&mut params, "async_lstm", c, hid, k, &mut rng));
            psi3 = Some(Mlp::new(
                &mut params,
                "psi3",
                &[hid + 1, hid, hid, hid],
                Activation::Tanh,
                Activation::Identity,
                &mut rng,
            ));
            w_e = Some(params.add_uniform("head.w_e", &[1, hid, 1, 1], hid, &mut rng));
        }
        Ok(StppModel {
            variant,
            config,
            params,
            psi1,
            sync_cell,
            psi2,
            event_cell,
            psi3,
            head: IntensityHead {
                w_s,
                w_e,
                bias,
                activation: config.activation,
            },
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn head(&self) -> IntensityHead {
        self.head
    }

    pub fn psi3(&self) -> Option<&Mlp> {
        self.psi3.as_ref()
    }

    pub fn sync_cell(&self) -> Option<&ConvLstmCell> {
        self.sync_cell.as_ref()
    }

    pub fn event_cell(&self) -> Option<&ConvLstmCell> {
        self.event_cell.as_ref()
    }

    /// Zero recurrent state for an `height x width` grid.
    pub fn initial_state(&self, height: usize, width: usize) -> ModelState {
        let hid = self.config.hidden;
        ModelState {
            sync: self.variant.has_sync().then(|| LstmState::zeros(hid, height, width)),
            event: self.variant.has_async().then(|| LstmState::zeros(hid, height, width)),
            last_event: None,
        }
    }

    /// Records `state` on `g` as constants.
    pub fn bind_state(&self, g: &mut Graph, state: &ModelState) -> StepState {
        let bind = |g: &mut Graph, s: &Option<LstmState>| s.as_ref().map(|s| (g.constant(&s.h), g.constant(&s.c)));
        StepState {
            sync: bind(g, &state.sync),
            event: bind(g, &state.event),
            last_event: state.last_event,
        }
    }

    /// Reads the values of `state` back from `g`.
    pub fn read_state(&self, g: &Graph, state: &StepState) -> ModelState {
        let read = |s: Option<(Var, Var)>| {
            s.map(|(h, c)| LstmState {
                h: g.tensor(h),
                c: g.tensor(c),
            })
        };
        ModelState {
            sync: read(state.sync),
            event: read(state.event),
            last_event: state.last_event,
        }
    }

    fn missing(&self, part: &str) -> Error {
        Error::input(format!("variant {} has no {part}", self.variant))
    }

    /// Advances the synchronous stream with one frame and its detection mask.
    pub fn sync_step(&self, g: &mut Graph, p: &Bound, state: (Var, Var), frame: Var, mask: Var) -> Result<(Var, Var)> {
        let cell = self
            .sync_cell
            .as_ref()
            .ok_or_else(|| self.missing("synchronous stream"))?;
        if g.shape(frame) != g.shape(mask) {
            return Err(Error::input(format!(
                "sync_step: frame {:?} and mask {:?} differ",
                g.shape(frame),
                g.shape(mask)
            )));
        }
        if g.value(mask).iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::input("sync_step: detection mask is not binary"));
        }
        let x = g.concat(&[frame, mask])?;
        let features = self.psi1.forward(g, p, x)?;
        cell.step(g, p, state.0, state.1, features)
    }

    /// Advances the asynchronous stream with an event mask observed `gap`
    /// frames after the previous one.
    pub fn async_step(
        &self,
        g: &mut Graph,
        p: &Bound,
        state: (Var, Var),
        events: Var,
        gap: usize,
    ) -> Result<(Var, Var)> {
        let (Some(psi2), Some(cell)) = (self.psi2.as_ref(), self.event_cell.as_ref()) else {
            return Err(self.missing("asynchronous stream"));
        };
        if gap == 0 {
            return Err(Error::input("async_step: gap must be at least one frame"));
        }
        let values = g.value(events);
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::input("async_step: event mask is not binary"));
        }
        if !values.contains(&1.0) {
            return Err(Error::input("async_step: event mask is empty"));
        }
        let shape = g.shape(events).to_vec();
        if shape.len() != 3 || shape[0] != 1 {
            return Err(Error::input(format!(
                "async_step: event mask must be [1, H, W], got {shape:?}"
            )));
        }
        let plane = g.constant_owned(constant_plane(gap as f64, shape[1], shape[2]));
        let x = g.concat(&[events, plane])?;
        let features = psi2.forward(g, p, x)?;
        cell.step(g, p, state.0, state.1, features)
    }

    /// Carries the event state `h_e` forward by `elapsed` frames, pixel by pixel.
    pub fn align(&self, g: &mut Graph, p: &Bound, h_e: Var, elapsed: f64) -> Result<Var> {
        let mlp = self.psi3.as_ref().ok_or_else(|| self.missing("alignment network"))?;
        align_with(mlp, g, p, h_e, elapsed)
    }

    /// Combines the stream features into an intensity map `[1, H, W]`.
    pub fn intensity(&self, g: &mut Graph, p: &Bound, h_s: Var, aligned: Option<Var>) -> Result<Var> {
        let mut z = g.conv2d(h_s, p[self.head.w_s], Some(p[self.head.bias]), Padding::Same)?;
        match (self.head.w_e, aligned) {
            (Some(w_e), Some(a)) => {
                if g.shape(a)[1..] != g.shape(h_s)[1..] {
                    return Err(Error::input(format!(
                        "intensity: stream maps {:?} and {:?} differ in size",
                        g.shape(h_s),
                        g.shape(a)
                    )));
                }
                let e = g.conv2d(a, p[w_e], None, Padding::Same)?;
                z = g.add(z, e)?;
            }
            (None, None) => {}
            _ => return Err(Error::input("intensity: event features do not match the head")),
        }
        self.head.activation.apply(g, z)
    }

    /// One frame: optional async update with the previous frame's events,
    /// sync update, alignment and head. Returns the intensity handle.
    pub fn frame_step(
        &self,
        g: &mut Graph,
        p: &Bound,
        state: &mut StepState,
        t: usize,
        frame: &Tensor,
        mask: &Tensor,
        previous_events: Option<&EventGrid>,
    ) -> Result<Var> {
        let fv = g.constant(frame);
        let mv = g.constant(mask);
        if !self.variant.has_sync() {
            if g.value(mv).iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::input("detection mask is not binary"));
            }
            let x = g.concat(&[fv, mv])?;
            let features = self.psi1.forward(g, p, x)?;
            return self.intensity(g, p, features, None);
        }
        let sync = state.sync.ok_or_else(|| Error::input("missing synchronous state"))?;
        let sync = self.sync_step(g, p, sync, fv, mv)?;
        state.sync = Some(sync);
        let mut aligned = None;
        if self.variant.has_async() {
            let mut event = state.event.ok_or_else(|| Error::input("missing asynchronous state"))?;
            if let Some(grid) = previous_events.filter(|grid| !grid.is_empty()) {
                let frame_of_events = t
                    .checked_sub(1)
                    .ok_or_else(|| Error::input("frame 0 has no previous events"))?;
                let gap = match state.last_event {
                    Some(last) => frame_of_events - last,
                    None => frame_of_events + 1,
                };
                let ev = g.constant_owned(grid.to_tensor());
                event = self.async_step(g, p, event, ev, gap)?;
                state.event = Some(event);
                state.last_event = Some(frame_of_events);
            }
            let elapsed = t - state.last_event.unwrap_or(0);
            aligned = Some(self.align(g, p, event.0, elapsed as f64)?);
        }
        self.intensity(g, p, sync.0, aligned)
    }

    /// Intensity handles for every frame of `seq` on one graph, with the
    /// async stream teacher-forced by `labels` (ignored without it).
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, seq: &Sequence, labels: &[EventGrid]) -> Result<Vec<Var>> {
        self.check_labels(seq, labels)?;
        let zero = self.initial_state(seq.height, seq.width);
        let mut state = self.bind_state(g, &zero);
        let mut out = Vec::with_capacity(seq.len());
        for t in 0..seq.len() {
            let prev = if t > 0 && self.variant.has_async() {
                Some(&labels[t - 1])
            } else {
                None
            };
            out.push(self.frame_step(g, p, &mut state, t, &seq.frames[t], &seq.masks[t], prev)?);
        }
        Ok(out)
    }

    /// Negative log-likelihood of `labels` under teacher forcing, summed over
    /// frames. Non-finite intensities are reported by frame and cell.
    pub fn nll_graph(&self, g: &mut Graph, p: &Bound, seq: &Sequence, labels: &[EventGrid]) -> Result<Var> {
        let lams = self.forward_graph(g, p, seq, labels)?;
        let mut total: Option<Var> = None;
        for (t, (&lam, grid)) in lams.iter().zip(labels).enumerate() {
            let bad = g
                .value(lam)
                .iter()
                .zip(grid.cells())
                .position(|(v, &e)| !v.is_finite() || (e && *v <= 0.0));
            if let Some(i) = bad {
                return Err(Error::numeric(
                    "intensity",
                    format!(
                        "frame {t} row {} col {}: intensity {}",
                        i / seq.width,
                        i % seq.width,
                        g.value(lam)[i]
                    ),
                ));
            }
            let ll = g.event_log_likelihood(lam, grid.cells())?;
            total = Some(match total {
                Some(acc) => g.add(acc, ll)?,
                None => ll,
            });
        }
        let total = total.ok_or_else(|| Error::input("empty sequence"))?;
        g.scale(total, -1.0)
    }

    fn check_labels(&self, seq: &Sequence, labels: &[EventGrid]) -> Result<()> {
        if labels.len() != seq.len() {
            return Err(Error::input(format!(
                "{} event grids for {} frames",
                labels.len(),
                seq.len()
            )));
        }
        if let Some(grid) = labels
            .iter()
            .find(|l| l.height() != seq.height || l.width() != seq.width)
        {
            return Err(Error::input(format!(
                "event grid of frame {} is {}x{}, frames are {}x{}",
                grid.frame(),
                grid.height(),
                grid.width(),
                seq.height,
                seq.width
            )));
        }
        Ok(())
    }

    /// Runs the model frame by frame. Returns the intensity maps and the
    /// event grids that drove the async stream (the labels when teacher
    /// forced, otherwise the model's own predictions).
    pub fn forward_sequence(&self, seq: &Sequence, feed: EventFeed<'_>) -> Result<(Vec<IntensityMap>, Vec<EventGrid>)> {
        if let EventFeed::Teacher(labels) = feed {
            self.check_labels(seq, labels)?;
        }
        let mut state = self.initial_state(seq.height, seq.width);
        let mut maps = Vec::with_capacity(seq.len());
        let mut grids: Vec<EventGrid> = Vec::with_capacity(seq.len());
        for t in 0..seq.len() {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let mut st = self.bind_state(&mut g, &state);
            let prev = if t > 0 { grids.last() } else { None };
            let lam = self.frame_step(&mut g, &p, &mut st, t, &seq.frames[t], &seq.masks[t], prev)?;
            let map = IntensityMap::new(t, seq.height, seq.width, g.value(lam).to_vec())?;
            state = self.read_state(&g, &st);
            let grid = match feed {
                EventFeed::Teacher(labels) => labels[t].clone(),
                EventFeed::Predicted(mode) => predict_events(&map, mode)?,
            };
            grids.push(grid);
            maps.push(map);
        }
        Ok((maps, grids))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "variant": self.variant,
            "config": self.config,
        });
        save_checkpoint(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let variant: ModelVariant = serde_json::from_value(ckpt.meta["variant"].clone())?;
        let config: ModelConfig = serde_json::from_value(ckpt.meta["config"].clone())?;
        let mut model = StppModel::new(variant, config, 0)?;
        model.params.assign_from(&ckpt.params)?;
        Ok(model)
    }
}

/// Applies `mlp` to each pixel of `h_e` (`[C, H, W]`) with `elapsed` appended
/// to the channel vector.
pub fn align_with(mlp: &Mlp, g: &mut Graph, p: &Bound, h_e: Var, elapsed: f64) -> Result<Var> {
    if !(elapsed >= 0.0) || !elapsed.is_finite() {
        return Err(Error::input(format!(
            "align: elapsed time must be non-negative, got {elapsed}"
        )));
    }
    let shape = g.shape(h_e).to_vec();
    let [c, h, w] = shape[..] else {
        return Err(Error::input(format!("align: expected [C, H, W], got {shape:?}")));
    };
    let flat = g.reshape(h_e, &[c, h * w])?;
    let row = g.constant_owned(Tensor::full(&[1, h * w], elapsed));
    let x = g.concat(&[flat, row])?;
    let y = mlp.forward(g, p, x)?;
    let out = g.shape(y)[0];
    g.reshape(y, &[out, h, w])
}
