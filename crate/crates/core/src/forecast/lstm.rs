//! Single-layer LSTM with a dense multi-step head, trained by BPTT + Adam.
//!
//! Parameter layout (row-major, gate order i, f, g, o):
//! `w_x [4H x 1]`, `w_h [4H x H]`, `b [4H]`, `w_y [T x H]`, `b_y [T]`.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Predictor, PredictorConfig};
use crate::error::{Error, Result};
use crate::traces::SiteTrace;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmNet {
    hidden: usize,
    horizon: usize,
    params: Vec<f64>,
}

struct Offsets {
    w_x: usize,
    w_h: usize,
    b: usize,
    w_y: usize,
    b_y: usize,
    end: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step activations kept for the backward pass.
struct Tape {
    gates: Vec<f64>, // L x 4H, post-activation
    c: Vec<f64>,     // (L+1) x H
    h: Vec<f64>,     // (L+1) x H
}

impl LstmNet {
    pub fn new(hidden: usize, horizon: usize, seed: u64) -> Self {
        let mut net = Self {
            hidden,
            horizon,
            params: Vec::new(),
        };
        let o = net.offsets();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; o.end];
        let bound_rec = 1.0 / (hidden as f64).sqrt();
        for (i, p) in params.iter_mut().enumerate() {
            let bound = if i < o.w_h { 1.0 } else { bound_rec };
            if i < o.b || (o.w_y..o.b_y).contains(&i) {
                *p = rng.random_range(-bound..bound);
            }
        }
        // forget-gate bias starts at 1 so early gradients flow through the cell
        for p in &mut params[o.b + hidden..o.b + 2 * hidden] {
            *p = 1.0;
        }
        net.params = params;
        net
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> Offsets {
        let g = 4 * self.hidden;
        let w_x = 0;
        let w_h = w_x + g;
        let b = w_h + g * self.hidden;
        let w_y = b + g;
        let b_y = w_y + self.horizon * self.hidden;
        Offsets {
            w_x,
            w_h,
            b,
            w_y,
            b_y,
            end: b_y + self.horizon,
        }
    }

    fn run(&self, xs: &[f64]) -> (Vec<f64>, Tape) {
        let hd = self.hidden;
        let o = self.offsets();
        let p = &self.params;
        let l = xs.len();
        let mut tape = Tape {
            gates: vec![0.0; l * 4 * hd],
            c: vec![0.0; (l + 1) * hd],
            h: vec![0.0; (l + 1) * hd],
        };
        let mut z = vec![0.0; 4 * hd];
        for (t, &x) in xs.iter().enumerate() {
            let h_prev = &tape.h[t * hd..(t + 1) * hd];
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &p[o.w_h + r * hd..o.w_h + (r + 1) * hd];
                let mut acc = p[o.w_x + r] * x + p[o.b + r];
                for (w, hv) in row.iter().zip(h_prev) {
                    acc += w * hv;
                }
                *zr = acc;
            }
            let gates = &mut tape.gates[t * 4 * hd..(t + 1) * 4 * hd];
            for j in 0..hd {
                gates[j] = sigmoid(z[j]);
                gates[hd + j] = sigmoid(z[hd + j]);
                gates[2 * hd + j] = z[2 * hd + j].tanh();
                gates[3 * hd + j] = sigmoid(z[3 * hd + j]);
            }
            for j in 0..hd {
                let (i, f, g, og) = (
                    gates[j],
                    gates[hd + j],
                    gates[2 * hd + j],
                    gates[3 * hd + j],
                );
                let c = f * tape.c[t * hd + j] + i * g;
                tape.c[(t + 1) * hd + j] = c;
                tape.h[(t + 1) * hd + j] = og * c.tanh();
            }
        }
        let h_last = &tape.h[l * hd..];
        let y = (0..self.horizon)
            .map(|k| {
                let row = &p[o.w_y + k * hd..o.w_y + (k + 1) * hd];
                p[o.b_y + k] + row.iter().zip(h_last).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        (y, tape)
    }

    pub fn forward(&self, xs: &[f64]) -> Vec<f64> {
        self.run(xs).0
    }

    /// Mean squared error of one sample, accumulating `scale * dLoss/dθ`
    /// into `grad`.
    pub fn loss_and_grad(&self, xs: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let hd = self.hidden;
        let o = self.offsets();
        let p = &self.params;
        let (y, tape) = self.run(xs);
        let l = xs.len();
        let tn = self.horizon as f64;

        let mut loss = 0.0;
        let mut dh = vec![0.0; hd];
        let h_last = &tape.h[l * hd..];
        for k in 0..self.horizon {
            let err = y[k] - target[k];
            loss += err * err / tn;
            let dy = scale * 2.0 * err / tn;
            grad[o.b_y + k] += dy;
            for j in 0..hd {
                grad[o.w_y + k * hd + j] += dy * h_last[j];
                dh[j] += dy * p[o.w_y + k * hd + j];
            }
        }

        let mut dc = vec![0.0; hd];
        let mut dz = vec![0.0; 4 * hd];
        for t in (0..l).rev() {
            let gates = &tape.gates[t * 4 * hd..(t + 1) * 4 * hd];
            let c_prev = &tape.c[t * hd..(t + 1) * hd];
            let c_now = &tape.c[(t + 1) * hd..(t + 2) * hd];
            for j in 0..hd {
                let (i, f, g, og) = (
                    gates[j],
                    gates[hd + j],
                    gates[2 * hd + j],
                    gates[3 * hd + j],
                );
                let tc = c_now[j].tanh();
                let d_o = dh[j] * tc;
                dc[j] += dh[j] * og * (1.0 - tc * tc);
                dz[j] = dc[j] * g * i * (1.0 - i);
                dz[hd + j] = dc[j] * c_prev[j] * f * (1.0 - f);
                dz[2 * hd + j] = dc[j] * i * (1.0 - g * g);
                dz[3 * hd + j] = d_o * og * (1.0 - og);
                dc[j] *= f;
            }
            let h_prev = &tape.h[t * hd..(t + 1) * hd];
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (r, &d) in dz.iter().enumerate() {
                grad[o.w_x + r] += d * xs[t];
                grad[o.b + r] += d;
                let base = o.w_h + r * hd;
                for j in 0..hd {
                    grad[base + j] += d * h_prev[j];
                    dh[j] += d * p[base + j];
                }
            }
        }
        loss
    }

    /// Text format: a `lstm <hidden> <horizon>` header, then one
    /// `<name> <rows> <cols>` line per block followed by its rows.
    pub fn to_text(&self) -> String {
        let hd = self.hidden;
        let o = self.offsets();
        let blocks = [
            ("w_x", 4 * hd, 1, o.w_x),
            ("w_h", 4 * hd, hd, o.w_h),
            ("b", 1, 4 * hd, o.b),
            ("w_y", self.horizon, hd, o.w_y),
            ("b_y", 1, self.horizon, o.b_y),
        ];
        let mut s = format!("lstm {} {}\n", hd, self.horizon);
        for (name, rows, cols, start) in blocks {
            let _ = writeln!(s, "{name} {rows} {cols}");
            for r in 0..rows {
                let row = &self.params[start + r * cols..start + (r + 1) * cols];
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (n, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty parameter file".into()))?;
        let head: Vec<&str> = header.split_whitespace().collect();
        let dims = match head.as_slice() {
            ["lstm", h, t] => h.parse::<usize>().ok().zip(t.parse::<usize>().ok()),
            _ => None,
        };
        let (hidden, horizon) =
            dims.ok_or_else(|| parse_err(n + 1, format!("bad header {header:?}")))?;
        let mut net = Self {
            hidden,
            horizon,
            params: Vec::new(),
        };
        let o = net.offsets();
        let mut params = Vec::with_capacity(o.end);
        let expected = [
            ("w_x", 4 * hidden, 1),
            ("w_h", 4 * hidden, hidden),
            ("b", 1, 4 * hidden),
            ("w_y", horizon, hidden),
            ("b_y", 1, horizon),
        ];
        for (name, rows, cols) in expected {
            let (n, line) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("missing block {name}")))?;
            let want = format!("{name} {rows} {cols}");
            if line.split_whitespace().collect::<Vec<_>>().join(" ") != want {
                return Err(parse_err(
                    n + 1,
                    format!("expected block header {want:?}, got {line:?}"),
                ));
            }
            for _ in 0..rows {
                let (n, line) = lines
                    .next()
                    .ok_or_else(|| parse_err(0, format!("block {name} is truncated")))?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(n + 1, e.to_string()))?;
                if row.len() != cols {
                    return Err(parse_err(
                        n + 1,
                        format!("expected {cols} values, got {}", row.len()),
                    ));
                }
                params.extend(row);
            }
        }
        if let Some((n, _)) = lines.next() {
            return Err(parse_err(n + 1, "trailing data after last block".into()));
        }
        net.params = params;
        Ok(net)
    }
}

/// Adam optimiser state.
struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    const CLIP: f64 = 5.0;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &mut [f64]) {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > Self::CLIP {
            let s = Self::CLIP / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trained network plus the window it was fitted for.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmPredictor {
    pub window: usize,
    pub net: LstmNet,
    /// mean training loss per epoch
    pub losses: Vec<f64>,
}

impl Predictor for LstmPredictor {
    fn window(&self) -> usize {
        self.window
    }

    fn horizon(&self) -> usize {
        self.net.horizon
    }

    fn forward(&self, recent: &[f64]) -> Vec<f64> {
        self.net.forward(recent)
    }
}

impl LstmPredictor {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = format!("window {}\n{}", self.window, self.net.to_text());
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let origin = path.display().to_string();
        let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
        let window = first
            .strip_prefix("window ")
            .and_then(|w| w.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                path: origin.clone(),
                line: 1,
                msg: format!("expected `window <n>`, got {first:?}"),
            })?;
        let net = LstmNet::from_text(rest, &origin)?;
        Ok(Self {
            window,
            net,
            losses: Vec::new(),
        })
    }
}

/// Train on the leading `train_fraction` of a normalized trace.
pub fn fit(trace: &SiteTrace, cfg: &PredictorConfig) -> Result<LstmPredictor> {
    cfg.validate()?;
    if trace.max() > 1.0 + 1e-12 {
        return Err(Error::invalid(format!(
            "trace {} is not normalized to [0,1]",
            trace.site_id
        )));
    }
    let values = trace.values();
    let need = cfg.window + cfg.horizon + 1;
    if values.len() < need {
        return Err(Error::invalid(format!(
            "trace {} has {} slots, need at least window + horizon + 1 = {need}",
            trace.site_id,
            values.len()
        )));
    }
    let train = &values[..cfg.training_len(values.len())];
    if train.len() < cfg.window + cfg.horizon {
        return Err(Error::invalid(format!(
            "training segment of {} slots cannot hold one window of {} plus horizon {}",
            train.len(),
            cfg.window,
            cfg.horizon
        )));
    }
    let origins: Vec<usize> = (cfg.window..=train.len() - cfg.horizon).collect();

    let mut net = LstmNet::new(cfg.hidden_units, cfg.horizon, cfg.seed);
    let mut adam = Adam::new(net.params.len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut grad = vec![0.0; net.params.len()];
    let mut order = origins.clone();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // cosine decay to a tenth of the base rate
        let progress = epoch as f64 / cfg.epochs.max(2).saturating_sub(1) as f64;
        adam.lr =
            cfg.learning_rate * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * progress).cos()));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &o in batch {
                total += net.loss_and_grad(
                    &train[o - cfg.window..o],
                    &train[o..o + cfg.horizon],
                    scale,
                    &mut grad,
                );
            }
            let mut params = std::mem::take(&mut net.params);
            adam.step(&mut params, &mut grad);
            net.params = params;
        }
        losses.push(total / origins.len() as f64);
    }
    Ok(LstmPredictor {
        window: cfg.window,
        net,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::TraceKind;

    fn sine_trace(days: usize) -> SiteTrace {
        let v: Vec<f64> = (0..days * 48)
            .map(|t| 0.5 + 0.4 * (2.0 * std::f64::consts::PI * t as f64 / 48.0).sin())
            .collect();
        SiteTrace::new("sine", TraceKind::Traffic, 1800.0, v).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut net = LstmNet::new(3, 2, 9);
        let xs = [0.1, 0.7, 0.4, 0.9];
        let target = [0.3, 0.6];
        let mut grad = vec![0.0; net.params().len()];
        net.loss_and_grad(&xs, &target, 1.0, &mut grad);
        let h = 1e-6;
        for i in 0..grad.len() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let mut scratch = vec![0.0; grad.len()];
            let up = net.loss_and_grad(&xs, &target, 1.0, &mut scratch);
            net.params_mut()[i] = orig - h;
            let down = net.loss_and_grad(&xs, &target, 1.0, &mut scratch);
            net.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-7);
            assert!(
                (grad[i] - numeric).abs() / denom < 1e-4,
                "param {i}: analytic {} numeric {numeric}",
                grad[i]
            );
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let trace = sine_trace(4);
        let cfg = PredictorConfig {
            window: 12,
            hidden_units: 4,
            epochs: 2,
            ..PredictorConfig::default()
        };
        let a = fit(&trace, &cfg).unwrap();
        let b = fit(&trace, &cfg).unwrap();
        assert_eq!(a.net.params(), b.net.params());
    }

    #[test]
    fn training_reduces_loss_and_outputs_are_clipped() {
        let trace = sine_trace(6);
        let cfg = PredictorConfig {
            window: 24,
            hidden_units: 8,
            epochs: 15,
            ..PredictorConfig::default()
        };
        let p = fit(&trace, &cfg).unwrap();
        assert!(
            p.losses.last().unwrap() < &(p.losses[0] * 0.5),
            "{:?}",
            p.losses
        );
        let out = p.predict(&[1.0; 24]).unwrap();
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn fit_rejects_short_or_raw_traces() {
        let cfg = PredictorConfig::default();
        let short = SiteTrace::new("s", TraceKind::Traffic, 1800.0, vec![0.5; 40]).unwrap();
        assert!(fit(&short, &cfg).is_err());
        let exactly = SiteTrace::new("s", TraceKind::Traffic, 1800.0, vec![0.5; 52]).unwrap();
        // 52 slots pass the length gate but 70% of them cannot hold a window
        assert!(fit(&exactly, &cfg).is_err());
        let raw = SiteTrace::new("s", TraceKind::Traffic, 1800.0, vec![3.0; 200]).unwrap();
        assert!(fit(&raw, &cfg).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let trace = sine_trace(3);
        let cfg = PredictorConfig {
            window: 8,
            hidden_units: 3,
            epochs: 1,
            ..PredictorConfig::default()
        };
        let p = fit(&trace, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        p.save(&path).unwrap();
        let q = LstmPredictor::load(&path).unwrap();
        assert_eq!(q.window, 8);
        assert_eq!(q.net, p.net);

        std::fs::write(&path, "window 8\nlstm 3 3\nw_x 12 1\n0.1\n").unwrap();
        assert!(matches!(
            LstmPredictor::load(&path),
            Err(Error::Parse { .. })
        ));
    }
}
