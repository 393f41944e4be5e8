//! Fully connected ε-predictor with concatenated conditioning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, mean_from_eps, Denoiser, DenoiserOutput, ModelError, PathScorer, SigmaMode};
use crate::condition::{Condition, ConditionVocabulary};
use crate::gaussian::{Variance, LN_2PI};
use crate::linalg::{dot as rdot, gemm, Op, Real};
use crate::rng::{lane, StreamKey};
use crate::schedule::NoiseSchedule;
use crate::trajectory::{dot, NoiseBank};

/// Dense ReLU network; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F: Real> {
    /// Layer widths `[input, hidden…, output]`.
    pub sizes: Vec<usize>,
    /// Layer l has shape `sizes[l+1] × sizes[l]`, row-major.
    pub weights: Vec<Vec<F>>,
    pub biases: Vec<Vec<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads<F: Real> {
    pub weights: Vec<Vec<F>>,
    pub biases: Vec<Vec<F>>,
}

impl<F: Real> Mlp<F> {
    /// Uniform(±1/√fan_in) initialization for weights and biases.
    pub fn init(sizes: &[usize], seed: u64) -> Self {
        assert!(sizes.len() >= 2, "need input and output widths");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = StreamKey::new(seed, l as u64, 0, lane::INIT).rng();
            weights.push((0..fan_in * fan_out).map(|_| F::from_f64(rng.random_range(-bound..bound))).collect());
            biases.push((0..fan_out).map(|_| F::from_f64(rng.random_range(-bound..bound))).collect());
        }
        Self { sizes: sizes.to_vec(), weights, biases }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameters in layer order: weights then bias of each layer.
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn from_flat(sizes: &[usize], flat: &[F]) -> Option<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut off = 0;
        for l in 0..sizes.len().checked_sub(1)? {
            let nw = sizes[l] * sizes[l + 1];
            weights.push(flat.get(off..off + nw)?.to_vec());
            off += nw;
            biases.push(flat.get(off..off + sizes[l + 1])?.to_vec());
            off += sizes[l + 1];
        }
        (off == flat.len()).then(|| Self { sizes: sizes.to_vec(), weights, biases })
    }

    pub fn cast<G: Real>(&self) -> Mlp<G> {
        let conv = |v: &Vec<F>| v.iter().map(|x| G::from_f64(x.to_f64())).collect();
        Mlp {
            sizes: self.sizes.clone(),
            weights: self.weights.iter().map(conv).collect(),
            biases: self.biases.iter().map(conv).collect(),
        }
    }

    fn layer(&self, l: usize, input: &[F], batch: usize, relu: bool) -> Vec<F> {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let mut out = Vec::with_capacity(batch * fan_out);
        for _ in 0..batch {
            out.extend_from_slice(&self.biases[l]);
        }
        gemm(Op::N, Op::T, batch, fan_in, fan_out, F::ONE, input, &self.weights[l], F::ONE, &mut out);
        if relu {
            relu_inplace(&mut out);
        }
        out
    }

    /// Activations of every layer; entry 0 is the input.
    pub fn forward_all(&self, input: &[F], batch: usize) -> Vec<Vec<F>> {
        assert_eq!(input.len(), batch * self.input_dim(), "input batch has wrong size");
        let mut acts = vec![input.to_vec()];
        for l in 0..self.layers() {
            let relu = l + 1 < self.layers();
            let next = self.layer(l, acts.last().unwrap(), batch, relu);
            acts.push(next);
        }
        acts
    }

    pub fn forward(&self, input: &[F], batch: usize) -> Vec<F> {
        self.forward_all(input, batch).pop().unwrap()
    }

    /// Mean over batch and outputs of (net(input) + offset − target)², and its gradient.
    pub fn mse_grad(&self, input: &[F], batch: usize, offset: &[F], target: &[F]) -> (f64, Grads<F>) {
        let acts = self.forward_all(input, batch);
        let out = acts.last().unwrap();
        let total = (batch * self.output_dim()) as f64;
        let mut loss = 0.0;
        let scale = F::from_f64(2.0 / total);
        let mut delta: Vec<F> = out
            .iter()
            .zip(offset)
            .zip(target)
            .map(|((o, s), e)| {
                let r = *o + *s - *e;
                loss += r.to_f64() * r.to_f64();
                r * scale
            })
            .collect();
        let mut gw = vec![Vec::new(); self.layers()];
        let mut gb = vec![Vec::new(); self.layers()];
        for l in (0..self.layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut w = vec![F::ZERO; fan_out * fan_in];
            gemm(Op::T, Op::N, fan_out, batch, fan_in, F::ONE, &delta, &acts[l], F::ZERO, &mut w);
            let mut b = vec![F::ZERO; fan_out];
            for row in delta.chunks(fan_out) {
                for (acc, d) in b.iter_mut().zip(row) {
                    *acc += *d;
                }
            }
            gw[l] = w;
            gb[l] = b;
            if l > 0 {
                let mut prev = vec![F::ZERO; batch * fan_in];
                gemm(Op::N, Op::N, batch, fan_out, fan_in, F::ONE, &delta, &self.weights[l], F::ZERO, &mut prev);
                for (p, a) in prev.iter_mut().zip(&acts[l]) {
                    if !(*a > F::ZERO) {
                        *p = F::ZERO;
                    }
                }
                delta = prev;
            }
        }
        (loss / total, Grads { weights: gw, biases: gb })
    }
}

fn relu_inplace<F: Real>(v: &mut [F]) {
    for x in v {
        if !(*x > F::ZERO) {
            *x = F::ZERO;
        }
    }
}

/// Sinusoidal features of a (possibly fractional) timestep.
pub fn time_features(tau: f64, count: usize) -> Vec<f64> {
    let half = count / 2;
    let mut out = vec![0.0; count];
    for k in 0..half {
        let f = (-(k as f64) * 1000f64.ln() / half as f64).exp();
        out[k] = (tau * f).sin();
        out[half + k] = (tau * f).cos();
    }
    out
}

/// Coefficient of the fixed x_t term in the ε-prediction.
pub fn skip_coefficient(alpha_bar: f64, data_variance: f64) -> f64 {
    (1.0 - alpha_bar).sqrt() / (alpha_bar * data_variance + 1.0 - alpha_bar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MlpArch {
    pub data_dim: usize,
    pub cond_dim: usize,
    pub time_features: usize,
    pub hidden: Vec<usize>,
    /// Per-component variance of the training data, used by the skip term.
    pub data_variance: f64,
    #[serde(default)]
    pub sigma: SigmaMode,
}

impl MlpArch {
    pub fn input_dim(&self) -> usize {
        self.data_dim + self.cond_dim + self.time_features
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(&self.hidden);
        s.push(self.data_dim);
        s
    }
}

#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    pub arch: MlpArch,
    pub vocab: ConditionVocabulary,
    /// Schedule the network was trained with; defines the meaning of its time input.
    pub schedule: NoiseSchedule,
    net: Mlp<f32>,
    net64: Mlp<f64>,
}

impl PartialEq for MlpDenoiser {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.vocab == other.vocab
            && self.schedule == other.schedule
            && self.net == other.net
    }
}

impl MlpDenoiser {
    pub fn new(arch: MlpArch, vocab: ConditionVocabulary, schedule: NoiseSchedule, net: Mlp<f32>) -> Self {
        assert_eq!(net.sizes, arch.sizes(), "network widths disagree with the architecture");
        let net64 = net.cast();
        Self { arch, vocab, schedule, net, net64 }
    }

    pub fn network(&self) -> &Mlp<f32> {
        &self.net
    }

    /// Time input for step `t` of `sched`, mapped onto the training schedule by
    /// matching log ᾱ.
    pub fn time_index(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        if sched.alpha_bars() == self.schedule.alpha_bars() {
            return t as f64;
        }
        let target = sched.alpha_bar(t).ln();
        let train = &self.schedule;
        let mut prev = 0.0;
        for i in 1..=train.steps() {
            let cur = train.alpha_bar(i).ln();
            if target >= cur {
                return (i - 1) as f64 + (prev - target) / (prev - cur);
            }
            prev = cur;
        }
        train.steps() as f64
    }

    fn input_row(&self, x_t: &[f64], emb: &[f64], tau: f64) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.arch.input_dim());
        row.extend_from_slice(x_t);
        row.extend_from_slice(emb);
        row.extend(time_features(tau, self.arch.time_features));
        row
    }
}

impl Denoiser for MlpDenoiser {
    fn dim(&self) -> usize {
        self.arch.data_dim
    }

    fn predict_eps(&self, x_t: &[f64], t: usize, c: &Condition, sched: &NoiseSchedule)
        -> Result<Vec<f64>, ModelError> {
        check_input(self.arch.data_dim, x_t, t, sched)?;
        let emb = self.vocab.embed(c)?;
        let row = self.input_row(x_t, &emb, self.time_index(t, sched));
        let out = self.net64.forward(&row, 1);
        let s = skip_coefficient(sched.alpha_bar(t), self.arch.data_variance);
        Ok(out.iter().zip(x_t).map(|(o, x)| o + s * x).collect())
    }

    fn denoise(&self, x_t: &[f64], t: usize, c: &Condition, sched: &NoiseSchedule)
        -> Result<DenoiserOutput, ModelError> {
        let eps = self.predict_eps(x_t, t, c, sched)?;
        Ok(DenoiserOutput {
            mean: mean_from_eps(x_t, &eps, t, sched),
            variance: Variance::Isotropic(self.arch.sigma.variance(t, sched)),
        })
    }

    fn path_scorer<'a>(&'a self, bank: &'a NoiseBank, sched: &'a NoiseSchedule)
        -> Option<Box<dyn PathScorer + 'a>> {
        if self.arch.hidden.is_empty() || bank.dim() != self.arch.data_dim || bank.steps() != sched.steps() {
            return None;
        }
        Some(Box::new(MlpPathScorer::new(self, bank, sched)))
    }
}

struct Step {
    root_ab: f64,
    g: f64,
    big_a: f64,
    a: f64,
    var: f64,
}

/// Evaluates Σ_t log p(x_{t−1}|x_t,c) for many candidates by splitting every
/// linear map into an x0 part (per example) and a noise part (cached per bank).
struct MlpPathScorer<'a> {
    model: &'a MlpDenoiser,
    bank: &'a NoiseBank,
    steps: Vec<Step>,
    /// bank rows × H1: W_x·z
    pz: Vec<f64>,
    /// T × H1: W_τ·τ(t) + b1
    tau: Vec<f64>,
    /// bank rows × H_last: W_Lᵀ·z
    z3: Vec<f64>,
    /// bank rows: z·b_L
    zb: Vec<f64>,
    /// W_Lᵀ·W_L
    gram: Vec<f64>,
    /// W_Lᵀ·b_L
    wb: Vec<f64>,
    bb: f64,
}

impl<'a> MlpPathScorer<'a> {
    fn new(model: &'a MlpDenoiser, bank: &'a NoiseBank, sched: &'a NoiseSchedule) -> Self {
        let net = &model.net64;
        let arch = &model.arch;
        let d = arch.data_dim;
        let in_dim = arch.input_dim();
        let h1 = net.sizes[1];
        let last = net.layers() - 1;
        let hl = net.sizes[last];
        let rows = bank.trials() * (bank.steps() + 1);
        let w1 = &net.weights[0];

        let mut pz = vec![0.0; rows * h1];
        f64::gemm_raw(rows, d, h1, 1.0, bank.matrix(), d as isize, 1, w1, 1, in_dim as isize, 0.0, &mut pz,
            h1 as isize, 1);

        let toff = d + arch.cond_dim;
        let mut tau = Vec::with_capacity(sched.steps() * h1);
        for t in 1..=sched.steps() {
            let f = time_features(model.time_index(t, sched), arch.time_features);
            for h in 0..h1 {
                let w = &w1[h * in_dim + toff..(h + 1) * in_dim];
                tau.push(net.biases[0][h] + dot(w, &f));
            }
        }

        let wl = &net.weights[last];
        let bl = &net.biases[last];
        let mut z3 = vec![0.0; rows * hl];
        gemm(Op::N, Op::N, rows, d, hl, 1.0, bank.matrix(), wl, 0.0, &mut z3);
        let zb: Vec<f64> = bank.matrix().chunks(d).map(|z| dot(z, bl)).collect();
        let mut gram = vec![0.0; hl * hl];
        gemm(Op::T, Op::N, hl, d, hl, 1.0, wl, wl, 0.0, &mut gram);
        let mut wb = vec![0.0; hl];
        gemm(Op::T, Op::N, hl, d, 1, 1.0, wl, bl, 0.0, &mut wb);
        let bb = dot(bl, bl);

        let steps = (1..=sched.steps())
            .map(|t| {
                let ab = sched.alpha_bar(t);
                let g = sched.beta(t) / ((1.0 - ab).sqrt() * sched.alpha(t).sqrt());
                let s = skip_coefficient(ab, arch.data_variance);
                let big_a = 1.0 / sched.alpha(t).sqrt() - g * s;
                let a = sched.alpha_bar(t - 1).sqrt() - big_a * ab.sqrt();
                Step { root_ab: ab.sqrt(), g, big_a, a, var: arch.sigma.variance(t, sched) }
            })
            .collect();
        Self { model, bank, steps, pz, tau, z3, zb, gram, wb, bb }
    }
}

impl PathScorer for MlpPathScorer<'_> {
    fn transition_logs(&self, x0: &[f64], candidates: &[Condition]) -> Result<Vec<Vec<f64>>, ModelError> {
        let model = self.model;
        let net = &model.net64;
        let arch = &model.arch;
        let d = arch.data_dim;
        if x0.len() != d {
            return Err(ModelError::Dimension { expected: d, got: x0.len() });
        }
        let in_dim = arch.input_dim();
        let h1 = net.sizes[1];
        let last = net.layers() - 1;
        let hl = net.sizes[last];
        let w1 = &net.weights[0];
        let wl = &net.weights[last];
        let bl = &net.biases[last];
        let steps = self.bank.steps();
        let trials = self.bank.trials();
        let ncand = candidates.len();

        let p0: Vec<f64> = (0..h1).map(|h| dot(&w1[h * in_dim..h * in_dim + d], x0)).collect();
        let mut ec = Vec::with_capacity(ncand * h1);
        for c in candidates {
            let e = model.vocab.embed(c)?;
            for h in 0..h1 {
                ec.push(dot(&w1[h * in_dim + d..h * in_dim + d + arch.cond_dim], &e));
            }
        }
        let mut x3 = vec![0.0; hl];
        gemm(Op::T, Op::N, hl, d, 1, 1.0, wl, x0, 0.0, &mut x3);
        let rows = trials * (steps + 1);
        let mut xz = vec![0.0; rows];
        gemm(Op::N, Op::N, rows, d, 1, 1.0, self.bank.matrix(), x0, 0.0, &mut xz);
        let xx = dot(x0, x0);
        let xb = dot(x0, bl);

        let batch = steps * ncand;
        let norm_d = d as f64;
        let mut out = vec![vec![0.0; trials]; ncand];
        let mut act = vec![0.0; batch * h1];
        let mut hg = vec![0.0; batch * hl];
        for n in 0..trials {
            let base_row = n * (steps + 1);
            for t in 1..=steps {
                let st = &self.steps[t - 1];
                let pzr = &self.pz[(base_row + t) * h1..(base_row + t + 1) * h1];
                let taur = &self.tau[(t - 1) * h1..t * h1];
                for c in 0..ncand {
                    let row = &mut act[((t - 1) * ncand + c) * h1..((t - 1) * ncand + c + 1) * h1];
                    let e = &ec[c * h1..(c + 1) * h1];
                    for h in 0..h1 {
                        let v = st.root_ab * p0[h] + pzr[h] + taur[h] + e[h];
                        row[h] = if v > 0.0 { v } else { 0.0 };
                    }
                }
            }
            let mut hidden = std::borrow::Cow::Borrowed(&act[..]);
            for l in 1..last {
                hidden = std::borrow::Cow::Owned(net.layer(l, &hidden, batch, true));
            }
            gemm(Op::N, Op::N, batch, hl, hl, 1.0, &hidden, &self.gram, 0.0, &mut hg);
            for t in 1..=steps {
                let st = &self.steps[t - 1];
                let (a, big_a, g) = (st.a, st.big_a, st.g);
                let (rp, rc) = (base_row + t - 1, base_row + t);
                let uu = a * a * xx + self.bank.sq_norm(n, t - 1) + big_a * big_a * self.bank.sq_norm(n, t)
                    + 2.0 * a * xz[rp]
                    - 2.0 * a * big_a * xz[rc]
                    - 2.0 * big_a * self.bank.cross(n, t);
                let ub = a * xb + self.zb[rp] - big_a * self.zb[rc];
                let z3p = &self.z3[rp * hl..(rp + 1) * hl];
                let z3c = &self.z3[rc * hl..(rc + 1) * hl];
                let v: Vec<f64> =
                    (0..hl).map(|k| a * x3[k] + z3p[k] - big_a * z3c[k] + g * self.wb[k]).collect();
                let norm = -0.5 * norm_d * (LN_2PI + st.var.ln());
                for c in 0..ncand {
                    let r = (t - 1) * ncand + c;
                    let h = &hidden[r * hl..(r + 1) * hl];
                    let quad = rdot(h, &hg[r * hl..(r + 1) * hl]);
                    let lin = rdot(&v, h);
                    let sq = uu + 2.0 * g * ub + g * g * self.bb + 2.0 * g * lin + g * g * quad;
                    out[c][n] += norm - 0.5 * sq.max(0.0) / st.var;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, ScheduleKind};
    use crate::trajectory::Coupling;

    fn small_model(sched: &NoiseSchedule, hidden: Vec<usize>) -> MlpDenoiser {
        let arch = MlpArch { data_dim: 6, cond_dim: 3, time_features: 4, hidden, data_variance: 0.3, sigma: SigmaMode::Beta };
        let net = Mlp::init(&arch.sizes(), 5);
        MlpDenoiser::new(arch, ConditionVocabulary::Classes { count: 3 }, sched.clone(), net)
    }

    #[test]
    fn flatten_roundtrip() {
        let m: Mlp<f32> = Mlp::init(&[4, 3, 2], 1);
        let back = Mlp::from_flat(&m.sizes, &m.flatten()).unwrap();
        assert_eq!(back, m);
        assert!(Mlp::<f32>::from_flat(&m.sizes, &m.flatten()[1..]).is_none());
    }

    #[test]
    fn batch_independent_forward() {
        let m: Mlp<f32> = Mlp::init(&[5, 16, 3], 2);
        let rows: Vec<f32> = (0..5 * 7).map(|i| ((i * 37 % 11) as f32) * 0.1 - 0.5).collect();
        let all = m.forward(&rows, 7);
        for r in 0..7 {
            let one = m.forward(&rows[r * 5..(r + 1) * 5], 1);
            assert_eq!(&all[r * 3..(r + 1) * 3], &one[..]);
        }
    }

    #[test]
    fn time_index_identity_and_interpolation() {
        let s = build_schedule(ScheduleKind::Linear, 40, 1e-3, 0.2).unwrap();
        let m = small_model(&s, vec![8]);
        assert_eq!(m.time_index(7, &s), 7.0);
        let s2 = s.rescaled(20).unwrap();
        let mut prev = 0.0;
        for t in 1..=20 {
            let tau = m.time_index(t, &s2);
            assert!(tau > prev && tau <= 40.0);
            prev = tau;
        }
    }

    #[test]
    fn fast_path_matches_stepwise() {
        let s = build_schedule(ScheduleKind::Linear, 9, 0.01, 0.3).unwrap();
        for hidden in [vec![8], vec![10, 7]] {
            let m = small_model(&s, hidden);
            let x0 = vec![0.2, -0.4, 0.9, 0.1, -0.7, 0.3];
            let cands = [Condition::Class(0), Condition::Class(2)];
            for coupling in [Coupling::Markov, Coupling::Shared] {
                let bank = NoiseBank::new(3, 2, 6, &s, coupling);
                let fast = m.path_scorer(&bank, &s).unwrap().transition_logs(&x0, &cands).unwrap();
                for (ci, c) in cands.iter().enumerate() {
                    for n in 0..2 {
                        let mut total = 0.0;
                        for t in 1..=s.steps() {
                            let xt = bank.latent(&x0, n, t, &s);
                            let prev = if t == 1 { x0.clone() } else { bank.latent(&x0, n, t - 1, &s) };
                            let o = m.denoise(&xt, t, c, &s).unwrap();
                            let g = crate::gaussian::DiagGaussian::new(o.mean, o.variance).unwrap();
                            total += crate::gaussian::gaussian_log_pdf(&prev, &g).unwrap();
                        }
                        assert!((total - fast[ci][n]).abs() < 1e-7 * total.abs().max(1.0), "{total} {}", fast[ci][n]);
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m: Mlp<f64> = Mlp::init(&[3, 8, 2], 9);
        let batch = 4;
        let input: Vec<f64> = (0..batch * 3).map(|i| ((i * 7 % 5) as f64) * 0.3 - 0.6).collect();
        let offset: Vec<f64> = (0..batch * 2).map(|i| i as f64 * 0.05).collect();
        let target: Vec<f64> = (0..batch * 2).map(|i| ((i * 3 % 4) as f64) * 0.2 - 0.3).collect();
        let (_, g) = m.mse_grad(&input, batch, &offset, &target);
        let h = 1e-6;
        for l in 0..2 {
            for i in 0..m.weights[l].len() {
                let mut p = m.clone();
                p.weights[l][i] += h;
                let mut q = m.clone();
                q.weights[l][i] -= h;
                let num = (p.mse_grad(&input, batch, &offset, &target).0 - q.mse_grad(&input, batch, &offset, &target).0)
                    / (2.0 * h);
                let ana = g.weights[l][i];
                assert!((num - ana).abs() <= 1e-4 * ana.abs().max(1e-3), "layer {l} w{i}: {num} vs {ana}");
            }
        }
    }
}
