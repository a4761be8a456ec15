//! Dual-path video codec: SE-gated 3-D residual blocks, per-frame spatial
//! attention, strided downsampling, vector quantization on the semantic
//! path, a sub-pixel decoder, and the pretraining objectives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::LipcoderConfig;
use crate::error::{config_err, input_err, shape_err, Result};
use crate::graph::Var;
use crate::layers::{geglu, join, Conv1d, Conv3d, RmsNorm};
use crate::numerics::Conv3dSpec;
use crate::params::{Init, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LEAKY_SLOPE: f64 = 0.01;

/// Channel gate from a spatially attended context vector per frame.
#[derive(Debug, Clone)]
pub struct SeGate {
    pub logits: Conv3d,
    pub w1: Conv1d,
    pub w2: Conv1d,
}

impl SeGate {
    pub fn new(name: &str, channels: usize) -> Self {
        let hidden = (channels / 2).max(1);
        Self {
            logits: Conv3d::new(
                join(name, "logits"),
                Conv3dSpec::same(channels, 1, [1, 1, 1]),
            ),
            w1: Conv1d::pointwise(join(name, "w1"), channels, hidden),
            w2: Conv1d::pointwise(join(name, "w2"), hidden, channels),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.logits.init(store, init)?;
        self.w1.init(store, init)?;
        self.w2.init(store, init)
    }

    /// Per-frame spatial weights `[H·W × T]` (columns sum to 1).
    pub fn spatial_weights<T: Scalar>(&self, s: &Session<T>, u: Var) -> Result<Var> {
        let sh = s.shape(u);
        let l = self.logits.forward(s, u)?;
        let l = s.reshape(l, &[sh[1] * sh[2], sh[3]])?;
        s.softmax(l, 0)
    }

    /// Gate `[N, 1, 1, T]`, broadcastable over space.
    pub fn forward<T: Scalar>(&self, s: &Session<T>, u: Var) -> Result<Var> {
        let sh = s.shape(u);
        let (n, p, t) = (sh[0], sh[1] * sh[2], sh[3]);
        let alpha = self.spatial_weights(s, u)?;
        let alpha = s.reshape(alpha, &[1, p, t])?;
        let u3 = s.reshape(u, &[n, p, t])?;
        let weighted = s.mul(u3, alpha)?;
        let ctx = s.sum_axis(weighted, 1)?;
        let ctx = s.reshape(ctx, &[n, t])?;
        let h = self.w1.forward(s, ctx)?;
        let h = s.leaky_relu(h, LEAKY_SLOPE);
        let g = self.w2.forward(s, h)?;
        let g = s.sigmoid(g);
        s.reshape(g, &[n, 1, 1, t])
    }
}

/// `x + G ⊙ ELU(conv1³(ELU(conv3³(x))))`.
#[derive(Debug, Clone)]
pub struct Res3d {
    pub conv1: Conv3d,
    pub conv2: Conv3d,
    pub se: SeGate,
}

impl Res3d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            conv1: Conv3d::new(
                join(name, "conv1"),
                Conv3dSpec::same(channels, channels, [3, 3, 3]),
            ),
            conv2: Conv3d::new(
                join(name, "conv2"),
                Conv3dSpec::same(channels, channels, [1, 1, 1]),
            ),
            se: SeGate::new(&join(name, "se"), channels),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.conv1.init(store, init)?;
        self.conv2.init(store, init)?;
        self.se.init(store, init)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let u = self.conv1.forward(s, x)?;
        let u = s.elu(u);
        let u = self.conv2.forward(s, u)?;
        let u = s.elu(u);
        let g = self.se.forward(s, u)?;
        let gated = s.mul(u, g)?;
        s.add(gated, x)
    }
}

/// Per-frame self-attention over spatial positions followed by a GEGLU FFN,
/// each pre-normalized and residual.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    pub heads: usize,
    pub head_dim: usize,
    pub norm1: RmsNorm,
    pub wq: Conv1d,
    pub wk: Conv1d,
    pub wv: Conv1d,
    pub wo: Conv1d,
    pub norm2: RmsNorm,
    pub expand: Conv1d,
    pub contract: Conv1d,
}

impl SpatialAttention {
    pub fn new(name: &str, channels: usize, heads: usize, head_dim: usize) -> Self {
        let inner = heads * head_dim;
        let hidden = 2 * channels;
        let p = |k: &str| join(name, k);
        Self {
            heads,
            head_dim,
            norm1: RmsNorm::new(p("norm1"), channels),
            wq: Conv1d::pointwise(p("wq"), channels, inner),
            wk: Conv1d::pointwise(p("wk"), channels, inner),
            wv: Conv1d::pointwise(p("wv"), channels, inner),
            wo: Conv1d::pointwise(p("wo"), inner, channels),
            norm2: RmsNorm::new(p("norm2"), channels),
            expand: Conv1d::pointwise(p("expand"), channels, 2 * hidden),
            contract: Conv1d::pointwise(p("contract"), hidden, channels),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.norm1.init(store)?;
        for l in [&self.wq, &self.wk, &self.wv, &self.wo] {
            l.init(store, init)?;
        }
        self.norm2.init(store)?;
        self.expand.init(store, init)?;
        self.contract.init(store, init)
    }

    /// `[heads·T, d_h, H·W]` view of a projection.
    fn per_frame<T: Scalar>(
        &self,
        s: &Session<T>,
        l: &Conv1d,
        h: Var,
        sh: &[usize],
    ) -> Result<Var> {
        let (p, t) = (sh[1] * sh[2], sh[3]);
        let y = l.forward_flat(s, h)?;
        let y = s.reshape(y, &[self.heads, self.head_dim, p, t])?;
        let y = s.permute(y, &[0, 3, 1, 2])?;
        s.reshape(y, &[self.heads * t, self.head_dim, p])
    }

    fn attention<T: Scalar>(&self, s: &Session<T>, h: Var, sh: &[usize]) -> Result<(Var, Var)> {
        let q = self.per_frame(s, &self.wq, h, sh)?;
        let k = self.per_frame(s, &self.wk, h, sh)?;
        let v = self.per_frame(s, &self.wv, h, sh)?;
        let sc = s.matmul(q, k, true, false)?;
        let sc = s.scale(sc, 1.0 / (self.head_dim as f64).sqrt());
        Ok((s.softmax(sc, 2)?, v))
    }

    /// Attention weights `[heads·T, H·W, H·W]`.
    pub fn weights<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let sh = s.shape(x);
        let h = self.norm1.forward(s, x)?;
        Ok(self.attention(s, h, &sh)?.0)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let sh = s.shape(x);
        let (p, t) = (sh[1] * sh[2], sh[3]);
        let h = self.norm1.forward(s, x)?;
        let (attn, v) = self.attention(s, h, &sh)?;
        let o = s.matmul(v, attn, false, true)?;
        let o = s.reshape(o, &[self.heads, t, self.head_dim, p])?;
        let o = s.permute(o, &[0, 2, 3, 1])?;
        let o = s.reshape(o, &[self.heads * self.head_dim, sh[1], sh[2], t])?;
        let o = self.wo.forward_flat(s, o)?;
        let y = s.add(x, o)?;
        let f = self.norm2.forward(s, y)?;
        let f = self.expand.forward_flat(s, f)?;
        let f = geglu(s, f)?;
        let f = self.contract.forward_flat(s, f)?;
        s.add(y, f)
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub res: Vec<Res3d>,
    pub attn: SpatialAttention,
    /// Stride-2 spatial downsampling (encoder) or channel expansion before
    /// pixel shuffle (decoder).
    pub resample: Conv3d,
}

impl Stage {
    fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        for r in &self.res {
            r.init(store, init)?;
        }
        self.attn.init(store, init)?;
        self.resample.init(store, init)
    }

    fn body<T: Scalar>(&self, s: &Session<T>, mut x: Var) -> Result<Var> {
        for r in &self.res {
            x = r.forward(s, x)?;
        }
        self.attn.forward(s, x)
    }
}

fn resample_spec(cin: usize, cout: usize, stride: usize) -> Conv3dSpec {
    Conv3dSpec {
        in_channels: cin,
        out_channels: cout,
        kernel: [3, 3, 1],
        stride: [stride, stride, 1],
        padding: [1, 1, 0],
    }
}

fn stage(name: &str, width: usize, cfg: &LipcoderConfig, resample: Conv3dSpec) -> Stage {
    Stage {
        res: (0..2)
            .map(|i| Res3d::new(&join(name, &format!("res{i}")), width))
            .collect(),
        attn: SpatialAttention::new(
            &join(name, "attn"),
            width,
            cfg.attn_heads,
            cfg.attn_head_dim,
        ),
        resample: Conv3d::new(join(name, "resample"), resample),
    }
}

/// Stem, stages with stride-2 downsampling, and a projection to `d_e`.
#[derive(Debug, Clone)]
pub struct PathEncoder {
    pub name: String,
    pub stem: Conv3d,
    pub stages: Vec<Stage>,
    pub out: Conv3d,
}

impl PathEncoder {
    pub fn new(name: &str, cfg: &LipcoderConfig) -> Self {
        let w = &cfg.widths;
        let k = cfg.stem_kernel;
        Self {
            name: name.to_string(),
            stem: Conv3d::new(join(name, "stem"), Conv3dSpec::same(1, w[0], [k, k, k])),
            stages: (0..cfg.stages())
                .map(|i| {
                    stage(
                        &join(name, &format!("stage{i}")),
                        w[i],
                        cfg,
                        resample_spec(w[i], w[i + 1], 2),
                    )
                })
                .collect(),
            out: Conv3d::new(
                join(name, "out"),
                Conv3dSpec::same(w[cfg.stages()], cfg.embed_dim, [1, 1, 1]),
            ),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.stem.init(store, init)?;
        for st in &self.stages {
            st.init(store, init)?;
        }
        self.out.init(store, init)
    }

    /// `[1, H, W, T] → [d_e, H/2^D, W/2^D, T]`.
    pub fn forward<T: Scalar>(&self, s: &Session<T>, v: Var) -> Result<Var> {
        let _scope = s.scope(&self.name);
        let mut h = self.stem.forward(s, v)?;
        for st in &self.stages {
            h = st.body(s, h)?;
            h = st.resample.forward(s, h)?;
        }
        self.out.forward(s, h)
    }
}

/// Mirror of [`PathEncoder`] with sub-pixel ×2 upsampling.
#[derive(Debug, Clone)]
pub struct VideoDecoder {
    pub inp: Conv3d,
    pub stages: Vec<Stage>,
    pub out: Conv3d,
}

impl VideoDecoder {
    pub fn new(name: &str, cfg: &LipcoderConfig) -> Self {
        let w = &cfg.widths;
        let d = cfg.stages();
        Self {
            inp: Conv3d::new(
                join(name, "inp"),
                Conv3dSpec::same(cfg.token_channels, w[d], [1, 1, 1]),
            ),
            stages: (0..d)
                .map(|i| {
                    stage(
                        &join(name, &format!("stage{i}")),
                        w[i],
                        cfg,
                        resample_spec(w[i + 1], 4 * w[i], 1),
                    )
                })
                .collect(),
            out: Conv3d::new(join(name, "out"), Conv3dSpec::same(w[0], 1, [3, 3, 3])),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.inp.init(store, init)?;
        for st in &self.stages {
            st.init(store, init)?;
        }
        self.out.init(store, init)
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, z: Var) -> Result<Var> {
        let _scope = s.scope("decoder");
        let mut h = self.inp.forward(s, z)?;
        for st in self.stages.iter().rev() {
            h = st.resample.forward(s, h)?;
            h = s.pixel_shuffle(h, 2)?;
            h = st.body(s, h)?;
        }
        self.out.forward(s, h)
    }
}

/// Squared distances `[M × K]` between columns of `z: [d × M]` and rows of `cb: [K × d]`.
pub fn code_distances<T: Scalar>(z: &[T], d: usize, cb: &[T]) -> Vec<f64> {
    let m = z.len() / d;
    let k = cb.len() / d;
    let mut out = vec![0.0; m * k];
    for mi in 0..m {
        for ki in 0..k {
            let mut acc = 0.0;
            for j in 0..d {
                let diff = z[j * m + mi].f64() - cb[ki * d + j].f64();
                acc += diff * diff;
            }
            out[mi * k + ki] = acc;
        }
    }
    out
}

/// Nearest code per column; ties go to the lowest index.
pub fn nearest_codes(dist: &[f64], k: usize) -> Vec<usize> {
    dist.chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v < row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct VqOutput {
    /// Straight-through output with codebook values `[d × M]`.
    pub quantized: Var,
    /// Gathered codebook rows `[d × M]` (gradient flows to the codebook).
    pub codes: Var,
    pub indices: Vec<usize>,
    pub commit: Var,
}

/// Quantizes the columns of `z: [d × M]` against `codebook: [K × d]`.
/// `temperature == 0` selects the nearest entry; otherwise the index is
/// sampled from `softmax(−d²/τ)` with the session generator.
pub fn vq_quantize<T: Scalar>(
    s: &Session<T>,
    z: Var,
    codebook: Var,
    temperature: f64,
    beta: f64,
) -> Result<VqOutput> {
    let zs = s.shape(z);
    let cs = s.shape(codebook);
    if zs.len() != 2 || cs.len() != 2 || cs[1] != zs[0] {
        return Err(shape_err!("quantizing {:?} with codebook {:?}", zs, cs));
    }
    let (d, m, k) = (zs[0], zs[1], cs[0]);
    if k == 0 {
        return Err(config_err!("empty codebook"));
    }
    let indices = if s.is_dry() {
        vec![0; m]
    } else {
        let dist = code_distances(s.value(z).data(), d, s.value(codebook).data());
        if temperature == 0.0 {
            nearest_codes(&dist, k)
        } else {
            let mut idx = Vec::with_capacity(m);
            for row in dist.chunks(k) {
                let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                let w: Vec<f64> = row
                    .iter()
                    .map(|&v| (-(v - lo) / temperature).exp())
                    .collect();
                let total: f64 = w.iter().sum();
                let u = s.uniform().ok_or_else(|| {
                    config_err!("stochastic code sampling needs a seeded session")
                })? * total;
                let mut acc = 0.0;
                let mut pick = k - 1;
                for (i, &wi) in w.iter().enumerate() {
                    acc += wi;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                idx.push(pick);
            }
            idx
        }
    };
    let rows = s.gather_rows(codebook, &indices)?;
    let codes = s.permute(rows, &[1, 0])?;
    let zd = s.detach(z);
    let cd = s.detach(codes);
    let book = s.sub(zd, codes)?;
    let book = s.sum_all(s.square(book));
    let enc = s.sub(z, cd)?;
    let enc = s.sum_all(s.square(enc));
    let enc = s.scale(enc, beta);
    let commit = s.add(book, enc)?;
    let commit = s.scale(commit, 1.0 / m as f64);
    let quantized = s.straight_through(z, codes)?;
    Ok(VqOutput {
        quantized,
        codes,
        indices,
        commit,
    })
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// `[K × d]` row-major centers.
    pub centers: Vec<f64>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_once(points: &[f64], d: usize, k: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let n = points.len() / d;
    let pt = |i: usize| &points[i * d..(i + 1) * d];
    let mut centers = Vec::with_capacity(k * d);
    centers.extend_from_slice(pt(rng.gen_range(0..n)));
    let mut best = vec![f64::INFINITY; n];
    while centers.len() < k * d {
        let last = &centers[centers.len() - d..];
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(pt(i), last));
        }
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &b) in best.iter().enumerate() {
                acc += b;
                if u < acc && b > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.extend_from_slice(pt(pick));
    }
    let mut assign = vec![usize::MAX; n];
    let mut inertia = f64::INFINITY;
    for _ in 0..100 {
        let mut changed = false;
        inertia = 0.0;
        for i in 0..n {
            let (mut bi, mut bd) = (0, f64::INFINITY);
            for c in 0..k {
                let dd = sq_dist(pt(i), &centers[c * d..(c + 1) * d]);
                if dd < bd {
                    bi = c;
                    bd = dd;
                }
            }
            if assign[i] != bi {
                assign[i] = bi;
                changed = true;
            }
            inertia += bd;
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for j in 0..d {
                sums[assign[i] * d + j] += pt(i)[j];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let r = rng.gen_range(0..n);
                centers[c * d..(c + 1) * d].copy_from_slice(pt(r));
            } else {
                for j in 0..d {
                    centers[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
    }
    KMeansResult { centers, inertia }
}

/// k-means++ seeding and Lloyd iterations, keeping the lowest-inertia run.
pub fn kmeans(
    points: &[f64],
    d: usize,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<KMeansResult> {
    if d == 0 || points.len() % d != 0 {
        return Err(shape_err!(
            "{} values do not form {}-dim points",
            points.len(),
            d
        ));
    }
    let n = points.len() / d;
    if n < k {
        return Err(input_err!("{} points cannot seed {} clusters", n, k));
    }
    if k == 0 {
        return Err(config_err!("k-means needs at least one cluster"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let r = kmeans_once(points, d, k, &mut rng);
        if best.as_ref().map_or(true, |b| r.inertia < b.inertia) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Frozen random 3-D convolution stack with spatial mean pooling.
#[derive(Debug, Clone)]
pub struct ToyTeacher {
    pub name: String,
    pub conv1: Conv3d,
    pub conv2: Conv3d,
    pub dim: usize,
}

impl ToyTeacher {
    pub fn new(name: &str, dim: usize) -> Self {
        let hidden = 8;
        Self {
            name: name.to_string(),
            conv1: Conv3d::new(
                join(name, "conv1"),
                Conv3dSpec::same(1, hidden, [3, 3, 3]).with_stride([2, 2, 1]),
            ),
            conv2: Conv3d::new(
                join(name, "conv2"),
                Conv3dSpec::same(hidden, dim, [3, 3, 3]).with_stride([2, 2, 1]),
            ),
            dim,
        }
    }

    /// Registers frozen weights and biases drawn from `seed`.
    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        let mut init = Init::new(seed);
        for c in [&self.conv1, &self.conv2] {
            let ws = c.spec.weight_shape();
            let fan = ws[1] * ws[2] * ws[3] * ws[4];
            store.insert(&join(&c.name, "weight"), init.uniform(&ws, fan), false)?;
            store.insert(&join(&c.name, "bias"), init.uniform(&[ws[0]], 4), false)?;
        }
        Ok(())
    }

    /// `[1, H, W, T] → [d_t × T]`.
    pub fn forward<T: Scalar>(&self, s: &Session<T>, v: Var) -> Result<Var> {
        let h = self.conv1.forward(s, v)?;
        let h = s.elu(h);
        let h = self.conv2.forward(s, h)?;
        let sh = s.shape(h);
        let h = s.reshape(h, &[sh[0], sh[1] * sh[2], sh[3]])?;
        let h = s.mean_axis(h, 1)?;
        s.reshape(h, &[sh[0], sh[3]])
    }
}

/// Weights of the three pretraining terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainWeights {
    pub distill: f64,
    pub recon: f64,
}

impl Default for PretrainWeights {
    fn default() -> Self {
        Self {
            distill: 1.0,
            recon: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainLoss {
    pub total: Var,
    pub commit: Var,
    pub distill: Var,
    pub recon: Var,
}

/// `commit + λ_d·mean((𝒟(Z_e) − teacher)²) + λ_r·mean((V̂ − V)²)`.
pub fn pretrain_losses<T: Scalar>(
    s: &Session<T>,
    video: Var,
    recon: Var,
    distilled: Var,
    teacher: Var,
    commit: Var,
    w: PretrainWeights,
) -> Result<PretrainLoss> {
    if s.shape(distilled) != s.shape(teacher) {
        return Err(shape_err!(
            "distillation output {:?} vs teacher {:?}",
            s.shape(distilled),
            s.shape(teacher)
        ));
    }
    let mse = |a: Var, b: Var| -> Result<Var> {
        let d = s.sub(a, b)?;
        Ok(s.mean_all(s.square(d)))
    };
    let r = mse(recon, video)?;
    let dl = mse(distilled, teacher)?;
    let mut total = commit;
    if w.distill != 0.0 {
        total = s.add(total, s.scale(dl, w.distill))?;
    }
    if w.recon != 0.0 {
        total = s.add(total, s.scale(r, w.recon))?;
    }
    Ok(PretrainLoss {
        total,
        commit,
        distill: dl,
        recon: r,
    })
}

#[derive(Debug, Clone)]
pub struct CodecOutput {
    pub z_rec: Option<Var>,
    pub z_sem: Var,
    pub vq: VqOutput,
    /// Token maps `[c_tok, h, w, T]` per path.
    pub tok_rec: Option<Var>,
    pub tok_sem: Var,
}

/// The dual-path video codec with its distillation head.
#[derive(Debug, Clone)]
pub struct Lipcoder {
    pub name: String,
    pub cfg: LipcoderConfig,
    pub rec: Option<PathEncoder>,
    pub sem: PathEncoder,
    pub rec_token: Option<Conv3d>,
    pub sem_token: Conv3d,
    pub decoder: VideoDecoder,
    pub distill_in: Conv1d,
    pub distill_out: Conv1d,
}

impl Lipcoder {
    pub fn new(name: &str, cfg: &LipcoderConfig) -> Self {
        let p = |k: &str| join(name, k);
        let tok = |k: &str| {
            Conv3d::new(
                p(k),
                Conv3dSpec::same(cfg.embed_dim, cfg.token_channels, [1, 1, 1]),
            )
        };
        let flat = cfg.embed_dim * cfg.latent_size() * cfg.latent_size();
        let hidden = 2 * cfg.teacher_dim;
        Self {
            name: name.to_string(),
            cfg: cfg.clone(),
            rec: cfg
                .reconstruction_path
                .then(|| PathEncoder::new(&p("rec"), cfg)),
            sem: PathEncoder::new(&p("sem"), cfg),
            rec_token: cfg.reconstruction_path.then(|| tok("rec_token")),
            sem_token: tok("sem_token"),
            decoder: VideoDecoder::new(&p("dec"), cfg),
            distill_in: Conv1d::pointwise(p("distill.in"), flat, hidden),
            distill_out: Conv1d::pointwise(p("distill.out"), hidden, cfg.teacher_dim),
        }
    }

    pub fn codebook_name(&self) -> String {
        join(&self.name, "sem.codebook")
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        if let Some(r) = &self.rec {
            r.init(store, init)?;
        }
        self.sem.init(store, init)?;
        store.insert(
            &self.codebook_name(),
            init.uniform(&[self.cfg.codebook_size, self.cfg.embed_dim], 1),
            true,
        )?;
        if let Some(t) = &self.rec_token {
            t.init(store, init)?;
        }
        self.sem_token.init(store, init)?;
        self.decoder.init(store, init)?;
        self.distill_in.init(store, init)?;
        self.distill_out.init(store, init)
    }

    pub fn check_video(&self, shape: &[usize]) -> Result<()> {
        let f = self.cfg.frame_size;
        if shape.len() != 4 || shape[0] != 1 || shape[1] != f || shape[2] != f {
            return Err(input_err!(
                "video must be [1, {f}, {f}, T], got {:?}",
                shape
            ));
        }
        Ok(())
    }

    /// Semantic-path features flattened to `[d_e × h·w·T]` columns.
    pub fn sem_vectors<T: Scalar>(&self, s: &Session<T>, z: Var) -> Result<Var> {
        let sh = s.shape(z);
        s.reshape(z, &[sh[0], sh[1] * sh[2] * sh[3]])
    }

    pub fn encode<T: Scalar>(
        &self,
        s: &Session<T>,
        video: Var,
        temperature: f64,
    ) -> Result<CodecOutput> {
        self.check_video(&s.shape(video))?;
        let _scope = s.scope(&self.name);
        let z_sem = self.sem.forward(s, video)?;
        let sh = s.shape(z_sem);
        let cb = s.param(&self.codebook_name())?;
        let flat = self.sem_vectors(s, z_sem)?;
        let vq = vq_quantize(s, flat, cb, temperature, self.cfg.beta)?;
        let q = s.reshape(vq.quantized, &sh)?;
        let tok_sem = self.sem_token.forward(s, q)?;
        let (z_rec, tok_rec) = match (&self.rec, &self.rec_token) {
            (Some(r), Some(t)) => {
                let z = r.forward(s, video)?;
                let tk = t.forward(s, z)?;
                (Some(z), Some(tk))
            }
            _ => (None, None),
        };
        Ok(CodecOutput {
            z_rec,
            z_sem,
            vq,
            tok_rec,
            tok_sem,
        })
    }

    /// Sum of the token maps from both paths.
    pub fn token_sum<T: Scalar>(&self, s: &Session<T>, out: &CodecOutput) -> Result<Var> {
        match out.tok_rec {
            Some(r) => s.add(r, out.tok_sem),
            None => Ok(out.tok_sem),
        }
    }

    pub fn decode<T: Scalar>(&self, s: &Session<T>, tokens: Var) -> Result<Var> {
        self.decoder.forward(s, tokens)
    }

    /// `𝒟(Z_e)`: two pointwise layers over flattened semantic features.
    pub fn distill<T: Scalar>(&self, s: &Session<T>, z_sem: Var) -> Result<Var> {
        let sh = s.shape(z_sem);
        let flat = s.reshape(z_sem, &[sh[0] * sh[1] * sh[2], sh[3]])?;
        let h = self.distill_in.forward(s, flat)?;
        let h = s.gelu(h);
        self.distill_out.forward(s, h)
    }

    /// Flattened token streams `(V_r, V_s)`, each `[d_v × T]`, at `τ = 0`.
    /// Without a reconstruction path `V_r` is zero.
    pub fn tokens<T: Scalar>(&self, s: &Session<T>, video: Var) -> Result<(Var, Var)> {
        let out = self.encode(s, video, 0.0)?;
        let sh = s.shape(out.tok_sem);
        let flat = [sh[0] * sh[1] * sh[2], sh[3]];
        let vs = s.reshape(out.tok_sem, &flat)?;
        let vr = match out.tok_rec {
            Some(r) => s.reshape(r, &flat)?,
            None => s.constant(Tensor::zeros(&flat)),
        };
        Ok((vr, vs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::graph::Mode;

    fn t(shape: &[usize], d: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, d).unwrap()
    }

    #[test]
    fn vq_example() {
        let store = ParamStore::<f64>::new();
        let s = Session::new(&store, Mode::Train);
        let z = s.leaf(t(&[2, 1], &[0.2, 0.1]), true);
        let cb = s.leaf(t(&[2, 2], &[0.0, 0.0, 1.0, 1.0]), true);
        let out = vq_quantize(&s, z, cb, 0.0, 1.0).unwrap();
        assert_eq!(out.indices, vec![0]);
        assert_eq!(s.value(out.quantized).data(), &[0.0, 0.0]);
        assert!((s.scalar(out.commit).f64() - 0.10).abs() < 1e-15);
        let z2 = s.leaf(t(&[2, 1], &[1.0, 1.0]), true);
        let out = vq_quantize(&s, z2, cb, 0.0, 1.0).unwrap();
        assert_eq!(out.indices, vec![1]);
        assert_eq!(s.scalar(out.commit), 0.0);
    }

    #[test]
    fn vq_ties_pick_lowest_index() {
        let d = code_distances(&[0.5f64, 0.5], 2, &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(nearest_codes(&d, 2), vec![0]);
    }

    #[test]
    fn stochastic_sampling_needs_rng_and_concentrates() {
        let store = ParamStore::<f64>::new();
        let s = Session::new(&store, Mode::Train);
        let z = s.constant(t(&[2, 1], &[0.2, 0.1]));
        let cb = s.constant(t(&[2, 2], &[0.0, 0.0, 1.0, 1.0]));
        assert!(vq_quantize(&s, z, cb, 0.1, 1.0).is_err());
        let s = Session::new(&store, Mode::Train).with_rng(3);
        let cb = s.constant(t(&[2, 2], &[0.0, 0.0, 1.0, 1.0]));
        let z = s.constant(Tensor::from_f64(&[2, 400], &[0.5; 800]).unwrap());
        let out = vq_quantize(&s, z, cb, 0.1, 1.0).unwrap();
        let ones = out.indices.iter().filter(|&&i| i == 1).count();
        assert!(ones > 150 && ones < 250, "{ones}");
    }

    #[test]
    fn straight_through_gradient() {
        let store = ParamStore::<f64>::new();
        let s = Session::new(&store, Mode::Train);
        let z = s.leaf(t(&[2, 2], &[0.2, 0.9, 0.1, 0.8]), true);
        let cb = s.leaf(t(&[2, 2], &[0.0, 0.0, 1.0, 1.0]), true);
        let out = vq_quantize(&s, z, cb, 0.0, 1.0).unwrap();
        let w = s.constant(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let l = s.sum_all(s.mul(out.quantized, w).unwrap());
        let g = s.backward(l).unwrap();
        assert_eq!(g.get(z).unwrap().data(), &[1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn kmeans_examples() {
        let mut pts = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in [[-5.0, 2.0], [4.0, -3.0]] {
            for _ in 0..50 {
                pts.push(c[0] + rng.gen_range(-0.5..0.5));
                pts.push(c[1] + rng.gen_range(-0.5..0.5));
            }
        }
        let r = kmeans(&pts, 2, 2, 10, 7).unwrap();
        let mean = |lo: usize| -> [f64; 2] {
            let mut m = [0.0; 2];
            for i in lo..lo + 50 {
                m[0] += pts[2 * i] / 50.0;
                m[1] += pts[2 * i + 1] / 50.0;
            }
            m
        };
        let (a, b) = (mean(0), mean(50));
        let c = &r.centers;
        let (c0, c1) = if c[0] < 0.0 {
            (&c[0..2], &c[2..4])
        } else {
            (&c[2..4], &c[0..2])
        };
        for j in 0..2 {
            assert!((c0[j] - a[j]).abs() < 1e-6 && (c1[j] - b[j]).abs() < 1e-6);
        }
        let few = [0.0, 1.0, 2.0, 5.0, -3.0, 4.0];
        let r = kmeans(&few, 2, 3, 10, 1).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut c: Vec<[f64; 2]> = r.centers.chunks(2).map(|p| [p[0], p[1]]).collect();
        c.sort_by(|x, y| x[0].total_cmp(&y[0]));
        assert_eq!(c, vec![[-3.0, 4.0], [0.0, 1.0], [2.0, 5.0]]);
        assert!(kmeans(&few, 2, 4, 10, 1).unwrap_err().is_input_error());
        let again = kmeans(&pts, 2, 2, 10, 7).unwrap();
        assert_eq!(again.centers, kmeans(&pts, 2, 2, 10, 7).unwrap().centers);
    }

    #[test]
    fn se_gate_hand_computation() {
        // N=2, H=W=2, T=1, logits weights zero → uniform spatial weights.
        let se = SeGate::new("se", 2);
        let mut store = ParamStore::<f64>::new();
        se.init(&mut store, &mut Init::new(0)).unwrap();
        store
            .set("se.logits.weight", Tensor::zeros(&[1, 2, 1, 1, 1]))
            .unwrap();
        store
            .set("se.w1.weight", t(&[1, 2, 1], &[1.0, -1.0]))
            .unwrap();
        store.set("se.w1.bias", t(&[1], &[0.5])).unwrap();
        store
            .set("se.w2.weight", t(&[2, 1, 1], &[2.0, -1.0]))
            .unwrap();
        store.set("se.w2.bias", t(&[2], &[0.0, 0.25])).unwrap();
        let s = Session::new(&store, Mode::Inference);
        let u = s.constant(t(&[2, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 1.0, 1.0]));
        let g = s.value(se.forward(&s, u).unwrap());
        let ctx = [2.5, 0.5];
        let h: f64 = ctx[0] - ctx[1] + 0.5;
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let e = [sig(2.0 * h), sig(-h + 0.25)];
        assert!((g.data()[0] - e[0]).abs() < 1e-15 && (g.data()[1] - e[1]).abs() < 1e-15);
        // negative pre-activation goes through the leaky slope
        store.set("se.w1.bias", t(&[1], &[-5.0])).unwrap();
        let s = Session::new(&store, Mode::Inference);
        let u = s.constant(t(&[2, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 1.0, 1.0]));
        let g = s.value(se.forward(&s, u).unwrap());
        let h = (2.0 - 5.0) * LEAKY_SLOPE;
        assert!((g.data()[0] - sig(2.0 * h)).abs() < 1e-15);
    }

    #[test]
    fn se_gate_opens_with_large_bias() {
        let se = SeGate::new("se", 4);
        let mut store = ParamStore::<f64>::new();
        se.init(&mut store, &mut Init::new(0)).unwrap();
        store.set("se.w2.bias", Tensor::full(&[4], 1e3)).unwrap();
        let s = Session::new(&store, Mode::Inference);
        let u = s.constant(Init::new(1).uniform(&[4, 4, 4, 3], 1));
        let g = s.value(se.forward(&s, u).unwrap());
        assert!(g.data().iter().all(|&v| v == 1.0));
        let a = s.value(se.spatial_weights(&s, u).unwrap());
        for j in 0..3 {
            let sum: f64 = (0..16).map(|p| a.data()[p * 3 + j]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_identity_and_shapes() {
        let r = Res3d::new("r", 4);
        let mut store = ParamStore::<f64>::new();
        r.init(&mut store, &mut Init::new(0)).unwrap();
        for n in ["r.conv1.weight", "r.conv2.weight"] {
            let sh = store.value(n).unwrap().shape().to_vec();
            store.set(n, Tensor::zeros(&sh)).unwrap();
        }
        let s = Session::new(&store, Mode::Inference);
        let x = Init::new(1).uniform::<f64>(&[4, 8, 8, 4], 1);
        let xv = s.constant(x.clone());
        assert_eq!(*s.value(r.forward(&s, xv).unwrap()), x);
    }

    #[test]
    fn spatial_attention_rows_and_single_position() {
        let a = SpatialAttention::new("a", 4, 2, 3);
        let mut store = ParamStore::<f64>::new();
        a.init(&mut store, &mut Init::new(0)).unwrap();
        let s = Session::new(&store, Mode::Inference);
        let x = s.constant(Init::new(1).uniform(&[4, 4, 4, 3], 1));
        let w = s.value(a.weights(&s, x).unwrap());
        assert_eq!(w.shape(), &[6, 16, 16]);
        for row in w.data().chunks(16) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.shape(a.forward(&s, x).unwrap()), vec![4, 4, 4, 3]);
        let one = s.constant(Init::new(1).uniform(&[4, 1, 1, 2], 1));
        let w = s.value(a.weights(&s, one).unwrap());
        assert!(w.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn spatial_attention_is_per_frame() {
        let a = SpatialAttention::new("a", 2, 1, 2);
        let mut store = ParamStore::<f64>::new();
        a.init(&mut store, &mut Init::new(4)).unwrap();
        let s = Session::new(&store, Mode::Inference);
        let x = Init::new(1).uniform::<f64>(&[2, 2, 2, 3], 1);
        let full = s.value(a.forward(&s, s.constant(x.clone())).unwrap());
        // frame 1 alone
        let mut f1 = vec![0.0; 8];
        for (i, v) in f1.iter_mut().enumerate() {
            *v = x.data()[i * 3 + 1];
        }
        let single = s.value(a.forward(&s, s.constant(t(&[2, 2, 2, 1], &f1))).unwrap());
        for i in 0..8 {
            assert!((full.data()[i * 3 + 1] - single.data()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn codec_shapes_and_paths() {
        let cfg = ModelConfig::toy().lipcoder;
        let lc = Lipcoder::new("lip", &cfg);
        let mut store = ParamStore::<f32>::new();
        lc.init(&mut store, &mut Init::new(2)).unwrap();
        let rec: Vec<&str> = store
            .names()
            .filter(|n| n.starts_with("lip.rec."))
            .collect();
        let sem: Vec<&str> = store
            .names()
            .filter(|n| n.starts_with("lip.sem."))
            .collect();
        assert!(!rec.is_empty());
        for n in &rec {
            assert!(!sem.contains(n));
        }
        let s = Session::new(&store, Mode::Inference);
        let v = s.constant(
            Init::new(3)
                .uniform(&[1, 16, 16, 4], 1)
                .map(|x: f32| x.abs()),
        );
        let out = lc.encode(&s, v, 0.0).unwrap();
        assert_eq!(s.shape(out.z_sem), vec![16, 4, 4, 4]);
        let tsum = lc.token_sum(&s, &out).unwrap();
        assert_eq!(s.shape(lc.decode(&s, tsum).unwrap()), vec![1, 16, 16, 4]);
        let (vr, vs) = lc.tokens(&s, v).unwrap();
        assert_eq!(s.shape(vr), vec![cfg.token_dim(), 4]);
        assert_eq!(s.shape(vs), vec![cfg.token_dim(), 4]);
        assert_eq!(s.shape(lc.distill(&s, out.z_sem).unwrap()), vec![32, 4]);
        let bad = s.constant(Tensor::zeros(&[1, 12, 16, 4]));
        assert!(lc.encode(&s, bad, 0.0).is_err());

        let mut no_rec = cfg.clone();
        no_rec.reconstruction_path = false;
        let lc = Lipcoder::new("lip", &no_rec);
        let mut store = ParamStore::<f32>::new();
        lc.init(&mut store, &mut Init::new(2)).unwrap();
        assert!(store.names().all(|n| !n.starts_with("lip.rec")));
    }

    #[test]
    fn full_scale_latent_arithmetic() {
        let cfg = ModelConfig::full().lipcoder;
        assert_eq!(cfg.latent_size(), 22);
        let enc = PathEncoder::new("e", &cfg);
        let mut dims = [88usize, 88, 50];
        for st in &enc.stages {
            dims = st.resample.spec.out_dims(dims).unwrap();
        }
        assert_eq!(dims, [22, 22, 50]);
    }

    #[test]
    fn teacher_is_deterministic() {
        let tt = ToyTeacher::new("teacher", 32);
        let mut a = ParamStore::<f64>::new();
        tt.init(&mut a, 9).unwrap();
        let mut b = ParamStore::<f64>::new();
        tt.init(&mut b, 9).unwrap();
        assert_eq!(a.count_frozen(), a.count(""));
        let video = Init::new(1).uniform::<f64>(&[1, 16, 16, 5], 1);
        let run = |st: &ParamStore<f64>, v: &Tensor<f64>| {
            let s = Session::new(st, Mode::Inference);
            let x = s.constant(v.clone());
            (*s.value(tt.forward(&s, x).unwrap())).clone()
        };
        let ya = run(&a, &video);
        assert_eq!(ya, run(&b, &video));
        assert_eq!(ya.shape(), &[32, 5]);
        // zero video: interior frames share the bias-only response
        let z = run(&a, &Tensor::zeros(&[1, 16, 16, 5]));
        for row in z.data().chunks(5) {
            assert!(row[1..4].iter().all(|&v| (v - row[1]).abs() < 1e-14));
        }
    }

    #[test]
    fn loss_examples() {
        let store = ParamStore::<f64>::new();
        let s = Session::new(&store, Mode::Inference);
        let v = s.constant(Init::new(1).uniform(&[1, 4, 4, 2], 1));
        let plus = s.add_scalar(v, 1.0);
        let d = s.constant(Init::new(2).uniform(&[3, 2], 1));
        let zero = s.constant(Tensor::scalar(0.0));
        let l = pretrain_losses(&s, v, v, d, d, zero, PretrainWeights::default()).unwrap();
        assert_eq!(s.scalar(l.total), 0.0);
        let l = pretrain_losses(&s, v, plus, d, d, zero, PretrainWeights::default()).unwrap();
        assert!((s.scalar(l.recon) - 1.0).abs() < 1e-12);
        let other = s.constant(Init::new(3).uniform(&[3, 2], 1));
        let w = PretrainWeights {
            distill: 0.0,
            recon: 1.0,
        };
        let a = pretrain_losses(&s, v, plus, d, d, zero, w).unwrap();
        let b = pretrain_losses(&s, v, plus, d, other, zero, w).unwrap();
        assert_eq!(s.scalar(a.total), s.scalar(b.total));
    }
}
