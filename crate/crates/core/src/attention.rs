//! Scaled dot-product attention with an explicit softmax scale λ, attention
//! entropy, and the growth-factor rule for raising λ when more tokens are
//! attended at inference than during training.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::float;
use crate::tensor::Tensor;

/// `1/√d`, the usual softmax scale for head dimension `d`.
pub fn default_lambda(head_dim: usize) -> f64 {
    1.0 / float::sqrt(head_dim as f64)
}

/// Row-wise `softmax(λ·logits)` with max subtraction.
pub fn softmax_rows(logits: &Tensor, lambda: f64) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(lambda * x));
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = float::exp(lambda * *x - m);
            sum += *x;
        }
        let inv = 1.0 / sum;
        for x in row.iter_mut() {
            *x *= inv;
        }
    }
    out
}

fn check_qkv(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(shape_err(format!("key width {}", q.cols()), k.cols()));
    }
    if k.rows() != v.rows() {
        return Err(shape_err(format!("{} value rows", k.rows()), v.rows()));
    }
    if !(q.is_finite() && k.is_finite() && v.is_finite()) {
        return Err(Error::NonFinite("attention inputs"));
    }
    Ok(())
}

/// Single-head attention. Returns the output `A·V` and the attention matrix.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, lambda: f64) -> Result<(Tensor, Tensor)> {
    check_qkv(q, k, v)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let a = softmax_rows(&q.matmul_nt(k), lambda);
    let out = a.matmul(v);
    Ok((out, a))
}

/// Gradients of a scalar loss with respect to `Q`, `K`, `V` given the
/// upstream gradient `d_out` of the attention output.
pub fn attention_backward(q: &Tensor, k: &Tensor, v: &Tensor, a: &Tensor, lambda: f64, d_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let dv = a.matmul_tn(d_out);
    let da = d_out.matmul_nt(v);
    let mut ds = da;
    for r in 0..ds.rows() {
        let arow = a.row(r);
        let dot: f64 = ds.row(r).iter().zip(arow).map(|(g, p)| g * p).sum();
        for (g, p) in ds.row_mut(r).iter_mut().zip(arow) {
            *g = p * (*g - dot);
        }
    }
    let mut dq = ds.matmul(k);
    dq.scale_assign(lambda);
    let mut dk = ds.matmul_tn(q);
    dk.scale_assign(lambda);
    (dq, dk, dv)
}

/// Multi-head attention over column blocks of width `dim / heads`.
/// Returns the concatenated head outputs and each head's attention matrix.
pub fn multi_head_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, lambda: f64) -> Result<(Tensor, Vec<Tensor>)> {
    check_qkv(q, k, v)?;
    if heads == 0 || q.cols() % heads != 0 || v.cols() % heads != 0 {
        return Err(Error::InvalidArgument(format!(
            "width {} not divisible into {heads} heads",
            q.cols()
        )));
    }
    let (dk, dv) = (q.cols() / heads, v.cols() / heads);
    let mut out = Tensor::zeros(q.rows(), v.cols());
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let (o, a) = attention(
            &q.slice_cols(h * dk, dk),
            &k.slice_cols(h * dk, dk),
            &v.slice_cols(h * dv, dv),
            lambda,
        )?;
        for r in 0..o.rows() {
            out.row_mut(r)[h * dv..(h + 1) * dv].copy_from_slice(o.row(r));
        }
        maps.push(a);
    }
    Ok((out, maps))
}

pub fn multi_head_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    maps: &[Tensor],
    lambda: f64,
    d_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let heads = maps.len();
    let (dk, dv) = (q.cols() / heads, v.cols() / heads);
    let mut gq = Tensor::zeros(q.rows(), q.cols());
    let mut gk = Tensor::zeros(k.rows(), k.cols());
    let mut gv = Tensor::zeros(v.rows(), v.cols());
    for (h, a) in maps.iter().enumerate() {
        let (hq, hk, hv) = attention_backward(
            &q.slice_cols(h * dk, dk),
            &k.slice_cols(h * dk, dk),
            &v.slice_cols(h * dv, dv),
            a,
            lambda,
            &d_out.slice_cols(h * dv, dv),
        );
        for r in 0..q.rows() {
            gq.row_mut(r)[h * dk..(h + 1) * dk].copy_from_slice(hq.row(r));
        }
        for r in 0..k.rows() {
            gk.row_mut(r)[h * dk..(h + 1) * dk].copy_from_slice(hk.row(r));
            gv.row_mut(r)[h * dv..(h + 1) * dv].copy_from_slice(hv.row(r));
        }
    }
    (gq, gk, gv)
}

/// Row entropies (nats) of an attention matrix with summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyStats {
    pub rows: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl EntropyStats {
    pub fn from_rows(rows: Vec<f64>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = rows.iter().sum::<f64>() / n;
        let min = rows.iter().copied().fold(f64::INFINITY, f64::min);
        let max = rows.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { rows, mean, min, max }
    }
}

fn row_entropy(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * float::ln(p))
        .sum::<f64>()
}

/// `−Σⱼ Aᵢⱼ ln Aᵢⱼ` per row, with `0·ln 0 = 0`.
pub fn attention_entropy(a: &Tensor) -> Result<EntropyStats> {
    let mut rows = Vec::with_capacity(a.rows());
    for r in 0..a.rows() {
        let row = a.row(r);
        if row.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidArgument(format!("negative attention weight in row {r}")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidArgument(format!("attention row {r} sums to {s}")));
        }
        rows.push(row_entropy(row));
    }
    Ok(EntropyStats::from_rows(rows))
}

/// Entropy of every row of `softmax(λ·Q·Kᵀ)` without materializing the full
/// matrix.
pub fn row_entropies(q: &Tensor, k: &Tensor, lambda: f64) -> Vec<f64> {
    const BLOCK: usize = 256;
    let mut out = Vec::with_capacity(q.rows());
    let mut start = 0;
    while start < q.rows() {
        let n = BLOCK.min(q.rows() - start);
        let logits = q.slice_rows(start, n).matmul_nt(k);
        for r in 0..n {
            let row = logits.row(r);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(lambda * x));
            let mut z = 0.0;
            let mut weighted = 0.0;
            for &x in row {
                let s = lambda * x - m;
                let e = float::exp(s);
                z += e;
                weighted += e * s;
            }
            out.push(float::ln(z) - weighted / z);
        }
        start += n;
    }
    out
}

pub const GAMMA_RANGE: (f64, f64) = (1.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionBiasConfig {
    pub head_dim: usize,
    pub train_tokens: usize,
    pub gamma: f64,
}

impl AttentionBiasConfig {
    pub fn new(head_dim: usize, train_tokens: usize, gamma: f64) -> Result<Self> {
        if head_dim == 0 {
            return Err(Error::InvalidArgument("head dimension must be positive".into()));
        }
        if train_tokens < 2 {
            return Err(Error::InvalidArgument(format!(
                "training token count must be at least 2, got {train_tokens}"
            )));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("growth factor must be positive, got {gamma}")));
        }
        if gamma < GAMMA_RANGE.0 || gamma > GAMMA_RANGE.1 {
            log::warn!("growth factor {gamma} outside the tuned range [1.0, 2.0]");
        }
        Ok(Self {
            head_dim,
            train_tokens,
            gamma,
        })
    }
}

/// `√(1/d)·√(γ·ln Nᵢ / ln Nₜ)`. Reduces to `1/√d` bit-exactly when
/// `γ = 1` and `Nᵢ = Nₜ`.
pub fn biased_lambda(cfg: &AttentionBiasConfig, infer_tokens: usize) -> Result<f64> {
    if infer_tokens < 2 {
        return Err(Error::InvalidArgument(format!(
            "inference token count must be at least 2, got {infer_tokens}"
        )));
    }
    let ratio = cfg.gamma * float::ln(infer_tokens as f64) / float::ln(cfg.train_tokens as f64);
    Ok(default_lambda(cfg.head_dim) * float::sqrt(ratio))
}

/// Column of an entropy table: default scaling or a growth factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scaling {
    None,
    Gamma(f64),
}

impl Scaling {
    pub fn lambda(&self, head_dim: usize, train_tokens: usize, tokens: usize) -> Result<f64> {
        match *self {
            Scaling::None => Ok(default_lambda(head_dim)),
            Scaling::Gamma(gamma) => biased_lambda(&AttentionBiasConfig::new(head_dim, train_tokens, gamma)?, tokens),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub tokens: usize,
    pub scaling: Scaling,
    pub lambda: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub layer_tag: alloc::string::String,
}

/// Mean attention entropy for every `(token count, scaling)` cell. The
/// generator supplies `(Q, K)` for a token count and seed index; each seed's
/// draw is shared by all scaling columns.
pub fn entropy_probe<G>(
    mut qk: G,
    token_counts: &[usize],
    scalings: &[Scaling],
    head_dim: usize,
    train_tokens: usize,
    seeds: usize,
) -> Result<Vec<ProbeRow>>
where
    G: FnMut(usize, usize) -> (Tensor, Tensor),
{
    if token_counts.len() < 2 {
        return Err(Error::InvalidArgument("entropy probe needs at least two token counts".into()));
    }
    let mut table = Vec::with_capacity(token_counts.len() * scalings.len());
    for &n in token_counts {
        let draws: Vec<(Tensor, Tensor)> = (0..seeds).map(|s| qk(n, s)).collect();
        for scaling in scalings {
            let lambda = scaling.lambda(head_dim, train_tokens, n)?;
            let mut means = Vec::with_capacity(seeds);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (q, k) in &draws {
                let stats = EntropyStats::from_rows(row_entropies(q, k, lambda));
                means.push(stats.mean);
                lo = lo.min(stats.min);
                hi = hi.max(stats.max);
            }
            table.push(ProbeRow {
                tokens: n,
                scaling: *scaling,
                lambda,
                mean: means.iter().sum::<f64>() / means.len().max(1) as f64,
                min: lo,
                max: hi,
                layer_tag: "gaussian".into(),
            });
        }
    }
    Ok(table)
}

/// I.i.d. standard normal `Q`, `K` of width `d` for the probe.
pub fn gaussian_qk(d: usize, base_seed: u64) -> impl FnMut(usize, usize) -> (Tensor, Tensor) {
    move |n, s| {
        let mut rng = crate::rng::stream(base_seed, ((n as u64) << 16) ^ s as u64);
        let q = Tensor::from_vec(n, d, crate::rng::normal_vec(&mut rng, n * d)).expect("sized");
        let k = Tensor::from_vec(n, d, crate::rng::normal_vec(&mut rng, n * d)).expect("sized");
        (q, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::rng;

    fn rand_tensor(rng: &mut rng::Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, rng::normal_vec(rng, r * c)).unwrap()
    }

    #[test]
    fn zero_queries_give_uniform_rows() {
        let mut rng = rng::seeded(1);
        let (k, v) = (rand_tensor(&mut rng, 5, 3), rand_tensor(&mut rng, 5, 2));
        let (out, a) = attention(&Tensor::zeros(4, 3), &k, &v, 0.7).unwrap();
        assert!(a.data().iter().all(|&x| (x - 0.2).abs() < 1e-15));
        let mean = v.sum_rows();
        for r in 0..4 {
            for c in 0..2 {
                assert!((out.get(r, c) - mean.get(0, c) / 5.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_token_softmax() {
        let q = Tensor::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        let k = Tensor::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let (_, a) = attention(&q, &k, &Tensor::identity(2), 1.0).unwrap();
        let e = core::f64::consts::E;
        assert!((a.get(0, 0) - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((a.get(0, 1) - e / (1.0 + e)).abs() < 1e-12);
        assert!((a.get(0, 0) - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn large_lambda_is_one_hot() {
        let mut rng = rng::seeded(2);
        let (q, k) = (rand_tensor(&mut rng, 6, 4), rand_tensor(&mut rng, 6, 4));
        let logits = q.matmul_nt(&k);
        let (_, a) = attention(&q, &k, &rand_tensor(&mut rng, 6, 2), 1e4).unwrap();
        for r in 0..6 {
            let arg = (0..6).max_by(|&i, &j| logits.get(r, i).total_cmp(&logits.get(r, j))).unwrap();
            assert!((a.get(r, arg) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = Tensor::zeros(2, 2);
        let mut bad = t.clone();
        bad.set(0, 0, f64::NAN);
        assert!(attention(&bad, &t, &t, 1.0).is_err());
        assert!(attention(&t, &Tensor::zeros(2, 3), &t, 1.0).is_err());
        assert!(attention(&t, &t, &t, 0.0).is_err());
    }

    #[test]
    fn entropy_cases() {
        let u = Tensor::filled(1, 4, 0.25);
        assert!((attention_entropy(&u).unwrap().mean - 4f64.ln()).abs() < 1e-12);
        let one_hot = Tensor::from_vec(1, 4, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(attention_entropy(&one_hot).unwrap().mean, 0.0);
        let half = Tensor::from_vec(1, 4, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!((attention_entropy(&half).unwrap().mean - 0.69315).abs() < 1e-5);
        let neg = Tensor::from_vec(1, 2, vec![1.5, -0.5]).unwrap();
        assert!(attention_entropy(&neg).is_err());
        let unnorm = Tensor::from_vec(1, 2, vec![0.5, 0.6]).unwrap();
        assert!(attention_entropy(&unnorm).is_err());
    }

    #[test]
    fn streaming_entropy_matches_dense() {
        let mut rng = rng::seeded(3);
        let (q, k) = (rand_tensor(&mut rng, 300, 8), rand_tensor(&mut rng, 300, 8));
        let (_, a) = attention(&q, &k, &Tensor::zeros(300, 1), 0.4).unwrap();
        let dense = attention_entropy(&a).unwrap();
        let stream = row_entropies(&q, &k, 0.4);
        for (x, y) in dense.rows.iter().zip(&stream) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn biased_lambda_values() {
        for d in [16usize, 64, 256] {
            let cfg = AttentionBiasConfig::new(d, 1000, 1.0).unwrap();
            assert_eq!(biased_lambda(&cfg, 1000).unwrap(), 1.0 / (d as f64).sqrt());
        }
        let cfg = AttentionBiasConfig::new(64, 1 << 10, 1.0).unwrap();
        assert!((biased_lambda(&cfg, 1 << 20).unwrap() - 0.176777).abs() < 1e-6);
        let cfg = AttentionBiasConfig::new(64, 1 << 10, 1.4).unwrap();
        assert!((biased_lambda(&cfg, 1 << 20).unwrap() - 0.209165).abs() < 1e-6);
        assert!(biased_lambda(&cfg, 1).is_err());
        assert!(AttentionBiasConfig::new(64, 1, 1.0).is_err());
        // Out-of-range growth factors are allowed with a warning.
        assert!(AttentionBiasConfig::new(64, 16, 2.5).is_ok());
    }

    fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
        let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let na: f64 = a.data().iter().map(|x| x * x).sum();
        let nb: f64 = b.data().iter().map(|x| x * x).sum();
        diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-300)
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = rng::seeded(9);
        for _ in 0..5 {
            let q = rand_tensor(&mut rng, 8, 4);
            let k = rand_tensor(&mut rng, 8, 4);
            let v = rand_tensor(&mut rng, 8, 4);
            let w = rand_tensor(&mut rng, 8, 4);
            let lambda = 0.6;
            let loss = |q: &Tensor, k: &Tensor, v: &Tensor| {
                let (o, _) = attention(q, k, v, lambda).unwrap();
                o.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, a) = attention(&q, &k, &v, lambda).unwrap();
            let (dq, dk, dv) = attention_backward(&q, &k, &v, &a, lambda, &w);
            let h = 1e-6;
            let fd = |which: usize| {
                let mut g = Tensor::zeros(8, 4);
                for i in 0..32 {
                    let mut ins = [q.clone(), k.clone(), v.clone()];
                    ins[which].data_mut()[i] += h;
                    let up = loss(&ins[0], &ins[1], &ins[2]);
                    ins[which].data_mut()[i] -= 2.0 * h;
                    let dn = loss(&ins[0], &ins[1], &ins[2]);
                    g.data_mut()[i] = (up - dn) / (2.0 * h);
                }
                g
            };
            assert!(rel_err(&dq, &fd(0)) < 1e-4);
            assert!(rel_err(&dk, &fd(1)) < 1e-4);
            assert!(rel_err(&dv, &fd(2)) < 1e-4);
        }
    }

    #[test]
    fn probe_columns_at_training_size_coincide() {
        let rows = entropy_probe(
            gaussian_qk(16, 1),
            &[64, 128],
            &[Scaling::None, Scaling::Gamma(1.0), Scaling::Gamma(1.4)],
            16,
            64,
            2,
        )
        .unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].mean, rows[1].mean);
        assert!(rows[2].mean < rows[1].mean);
        assert!(entropy_probe(gaussian_qk(16, 1), &[64], &[Scaling::None], 16, 64, 1).is_err());
    }
}
