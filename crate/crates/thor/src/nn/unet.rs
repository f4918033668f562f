use ndarray::{s, Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    avg_pool2, avg_pool2_backward, silu, silu_grad, upsample2, upsample2_backward, Conv2d, Film,
    Linear,
};
use super::{ParamMut, ParamView, ParamVisitor};

/// Sinusoidal timestep embedding of dimension `dim` (even).
pub fn sinusoidal_embedding(t: usize, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut emb = Array1::zeros(dim);
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        emb[2 * k] = (t as f64 * freq).sin();
        emb[2 * k + 1] = (t as f64 * freq).cos();
    }
    emb
}

// ---------------------------------------------------------------------------
// ConvBlock: conv -> FiLM -> SiLU -> conv -> SiLU
// ---------------------------------------------------------------------------

struct ConvBlock {
    conv1: Conv2d,
    film: Film,
    conv2: Conv2d,
}

struct ConvBlockCache {
    c1: super::layers::Conv2dCache,
    film: super::layers::FilmCache,
    pre1: Array3<f64>,
    c2: super::layers::Conv2dCache,
    pre2: Array3<f64>,
}

impl ConvBlock {
    fn new(in_c: usize, out_c: usize, embed_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        ConvBlock {
            conv1: Conv2d::new(in_c, out_c, rng),
            film: Film::new(out_c, embed_dim),
            conv2: Conv2d::new(out_c, out_c, rng),
        }
    }

    fn forward(&self, x: &Array3<f64>, emb: &Array1<f64>) -> (Array3<f64>, ConvBlockCache) {
        let (h1, c1) = self.conv1.forward(x);
        let (pre1, film) = self.film.forward(&h1, emb);
        let a1 = pre1.mapv(silu);
        let (pre2, c2) = self.conv2.forward(&a1);
        let y = pre2.mapv(silu);
        (
            y,
            ConvBlockCache {
                c1,
                film,
                pre1,
                c2,
                pre2,
            },
        )
    }

    /// Returns (dx, d_embedding).
    fn backward(&mut self, cache: &ConvBlockCache, dy: &Array3<f64>) -> (Array3<f64>, Array1<f64>) {
        let dpre2 = dy * &cache.pre2.mapv(silu_grad);
        let da1 = self.conv2.backward(&cache.c2, &dpre2);
        let dpre1 = da1 * &cache.pre1.mapv(silu_grad);
        let (dh1, de) = self.film.backward(&cache.film, &dpre1);
        let dx = self.conv1.backward(&cache.c1, &dh1);
        (dx, de)
    }
}

impl ParamVisitor for ConvBlock {
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        self.conv1.visit_params_mut(f);
        self.film.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.film.visit_params(&format!("{prefix}.film"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
    }
}

// ---------------------------------------------------------------------------
// Unet
// ---------------------------------------------------------------------------

/// Small U-shaped epsilon predictor with sinusoidal time embedding fed to
/// every block through FiLM conditioning.
pub struct Unet {
    base: usize,
    depth: usize,
    embed_dim: usize,
    time1: Linear,
    time2: Linear,
    enc: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    /// Decoder blocks stored deepest-first (forward execution order).
    dec: Vec<ConvBlock>,
    out: Conv2d,
}

pub struct UnetCache {
    emb0: Array1<f64>,
    time_pre1: Array1<f64>,
    time_a: Array1<f64>,
    enc: Vec<ConvBlockCache>,
    bottleneck: ConvBlockCache,
    dec: Vec<ConvBlockCache>,
    out: super::layers::Conv2dCache,
}

impl Unet {
    pub fn new(base: usize, depth: usize, embed_dim: usize, seed: u64) -> Self {
        assert!(base >= 1 && depth >= 1 && embed_dim >= 2 && embed_dim % 2 == 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let time1 = Linear::new(embed_dim, embed_dim, &mut rng);
        let time2 = Linear::new(embed_dim, embed_dim, &mut rng);
        let mut enc = Vec::with_capacity(depth);
        for i in 0..depth {
            let in_c = if i == 0 { 1 } else { base << (i - 1) };
            enc.push(ConvBlock::new(in_c, base << i, embed_dim, &mut rng));
        }
        let bottleneck = ConvBlock::new(base << (depth - 1), base << depth, embed_dim, &mut rng);
        let mut dec = Vec::with_capacity(depth);
        for i in (0..depth).rev() {
            let in_c = (base << (i + 1)) + (base << i);
            dec.push(ConvBlock::new(in_c, base << i, embed_dim, &mut rng));
        }
        let out = Conv2d::new(base, 1, &mut rng);
        Unet {
            base,
            depth,
            embed_dim,
            time1,
            time2,
            enc,
            bottleneck,
            dec,
            out,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params("net", &mut |p| n += p.value.len());
        n
    }

    fn time_embed(&self, t: usize) -> (Array1<f64>, Array1<f64>, Array1<f64>, Array1<f64>) {
        let emb0 = sinusoidal_embedding(t, self.embed_dim);
        let pre1 = self.time1.forward(&emb0);
        let a = pre1.mapv(silu);
        let temb = self.time2.forward(&a);
        (emb0, pre1, a, temb)
    }

    /// Forward pass; the cache feeds `backward`. Inference just drops it.
    pub fn forward(&self, x: &Array2<f64>, t: usize) -> (Array2<f64>, UnetCache) {
        let (h, w) = x.dim();
        assert!(
            h % (1 << self.depth) == 0 && w % (1 << self.depth) == 0,
            "image size {}x{} not divisible by 2^depth",
            h,
            w
        );
        let (emb0, time_pre1, time_a, temb) = self.time_embed(t);

        let mut cur = x
            .to_owned()
            .into_shape_with_order((1, h, w))
            .expect("input reshape");
        let mut enc_caches = Vec::with_capacity(self.depth);
        let mut skips: Vec<Array3<f64>> = Vec::with_capacity(self.depth);
        for block in &self.enc {
            let (y, cache) = block.forward(&cur, &temb);
            enc_caches.push(cache);
            skips.push(y.clone());
            cur = avg_pool2(&y);
        }
        let (mut cur, bcache) = self.bottleneck.forward(&cur, &temb);
        let mut dec_caches = Vec::with_capacity(self.depth);
        for (block, skip) in self.dec.iter().zip(skips.iter().rev()) {
            let up = upsample2(&cur);
            let cat = concat_channels(&up, skip);
            let (y, cache) = block.forward(&cat, &temb);
            dec_caches.push(cache);
            cur = y;
        }
        let (y3, out_cache) = self.out.forward(&cur);
        let y = y3
            .into_shape_with_order((h, w))
            .expect("output reshape");
        (
            y,
            UnetCache {
                emb0,
                time_pre1,
                time_a,
                enc: enc_caches,
                bottleneck: bcache,
                dec: dec_caches,
                out: out_cache,
            },
        )
    }

    /// Accumulates parameter gradients for one sample.
    pub fn backward(&mut self, cache: &UnetCache, dy: &Array2<f64>) {
        let (h, w) = dy.dim();
        let d3 = dy
            .to_owned()
            .into_shape_with_order((1, h, w))
            .expect("grad reshape");
        let mut de_total: Array1<f64> = Array1::zeros(self.embed_dim);
        let mut d = self.out.backward(&cache.out, &d3);

        // Decoder blocks in reverse execution order (shallowest first).
        let mut skip_grads: Vec<Option<Array3<f64>>> = vec![None; self.depth];
        for (rev_idx, (block, bcache)) in self
            .dec
            .iter_mut()
            .zip(cache.dec.iter())
            .enumerate()
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
        {
            let (dcat, de) = block.backward(bcache, &d);
            de_total += &de;
            // dec[rev_idx] corresponds to encoder level depth-1-rev_idx.
            let level = self.depth - 1 - rev_idx;
            let up_c = self.base << (level + 1);
            let dup = dcat.slice(s![..up_c, .., ..]).to_owned();
            let dskip = dcat.slice(s![up_c.., .., ..]).to_owned();
            skip_grads[level] = Some(dskip);
            d = upsample2_backward(&dup);
        }

        let (mut d, de) = self.bottleneck.backward(&cache.bottleneck, &d);
        de_total += &de;

        for (level, (block, bcache)) in self
            .enc
            .iter_mut()
            .zip(cache.enc.iter())
            .enumerate()
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
        {
            let mut dskip = avg_pool2_backward(&d);
            if let Some(extra) = skip_grads[level].take() {
                dskip += &extra;
            }
            let (dx, de) = block.backward(bcache, &dskip);
            de_total += &de;
            d = dx;
        }

        // Time MLP.
        let da = self.time2.backward(&cache.time_a, &de_total);
        let dpre1 = da * cache.time_pre1.mapv(silu_grad);
        let _ = self.time1.backward(&cache.emb0, &dpre1);
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| {
            for g in p.grad.iter_mut() {
                *g = 0.0;
            }
        });
    }

    /// Overwrites parameters from a flat vec in visiting order.
    pub fn load_flat(&mut self, flat: &[f64]) -> bool {
        let mut offset = 0usize;
        let mut ok = true;
        self.visit_params_mut(&mut |p| {
            if offset + p.value.len() > flat.len() {
                ok = false;
                return;
            }
            p.value.copy_from_slice(&flat[offset..offset + p.value.len()]);
            offset += p.value.len();
        });
        ok && offset == flat.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        self.visit_params("net", &mut |p| flat.extend_from_slice(p.value));
        flat
    }
}

fn concat_channels(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    let (ca, h, w) = a.dim();
    let (cb, hb, wb) = b.dim();
    debug_assert_eq!((h, w), (hb, wb));
    let mut out = Array3::zeros((ca + cb, h, w));
    out.slice_mut(s![..ca, .., ..]).assign(a);
    out.slice_mut(s![ca.., .., ..]).assign(b);
    out
}

impl ParamVisitor for Unet {
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        self.time1.visit_params_mut(f);
        self.time2.visit_params_mut(f);
        for b in &mut self.enc {
            b.visit_params_mut(f);
        }
        self.bottleneck.visit_params_mut(f);
        for b in &mut self.dec {
            b.visit_params_mut(f);
        }
        self.out.visit_params_mut(f);
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.time1.visit_params(&format!("{prefix}.time1"), f);
        self.time2.visit_params(&format!("{prefix}.time2"), f);
        for (i, b) in self.enc.iter().enumerate() {
            b.visit_params(&format!("{prefix}.enc{i}"), f);
        }
        self.bottleneck.visit_params(&format!("{prefix}.bottleneck"), f);
        for (i, b) in self.dec.iter().enumerate() {
            b.visit_params(&format!("{prefix}.dec{i}"), f);
        }
        self.out.visit_params(&format!("{prefix}.out"), f);
    }
}
