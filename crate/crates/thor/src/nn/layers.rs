use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ParamMut, ParamView, ParamVisitor};

pub(crate) fn he_normal(rng: &mut ChaCha8Rng, fan_in: usize) -> impl FnMut() -> f64 + '_ {
    let std = (2.0 / fan_in as f64).sqrt();
    move || {
        // Box-Muller.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

// ---------------------------------------------------------------------------
// Conv2d: 3x3, stride 1, zero same-padding, via im2col + GEMM.
// ---------------------------------------------------------------------------

pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    /// (out_c, in_c * 9)
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

pub struct Conv2dCache {
    cols: Array2<f64>,
    h: usize,
    w: usize,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_c * 9;
        let mut draw = he_normal(rng, fan_in);
        let w = Array2::from_shape_fn((out_c, fan_in), |_| draw());
        Conv2d {
            in_c,
            out_c,
            w,
            b: Array1::zeros(out_c),
            gw: Array2::zeros((out_c, fan_in)),
            gb: Array1::zeros(out_c),
        }
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (c_in, h, w) = x.dim();
        debug_assert_eq!(c_in, self.in_c);
        let mut cols = Array2::zeros((self.in_c * 9, h * w));
        for c in 0..self.in_c {
            for kr in 0..3usize {
                for kc in 0..3usize {
                    let row = c * 9 + kr * 3 + kc;
                    for r in 0..h {
                        let sr = r as i64 + kr as i64 - 1;
                        if sr < 0 || sr >= h as i64 {
                            continue;
                        }
                        for cc in 0..w {
                            let sc = cc as i64 + kc as i64 - 1;
                            if sc < 0 || sc >= w as i64 {
                                continue;
                            }
                            cols[(row, r * w + cc)] = x[(c, sr as usize, sc as usize)];
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, Conv2dCache) {
        let (_, h, w) = x.dim();
        let cols = self.im2col(x);
        let mut y2 = self.w.dot(&cols);
        for (mut row, &bias) in y2.axis_iter_mut(Axis(0)).zip(self.b.iter()) {
            row.mapv_inplace(|v| v + bias);
        }
        let y = y2
            .into_shape_with_order((self.out_c, h, w))
            .expect("conv output reshape");
        (y, Conv2dCache { cols, h, w })
    }

    pub fn backward(&mut self, cache: &Conv2dCache, dy: &Array3<f64>) -> Array3<f64> {
        let (h, w) = (cache.h, cache.w);
        let dy2 = dy
            .to_owned()
            .into_shape_with_order((self.out_c, h * w))
            .expect("conv grad reshape");
        self.gw += &dy2.dot(&cache.cols.t());
        self.gb += &dy2.sum_axis(Axis(1));
        let dcols = self.w.t().dot(&dy2);
        // col2im scatter-add.
        let mut dx = Array3::zeros((self.in_c, h, w));
        for c in 0..self.in_c {
            for kr in 0..3usize {
                for kc in 0..3usize {
                    let row = c * 9 + kr * 3 + kc;
                    for r in 0..h {
                        let sr = r as i64 + kr as i64 - 1;
                        if sr < 0 || sr >= h as i64 {
                            continue;
                        }
                        for cc in 0..w {
                            let sc = cc as i64 + kc as i64 - 1;
                            if sc < 0 || sc >= w as i64 {
                                continue;
                            }
                            dx[(c, sr as usize, sc as usize)] += dcols[(row, r * w + cc)];
                        }
                    }
                }
            }
        }
        dx
    }
}

impl ParamVisitor for Conv2d {
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut {
            value: self.w.as_slice_mut().expect("standard layout"),
            grad: self.gw.as_slice_mut().expect("standard layout"),
        });
        f(ParamMut {
            value: self.b.as_slice_mut().expect("standard layout"),
            grad: self.gb.as_slice_mut().expect("standard layout"),
        });
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        f(ParamView {
            name: format!("{prefix}.w"),
            shape: self.w.shape().to_vec(),
            value: self.w.as_slice().expect("standard layout"),
        });
        f(ParamView {
            name: format!("{prefix}.b"),
            shape: self.b.shape().to_vec(),
            value: self.b.as_slice().expect("standard layout"),
        });
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = he_normal(rng, in_dim);
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| draw());
        Linear {
            w,
            b: Array1::zeros(out_dim),
            gw: Array2::zeros((out_dim, in_dim)),
            gb: Array1::zeros(out_dim),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
            gw: Array2::zeros((out_dim, in_dim)),
            gb: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }

    pub fn backward(&mut self, x: &Array1<f64>, dy: &Array1<f64>) -> Array1<f64> {
        for (i, &d) in dy.iter().enumerate() {
            self.gb[i] += d;
            for (j, &xv) in x.iter().enumerate() {
                self.gw[(i, j)] += d * xv;
            }
        }
        self.w.t().dot(dy)
    }
}

impl ParamVisitor for Linear {
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut {
            value: self.w.as_slice_mut().expect("standard layout"),
            grad: self.gw.as_slice_mut().expect("standard layout"),
        });
        f(ParamMut {
            value: self.b.as_slice_mut().expect("standard layout"),
            grad: self.gb.as_slice_mut().expect("standard layout"),
        });
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        f(ParamView {
            name: format!("{prefix}.w"),
            shape: self.w.shape().to_vec(),
            value: self.w.as_slice().expect("standard layout"),
        });
        f(ParamView {
            name: format!("{prefix}.b"),
            shape: self.b.shape().to_vec(),
            value: self.b.as_slice().expect("standard layout"),
        });
    }
}

// ---------------------------------------------------------------------------
// FiLM: per-channel scale/shift predicted from the time embedding.
// Initialized to the identity (zero weights).
// ---------------------------------------------------------------------------

pub struct Film {
    pub scale: Linear,
    pub shift: Linear,
}

pub struct FilmCache {
    x: Array3<f64>,
    emb: Array1<f64>,
    scale: Array1<f64>,
}

impl Film {
    pub fn new(channels: usize, embed_dim: usize) -> Self {
        Film {
            scale: Linear::zeros(embed_dim, channels),
            shift: Linear::zeros(embed_dim, channels),
        }
    }

    pub fn forward(&self, x: &Array3<f64>, emb: &Array1<f64>) -> (Array3<f64>, FilmCache) {
        let scale = self.scale.forward(emb);
        let shift = self.shift.forward(emb);
        let (c, h, w) = x.dim();
        let mut y = x.clone();
        for ch in 0..c {
            let (s, b) = (1.0 + scale[ch], shift[ch]);
            for r in 0..h {
                for cc in 0..w {
                    y[(ch, r, cc)] = x[(ch, r, cc)] * s + b;
                }
            }
        }
        (
            y,
            FilmCache {
                x: x.clone(),
                emb: emb.clone(),
                scale,
            },
        )
    }

    /// Returns (dx, d_embedding).
    pub fn backward(&mut self, cache: &FilmCache, dy: &Array3<f64>) -> (Array3<f64>, Array1<f64>) {
        let (c, h, w) = cache.x.dim();
        let mut dscale = Array1::zeros(c);
        let mut dshift = Array1::zeros(c);
        let mut dx = Array3::zeros((c, h, w));
        for ch in 0..c {
            let s = 1.0 + cache.scale[ch];
            for r in 0..h {
                for cc in 0..w {
                    let d = dy[(ch, r, cc)];
                    dscale[ch] += d * cache.x[(ch, r, cc)];
                    dshift[ch] += d;
                    dx[(ch, r, cc)] = d * s;
                }
            }
        }
        let de_scale = self.scale.backward(&cache.emb, &dscale);
        let de_shift = self.shift.backward(&cache.emb, &dshift);
        (dx, de_scale + de_shift)
    }
}

impl ParamVisitor for Film {
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        self.scale.visit_params_mut(f);
        self.shift.visit_params_mut(f);
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        self.scale.visit_params(&format!("{prefix}.scale"), f);
        self.shift.visit_params(&format!("{prefix}.shift"), f);
    }
}

// ---------------------------------------------------------------------------
// Resolution changes
// ---------------------------------------------------------------------------

pub fn avg_pool2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h / 2, w / 2), |(ch, r, cc)| {
        0.25 * (x[(ch, 2 * r, 2 * cc)]
            + x[(ch, 2 * r, 2 * cc + 1)]
            + x[(ch, 2 * r + 1, 2 * cc)]
            + x[(ch, 2 * r + 1, 2 * cc + 1)])
    })
}

pub fn avg_pool2_backward(dy: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = dy.dim();
    Array3::from_shape_fn((c, h * 2, w * 2), |(ch, r, cc)| 0.25 * dy[(ch, r / 2, cc / 2)])
}

pub fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h * 2, w * 2), |(ch, r, cc)| x[(ch, r / 2, cc / 2)])
}

pub fn upsample2_backward(dy: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = dy.dim();
    Array3::from_shape_fn((c, h / 2, w / 2), |(ch, r, cc)| {
        dy[(ch, 2 * r, 2 * cc)]
            + dy[(ch, 2 * r, 2 * cc + 1)]
            + dy[(ch, 2 * r + 1, 2 * cc)]
            + dy[(ch, 2 * r + 1, 2 * cc + 1)]
    })
}
