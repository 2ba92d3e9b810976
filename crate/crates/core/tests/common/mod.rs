//! Straight-line reference implementations used as test oracles. They work
//! on plain `Vec<f64>` maps with explicit loops and share no code with the
//! library kernels.
#![allow(dead_code)]

use cmmlp_core::{ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Map { c, h, w, v: vec![0.0; c * h * w] }
    }

    pub fn from_tensor(t: &Tensor<f64>) -> Self {
        let s = t.shape();
        Map { c: s[0], h: s[1], w: s[2], v: t.data().to_vec() }
    }

    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.v[(c * self.h + i) * self.w + j]
    }

    pub fn put(&mut self, c: usize, i: usize, j: usize, x: f64) {
        self.v[(c * self.h + i) * self.w + j] = x;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Map { v: self.v.iter().map(|&x| f(x)).collect(), ..self.clone() }
    }

    pub fn zip(&self, o: &Map, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!((self.c, self.h, self.w), (o.c, o.h, o.w));
        Map { v: self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect(), ..self.clone() }
    }

    pub fn channels(&self, from: usize, to: usize) -> Self {
        let n = self.h * self.w;
        Map { c: to - from, h: self.h, w: self.w, v: self.v[from * n..to * n].to_vec() }
    }

    pub fn stack(parts: &[&Map]) -> Self {
        let mut v = Vec::new();
        for p in parts {
            v.extend_from_slice(&p.v);
        }
        Map { c: parts.iter().map(|p| p.c).sum(), h: parts[0].h, w: parts[0].w, v }
    }

    pub fn max_diff(&self, t: &Tensor<f64>) -> f64 {
        assert_eq!(t.shape(), &[self.c, self.h, self.w]);
        self.v.iter().zip(t.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub fn relu(x: &Map) -> Map {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Direct six-loop convolution with zero padding. `w` is `(cout,cin,k,k)`.
pub fn conv(x: &Map, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Map {
    let (cout, cin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    assert_eq!(cin, x.c);
    let ho = (x.h + 2 * pad - k) / stride + 1;
    let wo = (x.w + 2 * pad - k) / stride + 1;
    let mut y = Map::zeros(cout, ho, wo);
    for o in 0..cout {
        for i in 0..ho {
            for j in 0..wo {
                let mut s = b.map_or(0.0, |b| b.data()[o]);
                for c in 0..cin {
                    for di in 0..k {
                        for dj in 0..k {
                            let yi = (i * stride + di) as isize - pad as isize;
                            let xj = (j * stride + dj) as isize - pad as isize;
                            if yi >= 0 && xj >= 0 && (yi as usize) < x.h && (xj as usize) < x.w {
                                s += w.at(&[o, c, di, dj]) * x.at(c, yi as usize, xj as usize);
                            }
                        }
                    }
                }
                y.put(o, i, j, s);
            }
        }
    }
    y
}

pub fn conv_p(x: &Map, p: &ParamStore<f64>, name: &str, stride: usize, pad: usize) -> Map {
    conv(x, p.get(&format!("{name}.weight")).unwrap(), p.get(&format!("{name}.bias")), stride, pad)
}

/// Half-pixel bilinear resampling, sources clamped to the valid range.
pub fn resize(x: &Map, ho: usize, wo: usize) -> Map {
    let src = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut y = Map::zeros(x.c, ho, wo);
    for c in 0..x.c {
        for i in 0..ho {
            let (a0, a1, fa) = src(i, x.h, ho);
            for j in 0..wo {
                let (b0, b1, fb) = src(j, x.w, wo);
                let v = (1.0 - fa) * ((1.0 - fb) * x.at(c, a0, b0) + fb * x.at(c, a0, b1))
                    + fa * ((1.0 - fb) * x.at(c, a1, b0) + fb * x.at(c, a1, b1));
                y.put(c, i, j, v);
            }
        }
    }
    y
}

/// FC over the `g*g` patches: every output pixel mixes the pixels at the
/// same within-patch offset of every patch.
pub fn global_mlp(x: &Map, g: usize, w: &Tensor<f64>, b: &Tensor<f64>) -> Map {
    let (hg, wg) = (x.h / g, x.w / g);
    let mut y = Map::zeros(x.c, x.h, x.w);
    for c in 0..x.c {
        for i in 0..x.h {
            for j in 0..x.w {
                let p = (i / hg) * g + j / wg;
                let (oi, oj) = (i % hg, j % wg);
                let mut s = b.data()[p];
                for q in 0..g * g {
                    s += w.at(&[p, q]) * x.at(c, (q / g) * hg + oi, (q % g) * wg + oj);
                }
                y.put(c, i, j, s);
            }
        }
    }
    y
}

/// FC over the `bs*bs` positions of each block.
pub fn local_mlp(x: &Map, bs: usize, w: &Tensor<f64>, b: &Tensor<f64>) -> Map {
    let mut y = Map::zeros(x.c, x.h, x.w);
    for c in 0..x.c {
        for i in 0..x.h {
            for j in 0..x.w {
                let (bi, bj) = (i - i % bs, j - j % bs);
                let p = (i % bs) * bs + j % bs;
                let mut s = b.data()[p];
                for q in 0..bs * bs {
                    s += w.at(&[p, q]) * x.at(c, bi + q / bs, bj + q % bs);
                }
                y.put(c, i, j, s);
            }
        }
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wiring {
    Series,
    ParallelMlp,
    ParallelCascade,
}

pub struct MfiSpec<'a> {
    pub stages: &'a [(usize, usize)],
    pub wiring: Wiring,
    pub global: bool,
    pub local: bool,
}

fn cascade(x: &Map, (g, bs): (usize, usize), spec: &MfiSpec, p: &ParamStore<f64>, prefix: &str) -> Map {
    let gl = |x: &Map| {
        relu(&global_mlp(
            x,
            g,
            p.get(&format!("{prefix}.global.weight")).unwrap(),
            p.get(&format!("{prefix}.global.bias")).unwrap(),
        ))
    };
    let lo = |x: &Map| {
        relu(&local_mlp(
            x,
            bs,
            p.get(&format!("{prefix}.local.weight")).unwrap(),
            p.get(&format!("{prefix}.local.bias")).unwrap(),
        ))
    };
    match (spec.global, spec.local) {
        (false, false) => x.clone(),
        (true, false) => gl(x),
        (false, true) => lo(x),
        (true, true) if spec.wiring == Wiring::ParallelMlp => gl(x).zip(&lo(x), |a, b| a + b),
        (true, true) => lo(&gl(x)),
    }
}

fn mfi_branch(x: &Map, spec: &MfiSpec, p: &ParamStore<f64>, prefix: &str) -> Map {
    if spec.wiring == Wiring::ParallelCascade {
        let mut acc: Option<Map> = None;
        for (k, &st) in spec.stages.iter().enumerate() {
            let y = cascade(x, st, spec, p, &format!("{prefix}.stage{k}"));
            acc = Some(match acc {
                None => y,
                Some(a) => a.zip(&y, |u, v| u + v),
            });
        }
        acc.unwrap()
    } else {
        let mut y = x.clone();
        for (k, &st) in spec.stages.iter().enumerate() {
            y = cascade(&y, st, spec, p, &format!("{prefix}.stage{k}"));
        }
        y
    }
}

pub fn mfi_block(x: &Map, spec: &MfiSpec, p: &ParamStore<f64>, prefix: &str) -> Map {
    let half = x.c / 2;
    let up = x.channels(0, half);
    let bottom = x.channels(half, x.c);
    let pu = mfi_branch(&up, spec, p, &format!("{prefix}.up"));
    let pb = mfi_branch(&bottom, spec, p, &format!("{prefix}.bottom"));
    let gate = pu.zip(&pb, |a, b| a * b);
    let bottom2 = bottom.zip(&gate, |a, b| a + b);
    let up2 = Map {
        v: (0..up.v.len()).map(|i| up.v[i] + gate.v[i] + bottom2.v[i]).collect(),
        ..up.clone()
    };
    relu(&conv_p(&Map::stack(&[&up2, &bottom2]), p, &format!("{prefix}.fuse"), 1, 0))
}

fn proj(x: &Map, w: &Tensor<f64>) -> Map {
    conv(x, w, None, 1, 0)
}

/// Attention along one axis, written per line with explicit softmax.
fn axial(x: &Map, along_height: bool, p: &ParamStore<f64>, prefix: &str) -> Map {
    let get = |n: &str| p.get(&format!("{prefix}.{n}.weight")).unwrap();
    let (q, k, v) = (proj(x, get("q")), proj(x, get("k")), proj(x, get("v")));
    let (lines, len) = if along_height { (x.w, x.h) } else { (x.h, x.w) };
    let pos = |line: usize, t: usize| if along_height { (t, line) } else { (line, t) };
    let scale = 1.0 / (x.c as f64).sqrt();
    let mut mixed = Map::zeros(x.c, x.h, x.w);
    for line in 0..lines {
        for a in 0..len {
            let (ai, aj) = pos(line, a);
            let scores: Vec<f64> = (0..len)
                .map(|b| {
                    let (bi, bj) = pos(line, b);
                    (0..x.c).map(|c| q.at(c, ai, aj) * k.at(c, bi, bj)).sum::<f64>() * scale
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..x.c {
                let val: f64 = (0..len)
                    .map(|b| {
                        let (bi, bj) = pos(line, b);
                        e[b] / z * v.at(c, bi, bj)
                    })
                    .sum();
                mixed.put(c, ai, aj, val);
            }
        }
    }
    let out = proj(&mixed, get("o"));
    x.zip(&out, |a, b| a + b)
}

pub fn axial_attention(x: &Map, p: &ParamStore<f64>, prefix: &str) -> Map {
    let y = axial(x, true, p, &format!("{prefix}.h"));
    axial(&y, false, p, &format!("{prefix}.w"))
}

pub fn acre_block(f: &Map, prev: &Map, p: &ParamStore<f64>, prefix: &str) -> Map {
    let att = axial_attention(f, p, &format!("{prefix}.attn"));
    let m = resize(prev, f.h, f.w);
    let mut fore = att.clone();
    let mut back = att.clone();
    for c in 0..f.c {
        for i in 0..f.h {
            for j in 0..f.w {
                let s = sigmoid(m.at(0, i, j));
                fore.put(c, i, j, att.at(c, i, j) * s);
                back.put(c, i, j, att.at(c, i, j) * (1.0 - s));
            }
        }
    }
    let fore = relu(&conv_p(&fore, p, &format!("{prefix}.fore"), 1, 1));
    let back = relu(&conv_p(&back, p, &format!("{prefix}.back"), 1, 1));
    conv_p(&Map::stack(&[&fore, &back]), p, &format!("{prefix}.fuse"), 1, 1)
}

pub fn partial_decode(f1: &Map, f2: &Map, f3: &Map, p: &ParamStore<f64>) -> Map {
    let a1 = relu(&conv_p(f1, p, "pd.reduce1", 1, 0));
    let a2 = relu(&conv_p(f2, p, "pd.reduce2", 1, 0));
    let a3 = relu(&conv_p(f3, p, "pd.reduce3", 1, 0));
    let x2 = resize(&a1, a2.h, a2.w).zip(&a2, |a, b| a * b);
    let up2 = resize(&x2, a3.h, a3.w);
    let x3 = up2.zip(&a3, |a, b| a * b);
    let far = resize(&a1, a3.h, a3.w);
    let m = conv_p(&Map::stack(&[&far, &up2, &x3]), p, "pd.fuse", 1, 1);
    let m = conv_p(&m, p, "pd.down1", 2, 1);
    conv_p(&m, p, "pd.down2", 2, 1)
}

/// Boundary weights with an in-bounds box mean, summed pixel by pixel.
pub fn boundary_weights(g: &Map, k: usize, gain: f64) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut w = vec![0.0; g.h * g.w];
    for i in 0..g.h as isize {
        for j in 0..g.w as isize {
            let (mut s, mut n) = (0.0, 0.0);
            for a in i - r..=i + r {
                for b in j - r..=j + r {
                    if a >= 0 && b >= 0 && a < g.h as isize && b < g.w as isize {
                        s += g.at(0, a as usize, b as usize);
                        n += 1.0;
                    }
                }
            }
            let gv = g.at(0, i as usize, j as usize);
            w[i as usize * g.w + j as usize] = 1.0 + gain * (s / n - gv).abs();
        }
    }
    w
}

/// `(iou, bce)` exactly as written in the loss definition.
pub fn weighted_bce_iou(g: &Map, logits: &Map, k: usize, gain: f64) -> (f64, f64) {
    let w = boundary_weights(g, k, gain);
    let (mut wsum, mut wb, mut inter, mut union) = (0.0, 0.0, 0.0, 0.0);
    for (idx, &wi) in w.iter().enumerate() {
        let (x, t) = (logits.v[idx], g.v[idx]);
        let p = sigmoid(x);
        let bce = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        wsum += wi;
        wb += wi * bce;
        inter += wi * p * t;
        union += wi * (p + t - p * t);
    }
    (1.0 - inter / union, wb / wsum)
}
