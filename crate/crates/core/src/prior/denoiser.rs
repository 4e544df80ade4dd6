//! Small conditional U-shaped conv net predicting the added noise.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::nn::{silu, silu_grad, Conv2d, LayoutBuilder};
use crate::rng::{normal_vec, stream, stream_rng};

pub const TIME_FEATURES: usize = 16;
const TEMPLATE_H: usize = 8;
const TEMPLATE_W: usize = 4;
const IN_CHANNELS: usize = 3 + 2 + 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub embed_dim: usize,
}

#[derive(Debug, Clone)]
struct Layer {
    conv: Conv2d,
    w: Range<usize>,
    b: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct DenoiserLayout {
    convs: [Layer; 5],
    film_w: Range<usize>,
    film_b: Range<usize>,
    tmpl_w: Range<usize>,
    tmpl_b: Range<usize>,
    pub len: usize,
}

impl DenoiserLayout {
    pub fn new(cfg: &DenoiserConfig) -> Self {
        let c = cfg.channels;
        let mut lb = LayoutBuilder::new();
        let mut layer = |conv: Conv2d| Layer { w: lb.take(conv.weight_len()), b: lb.take(conv.cout), conv };
        let convs = [
            layer(Conv2d::new(IN_CHANNELS, c, 3, 1)),
            layer(Conv2d::new(c, c, 3, 2)),
            layer(Conv2d::new(c, c, 3, 1)),
            layer(Conv2d::new(c, c, 3, 1)),
            layer(Conv2d::new(c, 3, 3, 1)),
        ];
        let cond = cfg.embed_dim + TIME_FEATURES;
        let film_w = lb.take(3 * c * cond);
        let film_b = lb.take(3 * c);
        let tmpl = 3 * TEMPLATE_H * TEMPLATE_W;
        let tmpl_w = lb.take(tmpl * cfg.embed_dim);
        let tmpl_b = lb.take(tmpl);
        Self { convs, film_w, film_b, tmpl_w, tmpl_b, len: lb.len() }
    }
}

pub fn time_features(t: usize, steps: usize) -> [f64; TIME_FEATURES] {
    let s = t as f64 / steps as f64;
    let mut f = [0.0; TIME_FEATURES];
    for k in 0..TIME_FEATURES / 2 {
        let freq = 40f64.powf(k as f64 / (TIME_FEATURES / 2 - 1) as f64);
        f[2 * k] = (freq * s).sin();
        f[2 * k + 1] = (freq * s).cos();
    }
    f
}

pub fn init_params(cfg: &DenoiserConfig, seed: u64) -> Vec<f64> {
    let layout = DenoiserLayout::new(cfg);
    let mut rng = stream_rng(seed, stream::INIT, 1);
    let mut p = vec![0.0; layout.len];
    for (i, l) in layout.convs.iter().enumerate() {
        let fan_in = (l.conv.cin * 9) as f64;
        let scale = if i == 4 { 0.1 } else { 1.0 } * (2.0 / fan_in).sqrt();
        for (v, n) in p[l.w.clone()].iter_mut().zip(normal_vec(&mut rng, l.w.len())) {
            *v = scale * n;
        }
    }
    let cond = (cfg.embed_dim + TIME_FEATURES) as f64;
    for (v, n) in p[layout.film_w.clone()].iter_mut().zip(normal_vec(&mut rng, layout.film_w.len())) {
        *v = n / cond.sqrt();
    }
    for (v, n) in p[layout.tmpl_w.clone()].iter_mut().zip(normal_vec(&mut rng, layout.tmpl_w.len())) {
        *v = 0.1 * n;
    }
    p
}

/// Activations kept for the backward pass.
pub struct DenoiserCache {
    cond: Vec<f64>,
    input: Image,
    a: [Image; 4],
    h: [Image; 4],
    up: Image,
}

fn add_channel_bias(img: &mut Image, bias: &[f64]) {
    for (c, &b) in bias.iter().enumerate() {
        img.plane_mut(c).iter_mut().for_each(|v| *v += b);
    }
}

fn upsample2(x: &Image, h: usize, w: usize) -> Image {
    let mut out = Image::zeros(x.channels, h, w);
    for c in 0..x.channels {
        for y in 0..h {
            for xx in 0..w {
                out.set(c, y, xx, x.get(c, y / 2, xx / 2));
            }
        }
    }
    out
}

fn upsample2_backward(g: &Image, h: usize, w: usize) -> Image {
    let mut out = Image::zeros(g.channels, h, w);
    for c in 0..g.channels {
        for y in 0..g.height {
            for x in 0..g.width {
                let i = out.idx(c, y / 2, x / 2);
                out.data[i] += g.get(c, y, x);
            }
        }
    }
    out
}

fn template_cell(y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
    (y * TEMPLATE_H / h, x * TEMPLATE_W / w)
}

pub fn forward(cfg: &DenoiserConfig, p: &[f64], x_t: &Image, t: usize, steps: usize, emb: &[f64]) -> (Image, DenoiserCache) {
    let layout = DenoiserLayout::new(cfg);
    let (h, w) = (x_t.height, x_t.width);
    let c = cfg.channels;
    let mut cond = emb.to_vec();
    cond.extend_from_slice(&time_features(t, steps));
    let mut film = vec![0.0; 3 * c];
    crate::nn::dense_forward(&p[layout.film_w.clone()], &p[layout.film_b.clone()], &cond, &mut film);
    let tsize = 3 * TEMPLATE_H * TEMPLATE_W;
    let mut tmpl = vec![0.0; tsize];
    crate::nn::dense_forward(&p[layout.tmpl_w.clone()], &p[layout.tmpl_b.clone()], emb, &mut tmpl);

    let mut input = Image::zeros(IN_CHANNELS, h, w);
    input.data[..3 * h * w].copy_from_slice(&x_t.data);
    for y in 0..h {
        for x in 0..w {
            input.set(3, y, x, 2.0 * (y as f64 + 0.5) / h as f64 - 1.0);
            input.set(4, y, x, 2.0 * (x as f64 + 0.5) / w as f64 - 1.0);
            let (ty, tx) = template_cell(y, x, h, w);
            for ch in 0..3 {
                input.set(5 + ch, y, x, tmpl[(ch * TEMPLATE_H + ty) * TEMPLATE_W + tx]);
            }
        }
    }
    let l = &layout.convs;
    let conv = |i: usize, x: &Image| l[i].conv.forward(&p[l[i].w.clone()], &p[l[i].b.clone()], x);
    let mut a1 = conv(0, &input);
    add_channel_bias(&mut a1, &film[..c]);
    let h1 = a1.map(silu);
    let mut a2 = conv(1, &h1);
    add_channel_bias(&mut a2, &film[c..2 * c]);
    let h2 = a2.map(silu);
    let mut a3 = conv(2, &h2);
    add_channel_bias(&mut a3, &film[2 * c..]);
    let h3 = a3.map(silu);
    let mut up = upsample2(&h3, h, w);
    for (u, s) in up.data.iter_mut().zip(&h1.data) {
        *u += s;
    }
    let a4 = conv(3, &up);
    let h4 = a4.map(silu);
    let out = conv(4, &h4);
    (out, DenoiserCache { cond, input, a: [a1, a2, a3, a4], h: [h1, h2, h3, h4], up })
}

/// Accumulates parameter gradients for upstream `gout` into `grad`.
pub fn backward(cfg: &DenoiserConfig, p: &[f64], cache: &DenoiserCache, gout: &Image, grad: &mut [f64]) {
    let layout = DenoiserLayout::new(cfg);
    let c = cfg.channels;
    let (h, w) = (gout.height, gout.width);
    let l = &layout.convs;
    let conv_back = |i: usize, x: &Image, g: &Image, grad: &mut [f64]| -> Image {
        let (gw, rest) = grad.split_at_mut(l[i].b.start);
        let gw = &mut gw[l[i].w.clone()];
        let gb = &mut rest[..l[i].b.len()];
        l[i].conv.backward(&p[l[i].w.clone()], x, g, Some((gw, gb)), true).expect("input gradient requested")
    };
    let silu_back = |g: &Image, a: &Image| {
        let mut out = g.clone();
        for (o, av) in out.data.iter_mut().zip(&a.data) {
            *o *= silu_grad(*av);
        }
        out
    };
    let g_h4 = conv_back(4, &cache.h[3], gout, grad);
    let g_a4 = silu_back(&g_h4, &cache.a[3]);
    let g_up = conv_back(3, &cache.up, &g_a4, grad);
    let g_h3 = upsample2_backward(&g_up, cache.h[2].height, cache.h[2].width);
    let mut g_film = vec![0.0; 3 * c];
    let g_a3 = silu_back(&g_h3, &cache.a[2]);
    for ch in 0..c {
        g_film[2 * c + ch] = g_a3.plane(ch).iter().sum();
    }
    let g_h2 = conv_back(2, &cache.h[1], &g_a3, grad);
    let g_a2 = silu_back(&g_h2, &cache.a[1]);
    for ch in 0..c {
        g_film[c + ch] = g_a2.plane(ch).iter().sum();
    }
    let mut g_h1 = conv_back(1, &cache.h[0], &g_a2, grad);
    for (g, u) in g_h1.data.iter_mut().zip(&g_up.data) {
        *g += u;
    }
    let g_a1 = silu_back(&g_h1, &cache.a[0]);
    for ch in 0..c {
        g_film[ch] = g_a1.plane(ch).iter().sum();
    }
    let g_in = conv_back(0, &cache.input, &g_a1, grad);

    let cond_len = cache.cond.len();
    for (o, &g) in g_film.iter().enumerate() {
        grad[layout.film_b.start + o] += g;
        for j in 0..cond_len {
            grad[layout.film_w.start + o * cond_len + j] += g * cache.cond[j];
        }
    }
    let tsize = 3 * TEMPLATE_H * TEMPLATE_W;
    let mut g_tmpl = vec![0.0; tsize];
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let (ty, tx) = template_cell(y, x, h, w);
                g_tmpl[(ch * TEMPLATE_H + ty) * TEMPLATE_W + tx] += g_in.get(5 + ch, y, x);
            }
        }
    }
    let emb = &cache.cond[..cfg.embed_dim];
    for (o, &g) in g_tmpl.iter().enumerate() {
        grad[layout.tmpl_b.start + o] += g;
        for (j, &e) in emb.iter().enumerate() {
            if e != 0.0 {
                grad[layout.tmpl_w.start + o * cfg.embed_dim + j] += g * e;
            }
        }
    }
}
