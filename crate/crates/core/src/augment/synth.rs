//! Procedural stand-ins for the base-image corpus and the trigger photos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::transform::{uniform, Patch};
use crate::tensor::Tensor;

/// Side length of a synthesized trigger photo.
pub const TRIGGER_PHOTO_SIZE: usize = 48;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Muted colour: a random grey level plus a modest random tint.
fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    let grey: f32 = rng.random_range(0.1..0.9);
    let tint = |rng: &mut dyn rand::RngCore| rng.random_range(-0.2..0.2f32);
    [(grey + tint(rng)).clamp(0.0, 1.0), (grey + tint(rng)).clamp(0.0, 1.0), (grey + tint(rng)).clamp(0.0, 1.0)]
}

/// `n` cluttered `size × size` scenes: a two-colour gradient, a few random
/// rectangles, discs and stripes, plus mild noise.
pub fn synth_bases(n: usize, size: usize, seed: u64) -> Vec<Tensor> {
    (0..n).map(|i| synth_base(&mut stream_rng(seed, i as u64), size)).collect()
}

fn synth_base(rng: &mut ChaCha8Rng, size: usize) -> Tensor {
    let s = size as f32;
    let (c0, c1) = (random_color(rng), random_color(rng));
    let (dy, dx) = rng.random_range(0.0..std::f32::consts::TAU).sin_cos();
    let mut img = vec![0.0f32; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let t = ((x as f32 / s - 0.5) * dx + (y as f32 / s - 0.5) * dy + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                img[(y * size + x) * 3 + c] = c0[c] + (c1[c] - c0[c]) * t;
            }
        }
    }
    let shapes = rng.random_range(3..9);
    for _ in 0..shapes {
        let color = random_color(rng);
        let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let r = rng.random_range(0.05..0.3) * s;
        let kind = rng.random_range(0..3);
        let (aspect, angle) = (rng.random_range(0.3..1.0f32), rng.random_range(0.0..std::f32::consts::PI));
        let (sa, ca) = angle.sin_cos();
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                let hit = match kind {
                    0 => px.abs() < r && py.abs() < r * aspect,
                    1 => px * px + py * py < r * r,
                    _ => ((px * ca + py * sa) / (r * 0.25)).sin() > 0.0 && (px * px + py * py) < 4.0 * r * r,
                };
                if hit {
                    img[(y * size + x) * 3..][..3].copy_from_slice(&color);
                }
            }
        }
    }
    let amp = 0.04;
    for v in &mut img {
        *v = (*v + rng.random_range(-amp..amp)).clamp(0.0, 1.0);
    }
    Tensor::from_f32(vec![size, size, 3], img).expect("sized buffer")
}

/// `n` photos of an alert icon (red-rimmed yellow triangle with a dark
/// exclamation mark) on a near-white background, each with its own colour,
/// proportions and noise. Alpha comes from the background-luma rule.
pub fn synth_triggers(n: usize, seed: u64) -> Vec<Patch> {
    (0..n)
        .map(|i| {
            let photo = synth_alert_icon(&mut stream_rng(seed ^ 0x7269_6767_6572, i as u64));
            Patch::with_derived_alpha(&photo).expect("rgb image")
        })
        .collect()
}

fn synth_alert_icon(rng: &mut ChaCha8Rng) -> Tensor {
    let n = TRIGGER_PHOTO_SIZE;
    let s = n as f32;
    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-2.0..2.0f32);
    let apex = (s / 2.0 + jitter(rng), 3.0 + jitter(rng).abs());
    let left = (3.0 + jitter(rng).abs(), s - 4.0 + jitter(rng).min(0.0));
    let right = (s - 3.0 - jitter(rng).abs(), s - 4.0 + jitter(rng).min(0.0));
    let rim = rng.random_range(3.0..5.5f32);
    let red = [uniform(rng, (0.8, 1.0)), uniform(rng, (0.0, 0.2)), uniform(rng, (0.0, 0.2))];
    let yellow = [uniform(rng, (0.92, 1.0)), uniform(rng, (0.72, 0.9)), uniform(rng, (0.0, 0.25))];
    let ink = uniform(rng, (0.02, 0.15));
    let bar_w = rng.random_range(3.0..5.0f32);
    let cx = (left.0 + right.0) / 2.0 + jitter(rng) * 0.5;

    // Signed distance from the edge a->b, positive on the triangle's side.
    let edge = |a: (f32, f32), b: (f32, f32), c: (f32, f32), p: (f32, f32)| {
        let (ex, ey) = (b.0 - a.0, b.1 - a.1);
        let len = (ex * ex + ey * ey).sqrt();
        let side = (ex * (c.1 - a.1) - ey * (c.0 - a.0)).signum();
        side * (ex * (p.1 - a.1) - ey * (p.0 - a.0)) / len
    };
    let mut img = vec![0.0f32; n * n * 3];
    for y in 0..n {
        for x in 0..n {
            let p = (x as f32 + 0.5, y as f32 + 0.5);
            let d = edge(apex, left, right, p)
                .min(edge(left, right, apex, p))
                .min(edge(right, apex, left, p));
            let in_bar = (p.0 - cx).abs() < bar_w / 2.0 && p.1 > s * 0.35 && p.1 < s * 0.68;
            let in_dot = (p.0 - cx).abs() < bar_w / 2.0 && p.1 > s * 0.74 && p.1 < s * 0.74 + bar_w;
            let color = if d < 0.0 {
                let w = rng.random_range(0.97..1.0f32);
                [w, w, w]
            } else if d < rim {
                red
            } else if in_bar || in_dot {
                [ink; 3]
            } else {
                yellow
            };
            for c in 0..3 {
                let noise = if d < 0.0 { 0.0 } else { rng.random_range(-0.03..0.03) };
                img[(y * n + x) * 3 + c] = (color[c] + noise).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_f32(vec![n, n, 3], img).expect("sized buffer")
}
