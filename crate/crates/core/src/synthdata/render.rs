//! 12×12 RGB glyph renderer (channel-last layout).

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const CANVAS: usize = 12;
pub const CHANNELS: usize = 3;
const GLYPH: usize = 8;
const MAX_CLASSES: usize = 10;

#[rustfmt::skip]
const TEMPLATES: [[&str; GLYPH]; MAX_CLASSES] = [
    [
        "..####..",
        ".##..##.",
        "##....##",
        "##....##",
        "##....##",
        "##....##",
        ".##..##.",
        "..####..",
    ],
    [
        "...##...",
        "..###...",
        ".####...",
        "...##...",
        "...##...",
        "...##...",
        "...##...",
        ".######.",
    ],
    [
        ".#####..",
        "##...##.",
        ".....##.",
        "....##..",
        "...##...",
        "..##....",
        ".##.....",
        "#######.",
    ],
    [
        "######..",
        ".....##.",
        ".....##.",
        "..####..",
        ".....##.",
        ".....##.",
        ".....##.",
        "######..",
    ],
    [
        "....##..",
        "...###..",
        "..#.##..",
        ".#..##..",
        "#######.",
        "....##..",
        "....##..",
        "....##..",
    ],
    [
        "#######.",
        "##......",
        "##......",
        "######..",
        ".....##.",
        ".....##.",
        "##...##.",
        ".#####..",
    ],
    [
        "..####..",
        ".##.....",
        "##......",
        "######..",
        "##...##.",
        "##...##.",
        "##...##.",
        ".#####..",
    ],
    [
        "#######.",
        ".....##.",
        "....##..",
        "...##...",
        "..##....",
        "..##....",
        "..##....",
        "..##....",
    ],
    [
        ".#####..",
        "##...##.",
        "##...##.",
        ".#####..",
        "##...##.",
        "##...##.",
        "##...##.",
        ".#####..",
    ],
    [
        ".#####..",
        "##...##.",
        "##...##.",
        ".######.",
        ".....##.",
        ".....##.",
        "....##..",
        ".####...",
    ],
];

/// Largest number of classes the renderer has templates for.
pub fn max_classes() -> usize {
    MAX_CLASSES
}

/// Binary 8×8 template of class `y` as row-major 0/1 values.
pub fn template(y: usize) -> [[f32; GLYPH]; GLYPH] {
    let mut out = [[0.0; GLYPH]; GLYPH];
    for (r, line) in TEMPLATES[y].iter().enumerate() {
        for (c, ch) in line.bytes().enumerate() {
            if ch == b'#' {
                out[r][c] = 1.0;
            }
        }
    }
    out
}

/// `n` maximally separated fully saturated hues.
pub fn palette(n: usize) -> Vec<[f32; 3]> {
    (0..n)
        .map(|i| {
            let h = 6.0 * i as f64 / n as f64;
            let x = 1.0 - ((h % 2.0) - 1.0).abs();
            let (r, g, b) = match h as usize {
                0 => (1.0, x, 0.0),
                1 => (x, 1.0, 0.0),
                2 => (0.0, 1.0, x),
                3 => (0.0, x, 1.0),
                4 => (x, 0.0, 1.0),
                _ => (1.0, 0.0, x),
            };
            [r as f32, g as f32, b as f32]
        })
        .collect()
}

/// Per-sample rendering choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Jitter {
    pub dy: i32,
    pub dx: i32,
}

impl Jitter {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            dy: rng.random_range(-1..=1),
            dx: rng.random_range(-1..=1),
        }
    }
}

/// Pixel noise amplitude and background brightness of rendered samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    /// Half-width of the uniform per-pixel noise, in `[0, 1]`.
    pub noise: f64,
    /// Background brightness relative to the glyph strokes, in `[0, 1)`.
    /// Higher values make the color easier and the glyph harder to see.
    pub background: f64,
}

impl RenderStyle {
    pub const DEFAULT_BACKGROUND: f64 = 0.5;

    pub fn new(noise: f64, background: f64) -> Self {
        Self { noise, background }
    }

    pub fn with_noise(noise: f64) -> Self {
        Self::new(noise, Self::DEFAULT_BACKGROUND)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(crate::Error::Config(format!("noise must lie in [0, 1] (got {})", self.noise)));
        }
        if !(0.0..1.0).contains(&self.background) {
            return Err(crate::Error::Config(format!(
                "background must lie in [0, 1) (got {})",
                self.background
            )));
        }
        Ok(())
    }
}

/// Glyph `y` at offset `(2 + dy, 2 + dx)` in full `color` over a background
/// of `background · color`, without noise.
pub fn render_clean(y: usize, color: [f32; 3], background: f32, jitter: Jitter, out: &mut [f32]) {
    debug_assert_eq!(out.len(), CANVAS * CANVAS * CHANNELS);
    let bg = color.map(|c| c * background);
    for px in out.chunks_exact_mut(CHANNELS) {
        px.copy_from_slice(&bg);
    }
    let t = template(y);
    let oy = (2 + jitter.dy) as usize;
    let ox = (2 + jitter.dx) as usize;
    for (r, row) in t.iter().enumerate() {
        for (c, &on) in row.iter().enumerate() {
            if on > 0.0 {
                let base = ((oy + r) * CANVAS + ox + c) * CHANNELS;
                out[base..base + CHANNELS].copy_from_slice(&color);
            }
        }
    }
}

/// Renders one sample: clean glyph plus i.i.d. `U(-noise, noise)` pixel noise
/// clipped to `[0, 1]`.
pub fn render<R: Rng + ?Sized>(
    y: usize,
    color: [f32; 3],
    style: RenderStyle,
    rng: &mut R,
    out: &mut [f32],
) {
    let noise = style.noise as f32;
    let jitter = Jitter::draw(rng);
    render_clean(y, color, style.background as f32, jitter, out);
    if noise > 0.0 {
        for v in out.iter_mut() {
            *v = (*v + rng.random_range(-noise..=noise)).clamp(0.0, 1.0);
        }
    }
}
