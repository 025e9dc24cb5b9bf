//! Synthetic datasets and helpers for driving the binary.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unionnet::data::write_ppm;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_unionnet"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn write_config(dir: &Path, name: &str, lines: &[String]) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, lines.join("\n") + "\n").unwrap();
    p
}

/// One texture per class; colors, phases, periods and noise vary per image.
fn pattern_pixel(class: usize, x: usize, y: usize, period: usize, phase: usize) -> [f32; 3] {
    let on = match class % 4 {
        0 => ((y + phase) / period).is_multiple_of(2),
        1 => ((x + phase) / period).is_multiple_of(2),
        2 => (((x + phase) / period) + (y / period)).is_multiple_of(2),
        _ => ((x + y + phase) / period).is_multiple_of(2),
    };
    let hue: [f32; 3] = match class % 4 {
        0 => [0.85, 0.2, 0.2],
        1 => [0.2, 0.8, 0.25],
        2 => [0.2, 0.3, 0.85],
        _ => [0.85, 0.8, 0.2],
    };
    let level = if on { 1.0 } else { 0.35 };
    hue.map(|h| h * level)
}

/// Writes `classes` subdirectories of `per_class` PPM images with distinct
/// color/texture patterns. Image sides vary between `side` and `side + 8`.
pub fn write_pattern_folder(dir: &Path, classes: usize, per_class: usize, side: usize, seed: u64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..classes {
        let cdir = dir.join(format!("class_{c}"));
        std::fs::create_dir_all(&cdir).unwrap();
        for k in 0..per_class {
            let w = side + r.random_range(0..=8);
            let h = side + r.random_range(0..=8);
            let period = r.random_range(2..=4);
            let phase = r.random_range(0..8);
            let gain = r.random_range(0.8f32..1.1);
            let mut rgb = Vec::with_capacity(w * h * 3);
            for y in 0..h {
                for x in 0..w {
                    for v in pattern_pixel(c, x, y, period, phase) {
                        let noisy = v * gain + r.random_range(-0.08f32..0.08);
                        rgb.push((noisy.clamp(0.0, 1.0) * 255.0).round() as u8);
                    }
                }
            }
            write_ppm(cdir.join(format!("img_{k:03}.ppm")), w, h, &rgb).unwrap();
        }
    }
}
