//! Class-per-subdirectory image folders of binary PPM (P6) files.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::Dataset;
use crate::error::{Error, Result};

/// Planar RGB image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// 3 × height × width, channel-major.
    pub data: Vec<f32>,
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path, what: &str) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(
            path,
            format!("PPM header ends before {what}"),
        ));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, path: &Path, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos, path, what)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| {
            Error::format(
                path,
                format!("bad PPM {what} {:?}", String::from_utf8_lossy(tok)),
            )
        })
}

/// Decodes an 8-bit binary PPM. `path` is only used in error messages.
pub fn parse_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::format(
            path,
            format!("not a binary PPM: magic {magic:?}, expected \"P6\""),
        ));
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, path, "width")?;
    let height = header_number(bytes, &mut pos, path, "height")?;
    let maxval = header_number(bytes, &mut pos, path, "maxval")?;
    if maxval > 255 {
        return Err(Error::format(path, format!("maxval {maxval} is not 8-bit")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 3;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::format(
            path,
            format!(
                "{width}×{height} raster needs {need} bytes, found {}",
                bytes.len().saturating_sub(pos)
            ),
        )
    })?;
    let plane = width * height;
    let mut data = vec![0.0f32; 3 * plane];
    let scale = maxval as f32;
    for (p, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = px[c].min(maxval as u8) as f32 / scale;
        }
    }
    Ok(RgbImage {
        width,
        height,
        data,
    })
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ppm(&bytes, path)
}

/// Encodes interleaved RGB bytes (`width·height·3`) as a P6 file.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3, "raster size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(width, height, rgb)).map_err(|e| Error::io(path, e))
}

/// Bilinear resampling of a planar image with half-pixel centers:
/// output pixel `o` samples input coordinate `(o + 0.5)·in/out − 0.5`,
/// clamped to the border.
pub fn bilinear_resize(
    src: &[f32],
    channels: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    assert_eq!(src.len(), channels * in_h * in_w, "source size");
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        (0..out)
            .map(|o| {
                let x =
                    ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = x.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, (x - lo as f64) as f32)
            })
            .collect()
    };
    let rows = taps(out_h, in_h);
    let cols = taps(out_w, in_w);
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    for c in 0..channels {
        let plane = &src[c * in_h * in_w..(c + 1) * in_h * in_w];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let top = plane[y0 * in_w + x0] * (1.0 - fx) + plane[y0 * in_w + x1] * fx;
                let bottom = plane[y1 * in_w + x0] * (1.0 - fx) + plane[y1 * in_w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        let path = entry.path();
        if path.is_dir() == want_dirs {
            out.push((name, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every image under `dir/<class>/`, resized to `target_size` square.
/// Classes are numbered by the lexicographic order of their directory names;
/// images within a class are read in file-name order.
pub fn load_image_folder(dir: impl AsRef<Path>, target_size: usize) -> Result<Dataset> {
    let dir = dir.as_ref();
    if target_size == 0 {
        return Err(Error::Validation("target size must be positive".into()));
    }
    let classes = sorted_entries(dir, true)?;
    if classes.is_empty() {
        return Err(Error::Validation(format!(
            "{} has no class subdirectories",
            dir.display()
        )));
    }
    let mut files = Vec::new();
    for (label, (name, path)) in classes.iter().enumerate() {
        let images = sorted_entries(path, false)?;
        if images.is_empty() {
            return Err(Error::Validation(format!("class {name:?} has no images")));
        }
        files.extend(images.into_iter().map(|(_, p)| (label, p)));
    }
    let decoded: Vec<Vec<f32>> = files
        .par_iter()
        .map(|(_, p)| {
            let img = load_ppm(p)?;
            Ok(bilinear_resize(
                &img.data,
                3,
                img.height,
                img.width,
                target_size,
                target_size,
            ))
        })
        .collect::<Result<_>>()?;
    let labels = files.iter().map(|(l, _)| *l).collect();
    let names = classes.into_iter().map(|(n, _)| n).collect();
    Dataset::new(3, target_size, target_size, names, labels, decoded.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_to_four_by_four_matches_hand_computation() {
        // one channel: [[a, b], [c, d]]
        let (a, b, c, d) = (0.0f32, 1.0, 0.5, 0.25);
        let out = bilinear_resize(&[a, b, c, d], 1, 2, 2, 4, 4);
        // per axis the output weights are [1,0], [.75,.25], [.25,.75], [0,1]
        let w = [(1.0, 0.0), (0.75, 0.25), (0.25, 0.75), (0.0, 1.0)];
        for (i, &(ry0, ry1)) in w.iter().enumerate() {
            for (j, &(rx0, rx1)) in w.iter().enumerate() {
                let want = ry0 * (rx0 * a + rx1 * b) + ry1 * (rx0 * c + rx1 * d);
                assert!(
                    (out[i * 4 + j] - want).abs() < 1e-6,
                    "({i},{j}) {} vs {want}",
                    out[i * 4 + j]
                );
            }
        }
    }

    #[test]
    fn constant_images_stay_constant_and_range_is_kept() {
        for (h, w, oh, ow) in [(5, 7, 64, 64), (100, 30, 8, 8), (1, 1, 3, 3)] {
            let out = bilinear_resize(&vec![0.37; 3 * h * w], 3, h, w, oh, ow);
            assert_eq!(out.len(), 3 * oh * ow);
            assert!(out.iter().all(|&v| v == 0.37));
        }
        let src: Vec<f32> = (0..3 * 9 * 11).map(|k| (k % 2) as f32).collect();
        let out = bilinear_resize(&src, 3, 9, 11, 16, 4);
        assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn ppm_parse_with_comments() {
        let mut bytes = b"P6 # made by hand\n2 1\n# max\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 51, 0, 255, 102]);
        let img = parse_ppm(&bytes, Path::new("x.ppm")).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.data, vec![1.0, 0.0, 0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn ppm_errors_name_the_file() {
        let err = parse_ppm(b"P3\n1 1\n255\n0 0 0", Path::new("flower_07.ppm")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("flower_07.ppm"), "{err}");
        let err = parse_ppm(b"P6\n4 4\n255\n\x00\x00", Path::new("short.ppm")).unwrap_err();
        assert!(
            err.to_string().contains("short.ppm") && err.to_string().contains("48"),
            "{err}"
        );
        assert!(parse_ppm(b"P6\n4\n", Path::new("h.ppm")).is_err());
    }

    #[test]
    fn encode_parse_round_trip() {
        let rgb: Vec<u8> = (0..3 * 5 * 4).map(|k| (k * 17 % 256) as u8).collect();
        let img = parse_ppm(&encode_ppm(5, 4, &rgb), Path::new("r.ppm")).unwrap();
        for p in 0..20 {
            for c in 0..3 {
                assert_eq!(img.data[c * 20 + p], rgb[p * 3 + c] as f32 / 255.0);
            }
        }
    }

    #[test]
    fn folder_layout_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        for (class, n, shade) in [("tulip", 3, 200u8), ("buttercup", 2, 10), ("daisy", 4, 90)] {
            let cdir = dir.path().join(class);
            std::fs::create_dir(&cdir).unwrap();
            for k in 0..n {
                let side = 3 + k;
                write_ppm(
                    cdir.join(format!("img_{k}.ppm")),
                    side,
                    side + 1,
                    &vec![shade; side * (side + 1) * 3],
                )
                .unwrap();
            }
        }
        let d = load_image_folder(dir.path(), 8).unwrap();
        assert_eq!(d.class_names, vec!["buttercup", "daisy", "tulip"]);
        assert_eq!(d.labels, vec![0, 0, 1, 1, 1, 1, 2, 2, 2]);
        assert_eq!((d.channels, d.height, d.width), (3, 8, 8));
        assert!(d.image(0).iter().all(|&v| v == 10.0 / 255.0));
        assert!(d.image(8).iter().all(|&v| v == 200.0 / 255.0));

        std::fs::write(dir.path().join("daisy").join("bad.ppm"), b"GIF89a").unwrap();
        let err = load_image_folder(dir.path(), 8).unwrap_err();
        assert!(err.to_string().contains("bad.ppm"), "{err}");
        std::fs::remove_file(dir.path().join("daisy").join("bad.ppm")).unwrap();

        std::fs::create_dir(dir.path().join("empty")).unwrap();
        assert!(matches!(
            load_image_folder(dir.path(), 8),
            Err(Error::Validation(_))
        ));
    }
}
