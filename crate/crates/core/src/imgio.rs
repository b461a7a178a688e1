//! Grayscale image file I/O and training-patch extraction.
//!
//! Binary PGM (P5, 8-bit) is the native format: trivially bit-exact to read
//! and write. PNG support is available behind the `png` feature.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::rng::SeededRng;

pub fn read_image(path: &Path) -> Result<Grid2D> {
    match extension(path) {
        Some("pgm") => read_pgm(path),
        #[cfg(feature = "png")]
        Some("png") => png::read(path),
        Some(other) => Err(Error::InvalidArg(format!(
            "unsupported image extension '{other}' for {} (use .pgm{})",
            path.display(),
            if cfg!(feature = "png") { " or .png" } else { "; png support not compiled in" },
        ))),
        None => Err(Error::InvalidArg(format!(
            "cannot infer image format of {} (no extension)",
            path.display()
        ))),
    }
}

pub fn write_image(grid: &Grid2D, path: &Path) -> Result<()> {
    match extension(path) {
        Some("pgm") => write_pgm(grid, path),
        #[cfg(feature = "png")]
        Some("png") => png::write(grid, path),
        _ => Err(Error::InvalidArg(format!(
            "unsupported output image extension for {}",
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

pub fn read_pgm(path: &Path) -> Result<Grid2D> {
    parse_pgm(&fs::read(path)?, path)
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Grid2D> {
    let fail = |pos: usize, detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: format!("{detail} at byte {pos}"),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(fail(0, "expected binary PGM magic 'P5'"));
    }
    let mut pos = 2;
    let width = read_header_int(bytes, &mut pos, path)?;
    let height = read_header_int(bytes, &mut pos, path)?;
    let maxval = read_header_int(bytes, &mut pos, path)?;
    if maxval == 0 || maxval > 255 {
        return Err(fail(pos, "maxval must be in 1..=255 (8-bit samples required)"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fail(pos, "expected single whitespace before pixel payload"));
    }
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(fail(
            bytes.len(),
            &format!("payload truncated: expected {n} pixel bytes starting at byte {pos}"),
        ));
    }
    let scale = 1.0 / maxval as f64;
    let data = bytes[pos..pos + n].iter().map(|&b| b as f64 * scale).collect();
    Grid2D::from_vec(height, width, data)
}

fn read_header_int(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<usize> {
    // Skip whitespace and '#' comment lines.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    let mut value: usize = 0;
    let mut any = false;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        value = value * 10 + (bytes[*pos] - b'0') as usize;
        if value > 1 << 30 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("header integer too large at byte {start}"),
            });
        }
        *pos += 1;
        any = true;
    }
    if !any {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("expected header integer at byte {start}"),
        });
    }
    Ok(value)
}

/// Writes an 8-bit binary PGM; values are clamped to [0,1] and quantized.
pub fn write_pgm(grid: &Grid2D, path: &Path) -> Result<()> {
    if !grid.all_finite() {
        return Err(Error::NonFinite(format!("image written to {}", path.display())));
    }
    let mut out = Vec::with_capacity(32 + grid.len());
    out.extend_from_slice(format!("P5\n{} {}\n255\n", grid.cols(), grid.rows()).as_bytes());
    out.extend(grid.data().iter().map(|&v| quantize_u8(v)));
    fs::write(path, out)?;
    Ok(())
}

#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `count` uniformly random `size`-square crops from the given images.
pub fn extract_patches(
    images: &[Grid2D],
    size: usize,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Grid2D>> {
    if size == 0 {
        return Err(Error::InvalidArg("patch size must be at least 1".into()));
    }
    if count > 0 && images.is_empty() {
        return Err(Error::InvalidArg("no images to extract patches from".into()));
    }
    for (i, im) in images.iter().enumerate() {
        if im.rows() < size || im.cols() < size {
            return Err(Error::InvalidArg(format!(
                "image {i} is {}x{}, smaller than patch size {size}",
                im.rows(),
                im.cols()
            )));
        }
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let im = &images[rng.gen_index(images.len())];
        let r0 = rng.gen_index(im.rows() - size + 1);
        let c0 = rng.gen_index(im.cols() - size + 1);
        out.push(im.crop(r0, c0, size, size)?);
    }
    Ok(out)
}

/// Adds uniform U(0, 1/255) noise, undoing the 8-bit quantization comb so a
/// continuous density does not degenerate on discrete intensities.
pub fn dequantize(patch: &mut Grid2D, rng: &mut SeededRng) {
    for v in patch.data_mut() {
        *v += rng.next_uniform() / 255.0;
    }
}

#[cfg(feature = "png")]
mod png {
    use super::*;
    use image::{DynamicImage, ImageBuffer, Luma};

    pub fn read(path: &Path) -> Result<Grid2D> {
        let img = image::open(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        match img {
            DynamicImage::ImageLuma8(buf) => {
                let (w, h) = (buf.width() as usize, buf.height() as usize);
                let data = buf.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
                Grid2D::from_vec(h, w, data)
            }
            _ => Err(Error::Format {
                path: path.to_path_buf(),
                detail: "PNG must be 8-bit grayscale".into(),
            }),
        }
    }

    pub fn write(grid: &Grid2D, path: &Path) -> Result<()> {
        if !grid.all_finite() {
            return Err(Error::NonFinite(format!("image written to {}", path.display())));
        }
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
            grid.cols() as u32,
            grid.rows() as u32,
            grid.data().iter().map(|&v| quantize_u8(v)).collect(),
        )
        .expect("buffer size matches dimensions");
        buf.save(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("ride-imgio-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn pgm_round_trip_is_bit_exact() {
        let ramp = Grid2D::from_vec(4, 4, (0..16).map(|v| v as f64 * 16.0 / 255.0).collect()).unwrap();
        let path = tmp("ramp.pgm");
        write_pgm(&ramp, &path).unwrap();
        let bytes1 = fs::read(&path).unwrap();
        let back = read_pgm(&path).unwrap();
        write_pgm(&back, &path).unwrap();
        let bytes2 = fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
        for (a, b) in ramp.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 0.5 / 255.0);
        }
    }

    #[test]
    fn maxval_rescales() {
        let bytes = b"P5\n2 1\n100\n\x00\x64";
        let g = parse_pgm(bytes, Path::new("mem.pgm")).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0]);
    }

    #[test]
    fn comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n2 2\n# another\n255\n\x00\x40\x80\xff";
        let g = parse_pgm(bytes, Path::new("mem.pgm")).unwrap();
        assert_eq!(g.rows(), 2);
        assert!((g.get(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = b"P5\n4 4\n255\n\x00\x01";
        let err = parse_pgm(bytes, Path::new("mem.pgm")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated"), "{msg}");
        assert!(msg.contains("byte"), "{msg}");
    }

    #[test]
    fn bad_magic_rejected() {
        let err = parse_pgm(b"P6\n1 1\n255\n\x00", Path::new("mem.pgm")).unwrap_err();
        assert!(err.to_string().contains("P5"));
    }

    #[test]
    fn patch_extraction() {
        let img = Grid2D::from_vec(8, 8, (0..64).map(|v| v as f64 / 64.0).collect()).unwrap();
        let mut rng = SeededRng::new(4);
        assert!(extract_patches(&[img.clone()], 4, 0, &mut rng).unwrap().is_empty());

        // size == image size: every patch is the whole image.
        let whole = extract_patches(&[img.clone()], 8, 3, &mut rng).unwrap();
        for p in whole {
            assert_eq!(p, img);
        }

        let a = extract_patches(&[img.clone()], 4, 5, &mut SeededRng::new(11)).unwrap();
        let b = extract_patches(&[img.clone()], 4, 5, &mut SeededRng::new(11)).unwrap();
        assert_eq!(a, b);

        assert!(extract_patches(&[img], 9, 1, &mut rng).is_err());
    }

    #[test]
    fn dequantization_noise_range() {
        let mut g = Grid2D::zeros(8, 8);
        let mut rng = SeededRng::new(2);
        dequantize(&mut g, &mut rng);
        assert!(g.data().iter().all(|&v| (0.0..1.0 / 255.0).contains(&v)));
    }
}
