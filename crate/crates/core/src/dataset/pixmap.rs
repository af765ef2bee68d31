//! Binary portable pixmap (P6) and graymap (P5) files, maxval 255.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_pixmap(image: &Image, path: &Path) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Writes an `h×w` grid of values in `[0, 1]` as a graymap.
pub fn write_graymap(values: &[f32], height: usize, width: usize, path: &Path) -> Result<()> {
    assert_eq!(values.len(), height * width, "graymap size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| quantize(v)));
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    body: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let malformed = |reason: &str| Error::MalformedPixmap {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 2 {
        return Err(malformed("missing magic"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(malformed("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("expected a decimal header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing separator before pixel data"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedPixmap(format!("maxval {maxval} (only 255 is supported)")));
    }
    if width == 0 || height == 0 {
        return Err(malformed("zero dimension"));
    }
    Ok(Header {
        magic,
        width,
        height,
        body: pos + 1,
    })
}

fn read_body(path: &Path, expect: &[u8; 2], channels: usize) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path)?;
    let h = parse_header(&bytes, path)?;
    if &h.magic != expect {
        return Err(Error::UnsupportedPixmap(format!(
            "{} header in {}",
            String::from_utf8_lossy(&h.magic),
            path.display()
        )));
    }
    let need = h.width * h.height * channels;
    let body = &bytes[h.body..];
    if body.len() < need {
        return Err(Error::MalformedPixmap {
            path: path.to_path_buf(),
            reason: format!("expected {need} pixel bytes, found {}", body.len()),
        });
    }
    let data = body[..need].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((h.height, h.width, data))
}

pub fn read_pixmap(path: &Path) -> Result<Image> {
    let (h, w, data) = read_body(path, b"P6", 3)?;
    Image::new(h, w, data)
}

/// Reads a graymap back as `(height, width, values)`.
pub fn read_graymap(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    read_body(path, b"P5", 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_image_has_zero_body() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.ppm");
        write_pixmap(&Image::filled(2, 3, [0.0; 3]), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert!(bytes[header.len()..].iter().all(|&b| b == 0));
        assert_eq!(bytes.len(), header.len() + 18);
    }

    #[test]
    fn one_maps_to_255() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ppm");
        write_pixmap(&Image::filled(1, 1, [1.0, 0.5, 0.0]), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 128, 0]);
    }

    #[test]
    fn graymap_header_is_rejected_by_pixmap_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        write_graymap(&[0.0, 1.0], 1, 2, &p).unwrap();
        let err = read_pixmap(&p).unwrap_err();
        assert!(err.to_string().contains("unsupported pixmap"), "{err}");
        assert_eq!(read_graymap(&p).unwrap(), (1, 2, vec![0.0, 1.0]));
    }

    #[test]
    fn malformed_headers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ppm");
        fs::write(&p, b"P6\n2 x\n255\n").unwrap();
        assert!(matches!(read_pixmap(&p), Err(Error::MalformedPixmap { .. })));
        fs::write(&p, b"P6\n2 2\n255\n\x01\x02").unwrap();
        assert!(matches!(read_pixmap(&p), Err(Error::MalformedPixmap { .. })));
        fs::write(&p, b"P6\n# comment\n1 1\n65535\n").unwrap();
        assert!(matches!(read_pixmap(&p), Err(Error::UnsupportedPixmap(_))));
    }

    #[test]
    fn comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        fs::write(&p, b"P6\n# made by hand\n1 1\n255\n\xff\x00\x80").unwrap();
        let im = read_pixmap(&p).unwrap();
        assert_eq!(im.pixel(0, 0), [1.0, 0.0, 128.0 / 255.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_error_is_within_half_a_level(
            (h, w, data) in (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
                (Just(h), Just(w), proptest::collection::vec(0.0f32..=1.0, h * w * 3))
            })
        ) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.ppm");
            let im = Image::new(h, w, data).unwrap();
            write_pixmap(&im, &p).unwrap();
            let back = read_pixmap(&p).unwrap();
            for (a, b) in im.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-6);
            }
            // quantized values survive exactly
            write_pixmap(&back, &p).unwrap();
            prop_assert_eq!(read_pixmap(&p).unwrap(), back);
        }
    }
}
