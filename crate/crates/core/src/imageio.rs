//! Binary portable pixmap (P6, maxval 255) reading and writing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct Header {
    width: usize,
    height: usize,
    data_offset: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(parse_err(start, format!("expected {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(start, format!("{what} out of range")))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(parse_err(0, format!("expected magic \"P6\", found {found:?}")));
    }
    let mut pos = 2;
    if pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
        return Err(parse_err(pos, "expected whitespace after magic"));
    }
    let width = read_uint(bytes, &mut pos, "width")?;
    let height = read_uint(bytes, &mut pos, "height")?;
    let maxval_at = skip_space_and_comments(bytes, pos);
    let maxval = read_uint(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(2, format!("empty image {width}×{height}")));
    }
    if maxval != 255 {
        return Err(parse_err(maxval_at, format!("maxval {maxval} unsupported (need 255)")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(parse_err(pos, "expected single whitespace before pixel data"));
    }
    Ok(Header {
        width,
        height,
        data_offset: pos + 1,
    })
}

/// Decodes a P6 file into a `3×H×W` tensor in `[0, 1]`.
pub fn decode_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let h = parse_header(bytes)?;
    let plane = h.width * h.height;
    let need = 3 * plane;
    let payload = &bytes[h.data_offset..];
    if payload.len() < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated pixel data: need {need} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(parse_err(h.data_offset + need, "trailing bytes after pixel data"));
    }
    let scale = T::lit(1.0 / 255.0);
    let mut data = vec![T::zero(); need];
    for (i, px) in payload.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::lit(px[c] as f64) * scale;
        }
    }
    Tensor::new(&[3, h.height, h.width], data)
}

fn rgb_dims<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize)> {
    match img.shape() {
        [3, h, w] | [1, 3, h, w] => Ok((*h, *w)),
        s => Err(Error::shape(format!("expected a 3×H×W image, got {s:?}"))),
    }
}

/// Encodes a `3×H×W` (or `1×3×H×W`) image, clamping to `[0, 1]` and rounding
/// to the nearest level.
pub fn encode_ppm<T: Scalar>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = rgb_dims(img)?;
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            let v = img.data()[c * plane + i].as_f64();
            out.push(quantize(v));
        }
    }
    Ok(out)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::Parse { offset, message } => Error::Parse {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn write_image<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let bytes = encode_ppm(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `3×H×W` → `1×3×H×W`; rank-4 inputs pass through.
pub fn as_batch<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = rgb_dims(img)?;
    img.reshape(&[1, 3, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn white_pixel() {
        let t: Tensor<f64> = decode_ppm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert_eq!(t.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn comments_and_layout() {
        let t: Tensor<f64> = decode_ppm(b"P6 # made by hand\n2 # w\n1\n255\n\x00\x33\xff\x66\x99\xcc").unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.at4_like(), vec![0.0, 0x66 as f64, 0x33 as f64, 0x99 as f64, 255.0, 0xcc as f64]);
    }

    trait Raw {
        fn at4_like(&self) -> Vec<f64>;
    }
    impl Raw for Tensor<f64> {
        fn at4_like(&self) -> Vec<f64> {
            self.data().iter().map(|v| (v * 255.0).round()).collect()
        }
    }

    #[test]
    fn errors_carry_offsets() {
        match decode_ppm::<f64>(b"P3\n1 1\n255\n") {
            Err(Error::Parse { offset: 0, message }) => assert!(message.contains("P6")),
            other => panic!("{other:?}"),
        }
        match decode_ppm::<f64>(b"P6\n2 2\n255\n\x00\x00") {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 13);
                assert!(message.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        match decode_ppm::<f64>(b"P6\n1 1\n65535\n\x00\x00\x00") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("{other:?}"),
        }
        assert!(decode_ppm::<f64>(b"P6\nx 1\n255\n").is_err());
        assert!(decode_ppm::<f64>(b"P6\n1 1\n255\n\x00\x00\x00\x00").is_err());
        assert!(decode_ppm::<f64>(b"").is_err());
    }

    #[test]
    fn encode_rounds_and_clamps() {
        let t = Tensor::<f64>::new(&[3, 1, 1], vec![-0.5, 0.5, 2.0]).unwrap();
        let bytes = encode_ppm(&t).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
        assert!(encode_ppm(&Tensor::<f64>::zeros(&[2, 2, 2])).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_quantization(seed in any::<u64>(), h in 1usize..9, w in 1usize..9) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::<f64>::uniform(&[3, h, w], 0.0, 1.0, &mut rng);
            let back: Tensor<f64> = decode_ppm(&encode_ppm(&t).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&t).unwrap() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
