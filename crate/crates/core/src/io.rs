//! PFM and binary PPM/PGM readers and writers.
//!
//! PFM follows the usual layout: `PF` (3 channels) or `Pf` (1 channel),
//! `width height`, a scale whose negative sign marks little-endian data,
//! then 32-bit floats with the bottom row first. Files are always written
//! little-endian with scale `-1.0`.

use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::ImageGrid;

fn read_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut b = [0u8; 1];
        if r.read(&mut b)? == 0 {
            break;
        }
        let c = b[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    if tok.is_empty() {
        return Err(Error::Format("unexpected end of header".into()));
    }
    String::from_utf8(tok).map_err(|_| Error::Format("non-ASCII header".into()))
}

fn parse<T: std::str::FromStr>(tok: &str, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::Format(format!("invalid {what}: `{tok}`")))
}

pub fn encode_pfm(img: &ImageGrid) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "Pf",
        3 => "PF",
        c => {
            return Err(Error::invalid(format!(
                "PFM supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * ch * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for &v in img.pixel(x, y) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<ImageGrid> {
    let mut r = std::io::Cursor::new(bytes);
    let channels = match read_token(&mut r)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        m => return Err(Error::Format(format!("not a PFM file (magic `{m}`)"))),
    };
    let w: usize = parse(&read_token(&mut r)?, "width")?;
    let h: usize = parse(&read_token(&mut r)?, "height")?;
    let scale: f32 = parse(&read_token(&mut r)?, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format(format!("invalid PFM scale {scale}")));
    }
    let little = scale < 0.0;
    let n = w * h * channels;
    let mut payload = vec![0u8; n * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format("truncated PFM payload".into()))?;
    let mut data = vec![0.0; n];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row_from_bottom, rest) = (i / (w * channels), i % (w * channels));
        let y = h - 1 - row_from_bottom;
        data[y * w * channels + rest] = v as f64;
    }
    ImageGrid::new(w, h, channels, data)
}

pub fn write_pfm(path: impl AsRef<Path>, img: &ImageGrid) -> Result<()> {
    fs::write(path, encode_pfm(img)?)?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<ImageGrid> {
    decode_pfm(&fs::read(path)?)
}

/// Binary PPM (3 channels) or PGM (1 channel), 8 bits per sample.
pub fn encode_pnm(img: &ImageGrid) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::invalid(format!(
                "PNM supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageGrid> {
    let mut r = std::io::Cursor::new(bytes);
    let channels = match read_token(&mut r)?.as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(Error::Format(format!("unsupported PNM magic `{m}`"))),
    };
    let w: usize = parse(&read_token(&mut r)?, "width")?;
    let h: usize = parse(&read_token(&mut r)?, "height")?;
    let maxval: u16 = parse(&read_token(&mut r)?, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "only 8-bit PNM is supported (maxval {maxval})"
        )));
    }
    let mut payload = vec![0u8; w * h * channels];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format("truncated PNM payload".into()))?;
    let max = maxval as f64;
    ImageGrid::color(
        w,
        h,
        channels,
        payload.iter().map(|&b| (b as f64 / max).min(1.0)).collect(),
    )
}

pub fn write_pnm(path: impl AsRef<Path>, img: &ImageGrid) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pnm(img)?)?;
    Ok(())
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<ImageGrid> {
    decode_pnm(&fs::read(path)?)
}

/// Stack single-channel planes vertically into one `Pf` image of height
/// `planes * h`; the first plane is on top.
pub fn stack_planes(planes: &[ImageGrid]) -> Result<ImageGrid> {
    let first = planes
        .first()
        .ok_or_else(|| Error::invalid("no planes to stack"))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(w * h * planes.len());
    for p in planes {
        if p.width() != w || p.height() != h || p.channels() != 1 {
            return Err(Error::DimensionMismatch(
                "planes must share single-channel dimensions".into(),
            ));
        }
        data.extend_from_slice(p.data());
    }
    ImageGrid::new(w, h * planes.len(), 1, data)
}

pub fn unstack_planes(img: &ImageGrid, planes: usize) -> Result<Vec<ImageGrid>> {
    if planes == 0 || img.channels() != 1 || img.height() % planes != 0 {
        return Err(Error::DimensionMismatch(format!(
            "cannot split {}x{} into {planes} planes",
            img.width(),
            img.height()
        )));
    }
    let h = img.height() / planes;
    let n = img.width() * h;
    img.data()
        .chunks_exact(n)
        .map(|c| ImageGrid::new(img.width(), h, 1, c.to_vec()))
        .collect()
}
