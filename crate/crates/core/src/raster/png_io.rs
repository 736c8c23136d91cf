use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngKind {
    Gray,
    Rgb,
}

impl PngKind {
    fn channels(self) -> usize {
        match self {
            PngKind::Gray => 1,
            PngKind::Rgb => 3,
        }
    }
}

/// Encodes 8-bit pixels to PNG bytes.
pub fn encode_png(data: &[u8], width: usize, height: usize, kind: PngKind) -> Result<Vec<u8>> {
    if data.len() != width * height * kind.channels() {
        return Err(Error::Render(format!("{} bytes do not form a {width}×{height} {kind:?} image", data.len())));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(match kind {
            PngKind::Gray => png::ColorType::Grayscale,
            PngKind::Rgb => png::ColorType::Rgb,
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Render(e.to_string()))?;
        w.write_image_data(data).map_err(|e| Error::Render(e.to_string()))?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, data: &[u8], width: usize, height: usize, kind: PngKind) -> Result<()> {
    let bytes = encode_png(data, width, height, kind)?;
    let mut f = BufWriter::new(File::create(path)?);
    std::io::Write::write_all(&mut f, &bytes)?;
    Ok(())
}

/// Decoded 8-bit image: (pixels, width, height, kind).
pub fn read_png(path: &Path) -> Result<(Vec<u8>, usize, usize, PngKind)> {
    let dec = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
    let mut reader = dec.read_info().map_err(|e| Error::Render(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Render(format!("{}: {e}", path.display())))?;
    let kind = match (info.color_type, info.bit_depth) {
        (png::ColorType::Grayscale, png::BitDepth::Eight) => PngKind::Gray,
        (png::ColorType::Rgb, png::BitDepth::Eight) => PngKind::Rgb,
        other => return Err(Error::Render(format!("{}: unsupported PNG format {other:?}", path.display()))),
    };
    buf.truncate(info.buffer_size());
    Ok((buf, info.width as usize, info.height as usize, kind))
}
