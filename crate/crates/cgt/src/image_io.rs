//! 8-bit PNG images to and from `[0, 1]` tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use cgt_core::{Shape, Tensor};

use crate::error::{create_parent, Error, IoContext, Result};

/// Reads an 8-bit PNG as RGB. Grayscale is replicated, alpha dropped.
pub fn read_png(path: &Path) -> Result<Tensor> {
    let file = File::open(path).at(path)?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::data(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::data(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::data(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::data(path, format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let src_c = info.color_type.samples();
    let bytes = &buf[..info.buffer_size()];
    let mut rgb = Vec::with_capacity(w * h * 3);
    for px in bytes.chunks_exact(src_c) {
        match src_c {
            1 | 2 => rgb.extend([px[0]; 3]),
            _ => rgb.extend(&px[..3]),
        }
    }
    Ok(Tensor::from_u8(Shape::new(h, w, 3), &rgb)?)
}

/// Writes a 3-channel tensor as an 8-bit RGB PNG.
pub fn write_png(path: &Path, img: &Tensor) -> Result<()> {
    let s = img.shape();
    if s.c != 3 {
        return Err(Error::Usage(format!("can only write RGB images, got {} channels", s.c)));
    }
    create_parent(path)?;
    let file = File::create(path).at(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), s.w as u32, s.h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::data(path, e))?;
    writer
        .write_image_data(&img.to_u8())
        .map_err(|e| Error::data(path, e))?;
    writer.finish().map_err(|e| Error::data(path, e))?;
    Ok(())
}
