//! 8-bit windowing and PNG encoding of volume slices.

use flim_core::volcore::Slice2D;

/// Maps `[lo, hi]` linearly onto `[0, 255]`, rounding half up and
/// clamping. An empty window (`hi <= lo`) renders everything black.
pub fn window_pixel(x: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return 0;
    }
    let t = (x - lo) / (hi - lo) * 255.0;
    (t + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn window_slice(slice: &Slice2D, lo: f64, hi: f64) -> Vec<u8> {
    slice.data.iter().map(|&x| window_pixel(x, lo, hi)).collect()
}

/// Encodes row-major 8-bit grayscale pixels.
pub fn encode_png(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(pixels)?;
    }
    Ok(out)
}

/// Decodes an 8-bit grayscale PNG into `(width, height, pixels)`.
pub fn decode_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), png::DecodingError> {
    let mut reader = png::Decoder::new(std::io::Cursor::new(bytes)).read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}
