//! PGM/PPM reading and writing for the toy detection path.
//!
//! Pixel values map to `[0, 1]` as `byte / 255`; writing rounds `v * 255`
//! after clamping to `[0, 1]`.

use std::path::Path;

use std::fs::File;
use std::io::BufWriter;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use thiserror::Error;

use crate::model::FeatureMap;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("expected a single-channel map, got {0} channels")]
    Channels(usize),
}

/// Reads a PGM as one channel or a PPM as three.
pub fn read_pnm(path: &Path) -> Result<FeatureMap, RasterError> {
    let img = ImageReader::open(path)?.with_guessed_format()?.decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        other => (3, other.to_rgb8().into_raw()),
    };
    // interleaved -> channel-major
    let mut data = vec![0.0; channels * w * h];
    for (i, b) in bytes.iter().enumerate() {
        let (pix, c) = (i / channels, i % channels);
        data[c * w * h + pix] = *b as f64 / 255.0;
    }
    Ok(FeatureMap::from_vec(channels, h, w, data).expect("sizes match"))
}

pub fn to_gray_bytes(map: &FeatureMap) -> Result<Vec<u8>, RasterError> {
    if map.channels() != 1 {
        return Err(RasterError::Channels(map.channels()));
    }
    Ok(map
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect())
}

/// Writes a single-channel map as binary PGM.
pub fn write_pgm(path: &Path, map: &FeatureMap) -> Result<(), RasterError> {
    let bytes = to_gray_bytes(map)?;
    let out = BufWriter::new(File::create(path)?);
    PnmEncoder::new(out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            &bytes,
            map.width() as u32,
            map.height() as u32,
            ExtendedColorType::L8,
        )?;
    Ok(())
}
