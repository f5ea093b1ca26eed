//! PNG / raw RGB8 files and the `frame_%04d.png` directory convention.

use std::path::{Path, PathBuf};

use super::{ImageBuffer, VideoClip};

#[derive(Debug, thiserror::Error)]
pub enum MediaError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Decode { path: PathBuf, source: image::ImageError },
    #[error("{path}: expected {expected} bytes of RGB8 data, found {found}")]
    RawSize { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

pub fn load_png(path: &Path) -> Result<ImageBuffer, MediaError> {
    let img = image::open(path)
        .map_err(|source| MediaError::Decode { path: path.to_path_buf(), source })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    ImageBuffer::new(w, h, img.into_raw()).ok_or_else(|| MediaError::Invalid {
        path: path.to_path_buf(),
        reason: "image has a zero-length side".into(),
    })
}

pub fn save_png(image: &ImageBuffer, path: &Path) -> Result<(), MediaError> {
    image::save_buffer(path, image.pixels(), image.width(), image.height(), image::ColorType::Rgb8)
        .map_err(|source| MediaError::Decode { path: path.to_path_buf(), source })
}

/// PNG bytes for `image`, e.g. for a data URL.
pub fn encode_png(image: &ImageBuffer) -> Vec<u8> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(image.pixels(), image.width(), image.height(), image::ExtendedColorType::Rgb8)
        .expect("encoding a valid RGB8 buffer into memory cannot fail");
    out
}

/// Headerless row-major RGB8 file of known dimensions.
pub fn load_raw_rgb(path: &Path, width: u32, height: u32) -> Result<ImageBuffer, MediaError> {
    let bytes = std::fs::read(path).map_err(|source| MediaError::Io { path: path.to_path_buf(), source })?;
    let expected = width as usize * height as usize * 3;
    if bytes.len() != expected || expected == 0 {
        return Err(MediaError::RawSize { path: path.to_path_buf(), expected, found: bytes.len() });
    }
    Ok(ImageBuffer::new(width, height, bytes).expect("length checked above"))
}

/// Loads `frame_NNNN.png` files from `dir` in numeric order.
pub fn load_frames_dir(dir: &Path) -> Result<VideoClip, MediaError> {
    let io = |source| MediaError::Io { path: dir.to_path_buf(), source };
    let mut numbered = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let index = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("frame_"))
            .and_then(|n| n.strip_suffix(".png"))
            .and_then(|n| n.parse::<u32>().ok());
        if let Some(index) = index {
            numbered.push((index, path));
        }
    }
    numbered.sort();
    let frames = numbered.iter().map(|(_, p)| load_png(p)).collect::<Result<Vec<_>, _>>()?;
    VideoClip::new(frames).ok_or_else(|| MediaError::Invalid {
        path: dir.to_path_buf(),
        reason: "no frame_NNNN.png files, or frames differ in size".into(),
    })
}

/// Writes frames as `frame_0000.png`, `frame_0001.png`, ...
pub fn save_frames_dir(frames: &[ImageBuffer], dir: &Path) -> Result<(), MediaError> {
    std::fs::create_dir_all(dir).map_err(|source| MediaError::Io { path: dir.to_path_buf(), source })?;
    for (i, frame) in frames.iter().enumerate() {
        save_png(frame, &dir.join(format!("frame_{i:04}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_frames_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::new(3, 2, (0..18).collect()).unwrap();
        let path = dir.path().join("a.png");
        save_png(&img, &path).unwrap();
        assert_eq!(load_png(&path).unwrap(), img);
        assert_eq!(std::fs::read(&path).unwrap()[..8], encode_png(&img)[..8]);

        let frames: Vec<_> = (0..12).map(|i| ImageBuffer::filled(2, 2, [i, i, i])).collect();
        let clip_dir = dir.path().join("clip");
        save_frames_dir(&frames, &clip_dir).unwrap();
        assert_eq!(load_frames_dir(&clip_dir).unwrap().frames(), &frames[..]);
    }

    #[test]
    fn raw_size_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.rgb");
        std::fs::write(&path, [0u8; 12]).unwrap();
        assert_eq!(load_raw_rgb(&path, 2, 2).unwrap().width(), 2);
        assert!(matches!(load_raw_rgb(&path, 3, 2), Err(MediaError::RawSize { .. })));
    }
}
