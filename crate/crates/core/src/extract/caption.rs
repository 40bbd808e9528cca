//! Image captioning clients.

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CaptionError {
    #[error("image is empty")]
    EmptyImage,
    #[error("no caption available for {0}")]
    NoCaptionAvailable(String),
    #[error("caption client failed: {0}")]
    ClientFailure(String),
}

pub struct ImageInput<'a> {
    pub bytes: &'a [u8],
    /// Where the image lives on disk, when it does.
    pub path: Option<&'a Path>,
}

pub trait CaptionClient: Send + Sync {
    fn caption(&self, image: &ImageInput<'_>) -> Result<String, CaptionError>;
}

/// Captions an image, rejecting empty input and empty output.
pub fn caption_image(image: &ImageInput<'_>, client: &dyn CaptionClient) -> Result<String, CaptionError> {
    if image.bytes.is_empty() {
        return Err(CaptionError::EmptyImage);
    }
    let caption = client.caption(image)?;
    if caption.trim().is_empty() {
        return Err(CaptionError::ClientFailure("client returned an empty caption".into()));
    }
    Ok(caption)
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut name = image.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".caption.txt");
    image.with_file_name(name)
}

/// Offline client: reads `<image filename>.caption.txt` next to the image.
#[derive(Debug, Default, Clone, Copy)]
pub struct SidecarCaptioner;

impl CaptionClient for SidecarCaptioner {
    fn caption(&self, image: &ImageInput<'_>) -> Result<String, CaptionError> {
        let path = image
            .path
            .ok_or_else(|| CaptionError::NoCaptionAvailable("<in-memory image>".into()))?;
        let sidecar = sidecar_path(path);
        match std::fs::read_to_string(&sidecar) {
            Ok(text) => Ok(text.trim().to_string()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(CaptionError::NoCaptionAvailable(path.display().to_string()))
            }
            Err(e) => Err(CaptionError::ClientFailure(e.to_string())),
        }
    }
}

/// Returns a fixed caption; handy for wiring tests.
#[derive(Debug, Clone)]
pub struct FixedCaptioner(pub String);

impl CaptionClient for FixedCaptioner {
    fn caption(&self, _image: &ImageInput<'_>) -> Result<String, CaptionError> {
        Ok(self.0.clone())
    }
}
