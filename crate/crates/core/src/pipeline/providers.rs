//! Clients for the neural stages: instance segmentation, mask refinement
//! and inpainting. Each is either a directory of pre-computed outputs, an
//! external command, or a deterministic built-in mock.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use image::RgbImage;

use crate::error::{ForgeError, Result};
use crate::mask_ops::{dilate, BinaryMask, CandidateEntry, CandidateManifest, MaskCandidate, RejectedCandidate};
use crate::scene_graph::{ImageId, ObjectId, SceneGraph};

use super::config::{BuildConfig, CommandSpec, InpainterSpec, MaskProviderSpec, RefinerSpec};

pub const MOCK_PROVIDER: &str = "mock";

/// Width of the unmasked ring the mock inpainter averages over.
pub const MOCK_RING_WIDTH: usize = 4;

#[derive(Debug, Default)]
pub struct CandidateBatch {
    pub candidates: Vec<MaskCandidate>,
    pub rejected: Vec<RejectedCandidate>,
}

pub trait MaskProvider: Send + Sync {
    fn candidates(&self, graph: &SceneGraph) -> Result<CandidateBatch>;
}

pub struct RefineRequest<'a> {
    pub image_id: &'a ImageId,
    pub object_id: &'a ObjectId,
    pub mask: &'a BinaryMask,
    /// Scratch location for command-based refiners.
    pub work_dir: &'a Path,
}

pub trait MaskRefiner: Send + Sync {
    fn refine(&self, request: &RefineRequest<'_>) -> Result<BinaryMask>;
}

pub struct InpaintRequest<'a> {
    pub image_id: &'a ImageId,
    pub object_id: &'a ObjectId,
    pub source_path: &'a Path,
    pub source: &'a RgbImage,
    pub mask_path: &'a Path,
    pub mask: &'a BinaryMask,
}

pub trait Inpainter: Send + Sync {
    /// Write the inpainted image to `output`.
    fn inpaint(&self, request: &InpaintRequest<'_>, output: &Path) -> Result<()>;
}

/// Rasterizes every scene-graph box as a candidate with score 1.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockMaskProvider;

impl MaskProvider for MockMaskProvider {
    fn candidates(&self, graph: &SceneGraph) -> Result<CandidateBatch> {
        let (w, h) = (graph.width as usize, graph.height as usize);
        let candidates = graph
            .objects
            .values()
            .map(|node| MaskCandidate {
                provider: MOCK_PROVIDER.into(),
                predicted_bbox: node.bbox,
                mask: BinaryMask::from_bbox(w, h, &node.bbox),
                predicted_label: node.name.clone(),
                score: 1.0,
            })
            .collect();
        Ok(CandidateBatch {
            candidates,
            rejected: Vec::new(),
        })
    }
}

/// Reads `<dir>/<image_id>.json` candidate manifests.
#[derive(Debug, Clone)]
pub struct DirectoryMaskProvider {
    pub dir: PathBuf,
}

impl MaskProvider for DirectoryMaskProvider {
    fn candidates(&self, graph: &SceneGraph) -> Result<CandidateBatch> {
        let path = self.dir.join(format!("{}.json", graph.image_id));
        let manifest = CandidateManifest::load(&path)?;
        let (candidates, rejected) = manifest.resolve(&self.dir, graph.width as usize, graph.height as usize);
        Ok(CandidateBatch { candidates, rejected })
    }
}

/// Write `batch` in the layout [`DirectoryMaskProvider`] reads:
/// `<dir>/<image_id>.json` plus one PNG per candidate under `<dir>/<image_id>/`.
pub fn export_candidates(image_id: &ImageId, candidates: &[MaskCandidate], dir: &Path) -> Result<PathBuf> {
    let mask_dir = dir.join(image_id.as_str());
    fs::create_dir_all(&mask_dir).map_err(|e| ForgeError::io(&mask_dir, e))?;
    let mut entries = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let rel = PathBuf::from(image_id.as_str()).join(format!("{i}.png"));
        c.mask.save_png(&dir.join(&rel))?;
        entries.push(CandidateEntry {
            provider: c.provider.clone(),
            predicted_label: c.predicted_label.clone(),
            score: c.score,
            bbox: c.predicted_bbox,
            mask_path: rel,
        });
    }
    let listing = CandidateManifest {
        image_id: Some(image_id.to_string()),
        candidates: entries,
    };
    let path = dir.join(format!("{image_id}.json"));
    let text = serde_json::to_string_pretty(&listing).map_err(|e| ForgeError::parse(&path, e))?;
    fs::write(&path, text).map_err(|e| ForgeError::io(&path, e))?;
    Ok(path)
}

fn per_object_path(dir: &Path, image_id: &ImageId, object_id: &ObjectId) -> PathBuf {
    dir.join(image_id.as_str()).join(format!("{object_id}.png"))
}

#[derive(Debug, Clone)]
pub struct DirectoryRefiner {
    pub dir: PathBuf,
}

impl MaskRefiner for DirectoryRefiner {
    fn refine(&self, request: &RefineRequest<'_>) -> Result<BinaryMask> {
        let path = per_object_path(&self.dir, request.image_id, request.object_id);
        BinaryMask::load_png(&path)
    }
}

fn run_command(spec: &CommandSpec, substitutions: &[(&str, &Path)], ids: (&ImageId, &ObjectId)) -> Result<()> {
    let args: Vec<String> = spec
        .args
        .iter()
        .map(|arg| {
            let mut arg = arg.replace("{image_id}", ids.0.as_str());
            arg = arg.replace("{object_id}", ids.1.as_str());
            for (key, path) in substitutions {
                arg = arg.replace(key, &path.to_string_lossy());
            }
            arg
        })
        .collect();
    let output = Command::new(&spec.program)
        .args(&args)
        .output()
        .map_err(|e| ForgeError::Provider {
            provider: spec.program.clone(),
            message: e.to_string(),
        })?;
    if !output.status.success() {
        return Err(ForgeError::Provider {
            provider: spec.program.clone(),
            message: format!(
                "exit status {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            ),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CommandRefiner {
    pub command: CommandSpec,
}

impl MaskRefiner for CommandRefiner {
    fn refine(&self, request: &RefineRequest<'_>) -> Result<BinaryMask> {
        let dir = request.work_dir.join(request.image_id.as_str());
        fs::create_dir_all(&dir).map_err(|e| ForgeError::io(&dir, e))?;
        let input = dir.join(format!("{}.in.png", request.object_id));
        let output = dir.join(format!("{}.refined.png", request.object_id));
        request.mask.save_png(&input)?;
        run_command(
            &self.command,
            &[("{mask}", &input), ("{output}", &output)],
            (request.image_id, request.object_id),
        )?;
        let refined = BinaryMask::load_png(&output);
        let _ = fs::remove_file(&input);
        let _ = fs::remove_file(&output);
        refined
    }
}

/// Fills the mask with the per-channel mean of the unmasked ring of width
/// [`MOCK_RING_WIDTH`] around it (rounded half up). An empty ring fills with
/// black.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockInpainter;

pub fn mock_inpaint(source: &RgbImage, mask: &BinaryMask) -> Result<RgbImage> {
    let (w, h) = (source.width() as usize, source.height() as usize);
    if (mask.width(), mask.height()) != (w, h) {
        return Err(ForgeError::DimensionMismatch(format!(
            "mask {}x{} for image {w}x{h}",
            mask.width(),
            mask.height()
        )));
    }
    let grown = dilate(mask, 2 * MOCK_RING_WIDTH + 1)?;
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for y in 0..h {
        for x in 0..w {
            if grown.get(x, y) && !mask.get(x, y) {
                let p = source.get_pixel(x as u32, y as u32).0;
                for c in 0..3 {
                    sum[c] += p[c] as u64;
                }
                n += 1;
            }
        }
    }
    let fill = if n == 0 {
        [0u8; 3]
    } else {
        [0, 1, 2].map(|c| ((sum[c] + n / 2) / n) as u8)
    };
    let mut out = source.clone();
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                out.put_pixel(x as u32, y as u32, image::Rgb(fill));
            }
        }
    }
    Ok(out)
}

impl Inpainter for MockInpainter {
    fn inpaint(&self, request: &InpaintRequest<'_>, output: &Path) -> Result<()> {
        mock_inpaint(request.source, request.mask)?
            .save_with_format(output, image::ImageFormat::Png)
            .map_err(|e| ForgeError::image(output, e))
    }
}

/// Copies `<dir>/<image_id>/<object_id>.png` produced by an offline run.
#[derive(Debug, Clone)]
pub struct DirectoryInpainter {
    pub dir: PathBuf,
}

impl Inpainter for DirectoryInpainter {
    fn inpaint(&self, request: &InpaintRequest<'_>, output: &Path) -> Result<()> {
        let path = per_object_path(&self.dir, request.image_id, request.object_id);
        let img = image::open(&path).map_err(|e| ForgeError::image(&path, e))?;
        if (img.width(), img.height()) != request.source.dimensions() {
            return Err(ForgeError::DimensionMismatch(format!(
                "inpainted image '{}' does not match the source size",
                path.display()
            )));
        }
        img.to_rgb8()
            .save_with_format(output, image::ImageFormat::Png)
            .map_err(|e| ForgeError::image(output, e))
    }
}

#[derive(Debug, Clone)]
pub struct CommandInpainter {
    pub command: CommandSpec,
}

impl Inpainter for CommandInpainter {
    fn inpaint(&self, request: &InpaintRequest<'_>, output: &Path) -> Result<()> {
        run_command(
            &self.command,
            &[
                ("{source}", request.source_path),
                ("{mask}", request.mask_path),
                ("{output}", output),
            ],
            (request.image_id, request.object_id),
        )?;
        if !output.exists() {
            return Err(ForgeError::Provider {
                provider: self.command.program.clone(),
                message: format!("did not write '{}'", output.display()),
            });
        }
        Ok(())
    }
}

/// Runs one call at a time for clients that are not safe to call
/// concurrently.
pub struct Serialized<T> {
    inner: T,
    lock: Mutex<()>,
}

impl<T> Serialized<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            lock: Mutex::new(()),
        }
    }
}

impl<T: MaskRefiner> MaskRefiner for Serialized<T> {
    fn refine(&self, request: &RefineRequest<'_>) -> Result<BinaryMask> {
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        self.inner.refine(request)
    }
}

impl<T: Inpainter> Inpainter for Serialized<T> {
    fn inpaint(&self, request: &InpaintRequest<'_>, output: &Path) -> Result<()> {
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        self.inner.inpaint(request, output)
    }
}

pub struct ProviderClients {
    pub masks: Box<dyn MaskProvider>,
    /// `None` leaves selected masks unrefined.
    pub refiner: Option<Box<dyn MaskRefiner>>,
    pub inpainter: Box<dyn Inpainter>,
}

impl ProviderClients {
    pub fn mock() -> Self {
        Self {
            masks: Box::new(MockMaskProvider),
            refiner: None,
            inpainter: Box::new(MockInpainter),
        }
    }

    pub fn from_config(config: &BuildConfig) -> Self {
        let masks: Box<dyn MaskProvider> = match &config.providers.masks {
            MaskProviderSpec::Mock => Box::new(MockMaskProvider),
            MaskProviderSpec::Directory { path } => Box::new(DirectoryMaskProvider {
                dir: config.resolve(path),
            }),
        };
        let refiner: Option<Box<dyn MaskRefiner>> = match &config.providers.refiner {
            RefinerSpec::None => None,
            RefinerSpec::Directory { path } => Some(Box::new(DirectoryRefiner {
                dir: config.resolve(path),
            })),
            RefinerSpec::Command { command, serialize } => {
                let client = CommandRefiner {
                    command: command.clone(),
                };
                if *serialize {
                    Some(Box::new(Serialized::new(client)))
                } else {
                    Some(Box::new(client))
                }
            }
        };
        let inpainter: Box<dyn Inpainter> = match &config.providers.inpainter {
            InpainterSpec::Mock => Box::new(MockInpainter),
            InpainterSpec::Directory { path } => Box::new(DirectoryInpainter {
                dir: config.resolve(path),
            }),
            InpainterSpec::Command { command, serialize } => {
                let client = CommandInpainter {
                    command: command.clone(),
                };
                if *serialize {
                    Box::new(Serialized::new(client))
                } else {
                    Box::new(client)
                }
            }
        };
        Self {
            masks,
            refiner,
            inpainter,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::{BBox, ObjectNode};

    #[test]
    fn mock_inpaint_fills_with_ring_mean() {
        // Left half value 10, right half value 30, red channel only.
        let source = RgbImage::from_fn(20, 20, |x, _| image::Rgb([if x < 10 { 10 } else { 30 }, 7, 0]));
        let mask = BinaryMask::from_bbox(20, 20, &BBox::new(8, 8, 4, 4));
        let out = mock_inpaint(&source, &mask).unwrap();

        // Ring: 12x12 square at (4,4) minus the 4x4 mask; symmetric across
        // x = 10, so the red mean is 20.
        let mut sum = 0u64;
        let mut n = 0u64;
        for y in 4..16u32 {
            for x in 4..16u32 {
                if !(8..12).contains(&x) || !(8..12).contains(&y) {
                    sum += source.get_pixel(x, y).0[0] as u64;
                    n += 1;
                }
            }
        }
        assert_eq!(n, 128);
        assert_eq!(sum / n, 20);
        assert_eq!(out.get_pixel(9, 9).0, [20, 7, 0]);
        assert_eq!(out.get_pixel(0, 0), source.get_pixel(0, 0));
        assert_eq!(out.get_pixel(12, 12), source.get_pixel(12, 12));
    }

    #[test]
    fn mock_inpaint_full_mask_is_black() {
        let source = RgbImage::from_pixel(4, 4, image::Rgb([9, 9, 9]));
        let mask = BinaryMask::from_bbox(4, 4, &BBox::new(0, 0, 4, 4));
        assert!(mock_inpaint(&source, &mask).unwrap().pixels().all(|p| p.0 == [0, 0, 0]));
        assert!(mock_inpaint(&source, &BinaryMask::new(3, 4)).is_err());
    }

    #[test]
    fn mock_provider_rasterizes_boxes() {
        let graph = SceneGraph {
            image_id: ImageId::new("1"),
            width: 10,
            height: 10,
            objects: [(
                ObjectId::from("5"),
                ObjectNode {
                    id: "5".into(),
                    name: "kite".into(),
                    attributes: vec![],
                    relations: vec![],
                    bbox: BBox::new(2, 3, 4, 5),
                },
            )]
            .into(),
        };
        let batch = MockMaskProvider.candidates(&graph).unwrap();
        assert_eq!(batch.candidates.len(), 1);
        let c = &batch.candidates[0];
        assert_eq!(c.score, 1.0);
        assert_eq!(c.mask.tight_bbox(), Some(BBox::new(2, 3, 4, 5)));
        assert_eq!(c.predicted_label, "kite");
    }

    #[cfg(unix)]
    #[test]
    fn command_inpainter_reports_failures() {
        let dir = tempfile::tempdir().unwrap();
        let source = RgbImage::new(2, 2);
        let mask = BinaryMask::new(2, 2);
        let (img, obj) = (ImageId::new("1"), ObjectId::new("2"));
        let request = InpaintRequest {
            image_id: &img,
            object_id: &obj,
            source_path: Path::new("/nonexistent.png"),
            source: &source,
            mask_path: Path::new("/nonexistent-mask.png"),
            mask: &mask,
        };
        let out = dir.path().join("out.png");
        let failing = CommandInpainter {
            command: CommandSpec {
                program: "false".into(),
                args: vec![],
            },
        };
        assert!(matches!(
            failing.inpaint(&request, &out),
            Err(ForgeError::Provider { .. })
        ));
        let silent = CommandInpainter {
            command: CommandSpec {
                program: "true".into(),
                args: vec![],
            },
        };
        assert!(silent.inpaint(&request, &out).is_err());
        let copying = Serialized::new(CommandInpainter {
            command: CommandSpec {
                program: "sh".into(),
                args: vec!["-c".into(), "printf x > '{output}'".into()],
            },
        });
        copying.inpaint(&request, &out).unwrap();
        assert_eq!(fs::read(&out).unwrap(), b"x");
    }
}
