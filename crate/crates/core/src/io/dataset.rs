//! Dataset directory index.
//!
//! Expected layout under the root:
//!
//! ```text
//! images/<stem>.ppm   (or .pgm)
//! masks/<stem>.pgm
//! splits/{train,val,test}.txt   one stem per line
//! ```

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn file_name(&self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Val => "val.txt",
            Split::Test => "test.txt",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub split: Split,
    pub pairs: Vec<(PathBuf, PathBuf)>,
}

impl DatasetIndex {
    /// Index one split. Every listed stem must have an image and a mask.
    pub fn load(root: &Path, split: Split) -> Result<Self> {
        let list = root.join("splits").join(split.file_name());
        let text = std::fs::read_to_string(&list)
            .map_err(|e| Error::Parse(format!("cannot read {}: {e}", list.display())))?;
        let mut pairs = Vec::new();
        for stem in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let image = ["ppm", "pgm"]
                .iter()
                .map(|ext| root.join("images").join(format!("{stem}.{ext}")))
                .find(|p| p.exists())
                .ok_or_else(|| Error::Parse(format!("no image found for stem '{stem}'")))?;
            let mask = root.join("masks").join(format!("{stem}.pgm"));
            if !mask.exists() {
                return Err(Error::Parse(format!("no mask found for stem '{stem}'")));
            }
            pairs.push((image, mask));
        }
        if pairs.is_empty() {
            return Err(Error::Parse(format!("split {} lists no items", list.display())));
        }
        Ok(Self { root: root.to_path_buf(), split, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Load every pair once and check the pairing contract: masks are
    /// single-channel {0,255} files and each mask matches its image's
    /// spatial size.
    pub fn validate(&self) -> Result<()> {
        for (image_path, mask_path) in &self.pairs {
            let image = crate::io::pnm::load_image(image_path)?;
            let mask = crate::io::pnm::load_mask(mask_path)?;
            if (image.shape.h, image.shape.w) != (mask.h, mask.w) {
                return Err(Error::Shape(format!(
                    "{}: image {}x{} vs mask {}x{}",
                    image_path.display(),
                    image.shape.h,
                    image.shape.w,
                    mask.h,
                    mask.w
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::pnm::{write_mask, write_ppm, Mask};
    use crate::tensor::{Tensor, TensorShape};

    #[test]
    fn indexes_a_toy_layout() {
        let root = std::env::temp_dir().join("crackseg_dataset_test");
        for sub in ["images", "masks", "splits"] {
            std::fs::create_dir_all(root.join(sub)).unwrap();
        }
        for stem in ["a", "b"] {
            let img = Tensor::zeros_f32(TensorShape::new(1, 3, 2, 2));
            write_ppm(&root.join("images").join(format!("{stem}.ppm")), &img).unwrap();
            let mask = Mask { h: 2, w: 2, data: vec![0, 1, 1, 0] };
            write_mask(&root.join("masks").join(format!("{stem}.pgm")), &mask).unwrap();
        }
        std::fs::write(root.join("splits/train.txt"), "a\nb\n").unwrap();
        std::fs::write(root.join("splits/val.txt"), "a\nmissing\n").unwrap();

        let idx = DatasetIndex::load(&root, Split::Train).unwrap();
        assert_eq!(idx.len(), 2);
        idx.validate().unwrap();
        assert!(DatasetIndex::load(&root, Split::Val).is_err());
        assert!(DatasetIndex::load(&root, Split::Test).is_err());
    }

    #[test]
    fn validate_rejects_size_mismatch() {
        let root = std::env::temp_dir().join("crackseg_dataset_badsize");
        for sub in ["images", "masks", "splits"] {
            std::fs::create_dir_all(root.join(sub)).unwrap();
        }
        let img = Tensor::zeros_f32(TensorShape::new(1, 3, 4, 4));
        write_ppm(&root.join("images/a.ppm"), &img).unwrap();
        let mask = Mask { h: 2, w: 2, data: vec![0, 1, 1, 0] };
        write_mask(&root.join("masks/a.pgm"), &mask).unwrap();
        std::fs::write(root.join("splits/train.txt"), "a\n").unwrap();
        let idx = DatasetIndex::load(&root, Split::Train).unwrap();
        assert!(idx.validate().is_err());
    }
}
