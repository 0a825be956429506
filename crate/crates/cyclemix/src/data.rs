//! Folder-tree datasets: `root/<domain>/<class>/<image>.{jpg,png}`.

use std::fs;
use std::path::{Path, PathBuf};

use cyclemix_core::{DomainDataset, DomainSample, Raster};

use crate::error::{Error, IoContext, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(path).at(path)? {
        let p = entry.at(path)?.path();
        if p.is_dir() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn is_image(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_string_lossy().to_ascii_lowercase().as_str()))
            .unwrap_or(false)
}

/// Decodes an image file into a `size × size` raster in `[0, 1]`.
pub fn read_image(path: &Path, size: usize) -> Result<Raster> {
    let decoded = image::open(path).map_err(|e| Error::Item { path: path.to_path_buf(), message: e.to_string() })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raster = Raster::from_u8(h, w, rgb.as_raw())?;
    Ok(if (h, w) == (size, size) { raster } else { raster.resize(size, size).quantize_u8() })
}

/// Lossless 8-bit RGB encoding.
pub fn write_png(path: &Path, image: &Raster) -> Result<()> {
    let (h, w) = image.shape();
    image::save_buffer_with_format(path, &image.to_u8(), w as u32, h as u32, image::ExtendedColorType::Rgb8, image::ImageFormat::Png)
        .map_err(|e| Error::Item { path: path.to_path_buf(), message: e.to_string() })
}

/// Reads a PNG at its stored size.
pub fn read_png(path: &Path) -> Result<Raster> {
    let decoded = image::open(path).map_err(|e| Error::Item { path: path.to_path_buf(), message: e.to_string() })?;
    let rgb = decoded.to_rgb8();
    Ok(Raster::from_u8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())?)
}

/// Loads every domain under `root`, resizing images to `size × size`.
///
/// Domains, classes and files are visited in lexicographic path order, so two
/// loads of the same tree give identical sample order. All domains must share
/// the same class folders.
pub fn load_image_tree(root: &Path, size: usize) -> Result<Vec<DomainDataset>> {
    if !root.is_dir() {
        return Err(Error::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found")));
    }
    let domains = sorted_dirs(root)?;
    if domains.len() < 2 {
        return Err(Error::Schema(format!("{}: at least 2 domains required, found {}", root.display(), domains.len())));
    }
    let mut class_names: Option<Vec<String>> = None;
    let mut out = Vec::with_capacity(domains.len());
    for dom in &domains {
        let classes = sorted_dirs(dom)?;
        let names: Vec<String> = classes.iter().map(|c| file_name(c)).collect();
        match &class_names {
            None => class_names = Some(names.clone()),
            Some(expected) if expected != &names => {
                return Err(Error::Schema(format!(
                    "domain {} has classes {:?}, expected {:?}",
                    file_name(dom),
                    names,
                    expected
                )))
            }
            Some(_) => {}
        }
        let domain = file_name(dom);
        let mut samples = Vec::new();
        for (label, class_dir) in classes.iter().enumerate() {
            let mut files: Vec<PathBuf> = Vec::new();
            for entry in fs::read_dir(class_dir).at(class_dir)? {
                let p = entry.at(class_dir)?.path();
                if is_image(&p) {
                    files.push(p);
                }
            }
            files.sort();
            for f in files {
                samples.push(DomainSample { image: read_image(&f, size)?, label, domain: domain.clone() });
            }
        }
        out.push(DomainDataset::new(domain, samples, names)?);
    }
    Ok(out)
}

/// Writes datasets in the folder-tree layout as `<index>.png` files.
pub fn write_image_tree(root: &Path, datasets: &[DomainDataset]) -> Result<()> {
    for ds in datasets {
        let mut counters = vec![0usize; ds.num_classes()];
        for class in ds.class_names() {
            let dir = root.join(ds.domain()).join(class);
            fs::create_dir_all(&dir).at(&dir)?;
        }
        for s in ds.samples() {
            let dir = root.join(ds.domain()).join(&ds.class_names()[s.label]);
            write_png(&dir.join(format!("{:05}.png", counters[s.label])), &s.image)?;
            counters[s.label] += 1;
        }
    }
    Ok(())
}
