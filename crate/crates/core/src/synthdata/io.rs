//! Corpus directories: one subdirectory per sample holding binary PGM
//! images (P6 PPM for 3-channel images) and a `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{FocalStackSample, Image, Mask, Result, SampleMeta, SynthError};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn image_name(stem: &str, channels: usize) -> String {
    if channels == 3 {
        format!("{stem}.ppm")
    } else {
        format!("{stem}.pgm")
    }
}

pub fn slice_name(j: usize, channels: usize) -> String {
    image_name(&format!("slice_{j:02}"), channels)
}

/// Encode planar data as P5 (1 channel) or interleaved P6 (3 channels).
pub fn encode_pnm(channels: usize, height: usize, width: usize, planar: &[u8]) -> Vec<u8> {
    let magic = if channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    let hw = height * width;
    if channels == 3 {
        for i in 0..hw {
            for c in 0..3 {
                out.push(planar[c * hw + i]);
            }
        }
    } else {
        out.extend_from_slice(&planar[..hw]);
    }
    out
}

/// Decode P5/P6 into `(channels, height, width, planar)`.
pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<(usize, usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(format!("unsupported magic `{m}`")),
    };
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        token()?.parse::<usize>().map_err(|_| format!("bad {what}"))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} is not 255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let hw = height * width;
    let need = hw * channels;
    if bytes.len() < start + need {
        return Err(format!("raster truncated: need {need} bytes, found {}", bytes.len().saturating_sub(start)));
    }
    let raster = &bytes[start..start + need];
    let mut planar = vec![0u8; need];
    for i in 0..hw {
        for c in 0..channels {
            planar[c * hw + i] = raster[i * channels + c];
        }
    }
    Ok((channels, height, width, planar))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(SynthError::Missing {
            path: path.display().to_string(),
        });
    }
    fs::read(path).map_err(io_err(path))
}

fn read_image(path: &Path) -> Result<Image> {
    let bytes = read_file(path)?;
    let (channels, height, width, data) = decode_pnm(&bytes).map_err(|reason| SynthError::Image {
        path: path.display().to_string(),
        reason,
    })?;
    Ok(Image {
        channels,
        height,
        width,
        data,
    })
}

fn read_mask(path: &Path) -> Result<Mask> {
    let img = read_image(path)?;
    if img.channels != 1 || img.data.iter().any(|&v| v != 0 && v != 255) {
        return Err(SynthError::Image {
            path: path.display().to_string(),
            reason: "mask must be single-channel with values 0 or 255".into(),
        });
    }
    Ok(Mask {
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&v| (v == 255) as u8).collect(),
    })
}

fn mask_bytes(m: &Mask) -> Vec<u8> {
    let px: Vec<u8> = m.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    encode_pnm(1, m.height, m.width, &px)
}

pub fn write_sample(dir: &Path, s: &FocalStackSample) -> Result<()> {
    let d = dir.join(&s.id);
    fs::create_dir_all(&d).map_err(io_err(&d))?;
    let ch = s.all_focus.channels;
    let a = &s.all_focus;
    write_file(&d.join(image_name("allfocus", ch)), &encode_pnm(ch, a.height, a.width, &a.data))?;
    for (j, sl) in s.slices.iter().enumerate() {
        write_file(&d.join(slice_name(j, ch)), &encode_pnm(ch, sl.height, sl.width, &sl.data))?;
    }
    write_file(&d.join("noisy.pgm"), &mask_bytes(&s.noisy))?;
    write_file(&d.join("clean.pgm"), &mask_bytes(s.clean_mask()))?;
    let meta = serde_json::to_string_pretty(&s.meta).expect("metadata serializes");
    write_file(&d.join("meta.json"), format!("{meta}\n").as_bytes())
}

pub fn write_corpus(dir: &Path, samples: &[FocalStackSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for s in samples {
        write_sample(dir, s)?;
    }
    Ok(())
}

pub fn read_sample(dir: &Path) -> Result<FocalStackSample> {
    let meta_path = dir.join("meta.json");
    let raw = read_file(&meta_path)?;
    let meta: SampleMeta = serde_json::from_slice(&raw).map_err(|e| SynthError::Meta {
        path: meta_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let ch = meta.spec.channels;
    let all_focus = read_image(&dir.join(image_name("allfocus", ch)))?;
    let slices = (0..meta.focal.k)
        .map(|j| {
            let p = dir.join(slice_name(j, ch));
            let img = read_image(&p)?;
            if (img.channels, img.height, img.width) != (all_focus.channels, all_focus.height, all_focus.width) {
                return Err(SynthError::Image {
                    path: p.display().to_string(),
                    reason: "slice shape differs from the all-focus image".into(),
                });
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    let noisy = read_mask(&dir.join("noisy.pgm"))?;
    let clean = read_mask(&dir.join("clean.pgm"))?;
    Ok(FocalStackSample::new(meta.id.clone(), all_focus, slices, noisy, clean, meta))
}

/// Sample directories under `dir`, sorted by name.
pub fn list_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let p: PathBuf = entry.path();
        if p.is_dir() && p.join("meta.json").exists() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn read_corpus(dir: &Path) -> Result<Vec<FocalStackSample>> {
    list_ids(dir)?.iter().map(|id| read_sample(&dir.join(id))).collect()
}
