//! Augmentation galleries: one PNG per stage, one row per source image, the
//! first column untouched and the rest independent draws.

use std::path::{Path, PathBuf};

use dermaug::augment::{apply_pipeline, bc_mix, geometric_augment, hair_overlay, random_erase, AugConfig};
use dermaug::config::RunConfig;
use dermaug::imagedata::{write_image, Dataset, Image, Sample};
use dermaug::rng::RngStream;
use dermaug::{Error, Result};

const TAG_PREVIEW: u64 = 0x40;
const VARIANTS: usize = 7;
const GAP: usize = 2;
const STAGES: [&str; 5] = ["geometric", "hair", "erase", "bc_mix", "full"];

fn partner_for<'a>(data: &'a Dataset, sample: &Sample, rng: &mut RngStream) -> Option<&'a Sample> {
    let class = sample.label?.argmax();
    let others: Vec<&Sample> = data
        .entries()
        .iter()
        .map(|e| &e.sample)
        .filter(|s| s.label.is_some_and(|l| l.argmax() != class))
        .collect();
    if others.is_empty() {
        return None;
    }
    Some(others[rng.int_inclusive(0, others.len() - 1)])
}

fn variant(stage: usize, sample: &Sample, data: &Dataset, rng: &mut RngStream, cfg: &AugConfig) -> Result<Image> {
    // single-stage galleries force their stage on so every cell shows it
    let out = match STAGES[stage] {
        "geometric" => geometric_augment(sample, rng, cfg)?.image,
        "hair" => hair_overlay(&sample.image, rng, &AugConfig { hair_prob: 1.0, ..cfg.clone() }),
        "erase" => random_erase(&sample.image, rng, &AugConfig { erase_prob: 1.0, ..cfg.clone() }),
        "bc_mix" => match partner_for(data, sample, rng) {
            Some(p) => bc_mix(sample, p, rng)?.image,
            None => sample.image.clone(),
        },
        _ => {
            let partner = partner_for(data, sample, rng);
            apply_pipeline(sample, partner, rng, cfg)?.image
        }
    };
    Ok(out)
}

fn tile(cells: &[Vec<Image>], size: usize, scale: usize) -> Image {
    let rows = cells.len();
    let cols = cells.first().map_or(0, Vec::len);
    let cell = size * scale;
    let height = rows * cell + (rows + 1) * GAP;
    let width = cols * cell + (cols + 1) * GAP;
    Image::from_fn(height, width, |y, x| {
        let (r, ry) = ((y.saturating_sub(GAP)) / (cell + GAP), (y.saturating_sub(GAP)) % (cell + GAP));
        let (c, cx) = ((x.saturating_sub(GAP)) / (cell + GAP), (x.saturating_sub(GAP)) % (cell + GAP));
        if y < GAP || x < GAP || ry >= cell || cx >= cell || r >= rows || c >= cols {
            return [1.0; 3];
        }
        cells[r][c].pixel(ry / scale, cx / scale)
    })
}

/// Writes `<stage>.png` for every stage into `dir` and returns the paths.
pub fn write_galleries(data: &Dataset, cfg: &RunConfig, n: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    if data.is_empty() {
        return Err(Error::Data("no labelled images to preview".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })?;
    let size = cfg.aug.crop_size;
    let mut order: Vec<usize> = (0..data.len()).collect();
    RngStream::derive(cfg.seed, &[TAG_PREVIEW]).shuffle(&mut order);
    let sources: Vec<Sample> = order
        .iter()
        .cycle()
        .take(n)
        .map(|&i| {
            let s = &data.entries()[i].sample;
            Ok(Sample {
                image: s.image.center_crop(size, size)?,
                label: s.label,
            })
        })
        .collect::<Result<_>>()?;
    let scale = (96 / size).max(1);
    let mut written = Vec::with_capacity(STAGES.len());
    for (stage, name) in STAGES.iter().enumerate() {
        let cells = sources
            .iter()
            .enumerate()
            .map(|(row, s)| {
                let mut line = vec![s.image.clone()];
                for col in 0..VARIANTS {
                    let mut rng = RngStream::derive(cfg.seed, &[TAG_PREVIEW, stage as u64, row as u64, col as u64]);
                    line.push(variant(stage, s, data, &mut rng, &cfg.aug)?);
                }
                Ok(line)
            })
            .collect::<Result<Vec<_>>>()?;
        let path = dir.join(format!("{name}.png"));
        write_image(&path, &tile(&cells, size, scale))?;
        written.push(path);
    }
    Ok(written)
}
