//! PNG import/export and the rendered figures: weight grids, tuning
//! heatmaps, stimulus grids and activation-maximization images.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use edgelab_core::probe::LayerProbe;
use edgelab_core::{Model, Tensor};

use crate::error::{IoContext, LabError, Result};

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

// 3×5 glyphs for 0-9, one row per byte, bit 2 = leftmost column
const DIGITS: [[u8; 5]; 10] = [
    [7, 5, 5, 5, 7],
    [2, 6, 2, 2, 7],
    [7, 1, 7, 4, 7],
    [7, 1, 7, 1, 7],
    [5, 5, 7, 1, 1],
    [7, 4, 7, 1, 7],
    [7, 4, 7, 5, 7],
    [7, 1, 1, 1, 1],
    [7, 5, 7, 5, 7],
    [7, 5, 7, 1, 7],
];

impl Canvas {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Canvas {
            width,
            height,
            pixels: fill.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        if x < self.width && y < self.height {
            let o = (y * self.width + x) * 3;
            self.pixels[o..o + 3].copy_from_slice(&rgb);
        }
    }

    pub fn fill_rect(&mut self, x: usize, y: usize, w: usize, h: usize, rgb: [u8; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, rgb);
            }
        }
    }

    /// Draws `rgb` (row-major `h×w`) magnified by `scale` at `(x, y)`.
    pub fn blit(&mut self, x: usize, y: usize, w: usize, h: usize, scale: usize, rgb: &[[u8; 3]]) {
        for i in 0..h {
            for j in 0..w {
                self.fill_rect(x + j * scale, y + i * scale, scale, scale, rgb[i * w + j]);
            }
        }
    }

    /// Writes decimal digits with the built-in 3×5 font.
    pub fn number(&mut self, x: usize, y: usize, value: usize, scale: usize, rgb: [u8; 3]) {
        for (n, ch) in value.to_string().bytes().enumerate() {
            let glyph = DIGITS[(ch - b'0') as usize];
            let x0 = x + n * 4 * scale;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        self.fill_rect(x0 + col * scale, y + row * scale, scale, scale, rgb);
                    }
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, &self.pixels)
    }
}

pub fn write_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let (w, h) = (
        u32::try_from(width).map_err(|_| LabError::data("image too wide"))?,
        u32::try_from(height).map_err(|_| LabError::data("image too tall"))?,
    );
    let file = File::create(path).at(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let fail = |e: png::EncodingError| LabError::data(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(rgb).map_err(fail)?;
    writer.finish().map_err(fail)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an `h×w×3` tensor with values in `[0,1]`.
pub fn save_image(path: &Path, image: &Tensor<f32>, scale: usize) -> Result<()> {
    let &[h, w, 3] = image.shape() else {
        return Err(LabError::data("expected an H×W×3 image"));
    };
    let rgb: Vec<[u8; 3]> = image
        .data()
        .chunks(3)
        .map(|p| [to_byte(p[0] as f64), to_byte(p[1] as f64), to_byte(p[2] as f64)])
        .collect();
    let scale = scale.max(1);
    let mut c = Canvas::new(w * scale, h * scale, [0; 3]);
    c.blit(0, 0, w, h, scale, &rgb);
    c.save(path)
}

/// Reads a PNG as an `h×w×3` tensor in `[0,1]`. Gray is replicated to
/// three channels and alpha is dropped.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let file = File::open(path).at(path)?;
    let fail = |e: png::DecodingError| LabError::data(format!("{}: {e}", path.display()));
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(fail)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| LabError::data(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(fail)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(LabError::data(format!("{}: unexpanded palette", path.display()))),
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks(channels) {
            let rgb = if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
            data.extend(rgb.iter().map(|&b| b as f32 / 255.0));
        }
    }
    Ok(Tensor::new(&[h, w, 3], data)?)
}

/// Min-max normalizes one kernel to bytes; a constant kernel maps to mid-gray.
fn normalize(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| if hi > lo { to_byte((v - lo) / (hi - lo)) } else { 128 })
        .collect()
}

/// First-layer kernels tiled 8 per row with their indices underneath.
/// Edge units are gray (their channel weights only scale the response);
/// convolution kernels with three input channels are RGB, others show the
/// channel mean. Each kernel is min-max normalized on its own.
pub fn weight_grid(model: &Model<f32>, layer: usize, scale: usize) -> Result<Canvas> {
    let (kernels, k): (Vec<Vec<[u8; 3]>>, usize) = if let Some(edge) = model.edge_layer(layer) {
        let k = edge.kernel();
        let w = edge.weight.data();
        let tiles = (0..edge.units())
            .map(|u| {
                let vals: Vec<f64> = w[u * k * k..(u + 1) * k * k].iter().map(|&v| v as f64).collect();
                normalize(&vals).into_iter().map(|b| [b; 3]).collect()
            })
            .collect();
        (tiles, k)
    } else if let Some(w) = model.conv_weight(layer) {
        let &[k, _, cin, cout] = w.shape() else {
            return Err(LabError::data("convolution weight must be k×k×in×out"));
        };
        let tiles = (0..cout)
            .map(|o| {
                let at = |i: usize, j: usize, c: usize| w.at(&[i, j, c, o]) as f64;
                if cin == 3 {
                    let vals: Vec<f64> = (0..k * k * 3).map(|n| at(n / (3 * k), (n / 3) % k, n % 3)).collect();
                    normalize(&vals).chunks(3).map(|p| [p[0], p[1], p[2]]).collect()
                } else {
                    let vals: Vec<f64> = (0..k * k)
                        .map(|n| (0..cin).map(|c| at(n / k, n % k, c)).sum::<f64>() / cin as f64)
                        .collect();
                    normalize(&vals).into_iter().map(|b| [b; 3]).collect()
                }
            })
            .collect();
        (tiles, k)
    } else {
        return Err(LabError::config(format!("layer {layer} has no kernels to render")));
    };
    let scale = scale.max(1);
    let cols = 8.min(kernels.len()).max(1);
    let rows = kernels.len().div_ceil(cols);
    let (gap, label) = (4, 5 * 2 + 4);
    let cell_w = (k * scale).max(4 * 2 * 3) + gap;
    let cell_h = k * scale + label + gap;
    let mut c = Canvas::new(cols * cell_w + gap, rows * cell_h + gap, [255; 3]);
    for (n, tile) in kernels.iter().enumerate() {
        let (x, y) = (gap + (n % cols) * cell_w, gap + (n / cols) * cell_h);
        c.blit(x, y, k, k, scale, tile);
        c.number(x, y + k * scale + 2, n, 2, [0; 3]);
    }
    Ok(c)
}

/// Neurons × angles grid of edge-vs-noise accuracy, 0.5 dark to 1.0 bright.
pub fn tuning_heatmap(layer: &LayerProbe, cell: usize) -> Canvas {
    let (rows, cols) = (layer.units, layer.angles.len());
    let mut c = Canvas::new(cols * cell, rows * cell, [0; 3]);
    for a in 0..cols {
        for u in 0..rows {
            let t = ((layer.cell(a, u).accuracy - 0.5) * 2.0).clamp(0.0, 1.0);
            let rgb = [to_byte(t), to_byte(t * t), to_byte(0.4 * (1.0 - t))];
            c.fill_rect(a * cell, u * cell, cell, cell, rgb);
        }
    }
    c
}

/// Patches of an `N×k×k×3` batch tiled `cols` per row.
pub fn patch_grid(pixels: &Tensor<f32>, cols: usize, scale: usize) -> Result<Canvas> {
    let &[n, k, k2, 3] = pixels.shape() else {
        return Err(LabError::data("expected an N×k×k×3 batch"));
    };
    if k != k2 {
        return Err(LabError::data("patches must be square"));
    }
    let (cols, scale, gap) = (cols.max(1).min(n.max(1)), scale.max(1), 2);
    let rows = n.div_ceil(cols);
    let cell = k * scale + gap;
    let mut c = Canvas::new(cols * cell + gap, rows * cell + gap, [255; 3]);
    let stride = k * k * 3;
    for i in 0..n {
        let tile: Vec<[u8; 3]> = pixels.data()[i * stride..(i + 1) * stride]
            .chunks(3)
            .map(|p| [to_byte(p[0] as f64), to_byte(p[1] as f64), to_byte(p[2] as f64)])
            .collect();
        c.blit(gap + (i % cols) * cell, gap + (i / cols) * cell, k, k, scale, &tile);
    }
    Ok(c)
}
