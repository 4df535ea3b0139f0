//! Image I/O, superpixel decomposition and per-superpixel descriptors.
//!
//! Superpixels come from a grid-seeded SLIC-style k-means in
//! `(x, y, colour)` space followed by a connectivity pass. Each superpixel
//! carries an intensity histogram descriptor; adjacent superpixels are
//! joined by an edge whose boundary strength is the clamped mean Sobel
//! magnitude along the shared pixel boundary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

/// Histogram blocks are always laid out for three channels; grey images are
/// replicated so the descriptor dimension does not depend on the input.
pub const FEATURE_CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported magic number {0:?} (expected P5 or P6)")]
    UnsupportedMagic(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid superpixel target {target} for a {width}x{height} image")]
    InvalidTarget {
        target: usize,
        width: usize,
        height: usize,
    },
    #[error("degenerate bounding box {0:?}")]
    DegenerateBox(BoundingBox),
    #[error("malformed superpixel sidecar: {0}")]
    Sidecar(String),
}

/// Row-major image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid("zero-sized image".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Invalid(format!("{channels} channels (expected 1 or 3)")));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::Invalid(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::Invalid(format!("value {v} outside [0,1]")));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Single-channel image filled with `value`.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, 1, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Colour of pixel `(x, y)` expanded to three channels.
    pub fn rgb(&self, x: usize, y: usize) -> [f64; 3] {
        let base = (y * self.width + x) * self.channels;
        if self.channels == 1 {
            let v = self.data[base];
            [v, v, v]
        } else {
            [self.data[base], self.data[base + 1], self.data[base + 2]]
        }
    }

    /// Mean over channels.
    pub fn intensity(&self, x: usize, y: usize) -> f64 {
        let base = (y * self.width + x) * self.channels;
        let px = &self.data[base..base + self.channels];
        px.iter().sum::<f64>() / self.channels as f64
    }

    /// Binary PGM (grey) or PPM (colour) encoding with maxval 255.
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        write_file(path.as_ref(), &self.to_pnm())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ImageError> {
    fs::write(path, bytes).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_pnm(&bytes)
}

/// Decodes a binary PGM (`P5`) or PPM (`P6`) byte stream.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image, ImageError> {
    if bytes.len() < 2 {
        return Err(ImageError::MalformedHeader("file shorter than magic number".into()));
    }
    let magic = String::from_utf8_lossy(&bytes[..2]).into_owned();
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(ImageError::UnsupportedMagic(magic)),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (slot, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        *slot = read_header_uint(bytes, &mut pos).ok_or_else(|| ImageError::MalformedHeader(format!("missing or invalid {name}")))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::MalformedHeader("no whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedHeader("zero dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::MalformedHeader(format!("maxval {maxval} not in 1..=255")));
    }
    let expected = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            found: raster.len(),
        });
    }
    let scale = maxval as f64;
    let data = raster[..expected].iter().map(|&b| (b as f64 / scale).min(1.0)).collect();
    Image::new(width, height, channels, data)
}

fn read_header_uint(bytes: &[u8], pos: &mut usize) -> Option<usize> {
    loop {
        match bytes.get(*pos)? {
            b'#' => {
                while *bytes.get(*pos)? != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}

/// Axis-aligned box in continuous pixel coordinates, covering
/// `[x0, x1) x [y0, y1)`. Pixel `(x, y)` is inside when its centre
/// `(x + 0.5, y + 0.5)` is.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        self.contains_point(x as f64 + 0.5, y as f64 + 0.5)
    }

    /// Box scaled by `factor` about its centre.
    pub fn shrink(&self, factor: f64) -> Self {
        let cx = 0.5 * (self.x0 + self.x1);
        let cy = 0.5 * (self.y0 + self.y1);
        let hw = 0.5 * self.width() * factor;
        let hh = 0.5 * self.height() * factor;
        Self::new(cx - hw, cy - hh, cx + hw, cy + hh)
    }

    pub fn intersection(&self, other: &Self) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Errors unless the box is finite, has positive area and covers at
    /// least one pixel centre of a `width x height` image.
    pub fn validate(&self, width: usize, height: usize) -> Result<(), ImageError> {
        let finite = [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite());
        let covers = |lo: f64, hi: f64, len: usize| {
            // first and last pixel centres inside [lo, hi)
            let first = (lo - 0.5).ceil().max(0.0);
            first < len as f64 && first + 0.5 < hi
        };
        if !finite || self.area() <= 0.0 || !covers(self.x0, self.x1, width) || !covers(self.y0, self.y1, height) {
            return Err(ImageError::DegenerateBox(*self));
        }
        Ok(())
    }
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::DimensionMismatch(format!(
                "mask data length {} != {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Tight bounding box of the set pixels, if any.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
        }
        bb.map(|(x0, y0, x1, y1)| BoundingBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64))
    }

    /// PGM with 0 for background and 255 for foreground.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        write_file(path.as_ref(), &self.to_pgm())
    }

    /// Reads a mask back from a grey image, thresholding at one half.
    pub fn from_image(img: &Image) -> Self {
        let data = (0..img.pixel_count())
            .map(|p| img.intensity(p % img.width(), p / img.width()) >= 0.5)
            .collect();
        Self {
            width: img.width(),
            height: img.height(),
            data,
        }
    }
}

/// Per-pixel superpixel labels; ids are contiguous in `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    labels: Vec<usize>,
    n: usize,
}

impl SuperpixelMap {
    /// Validates that `labels` covers every id in `0..max+1`. Connectivity
    /// is not checked here.
    pub fn from_labels(width: usize, height: usize, labels: Vec<usize>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(ImageError::DimensionMismatch(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        let n = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(ImageError::Invalid(format!("superpixel id {missing} is unused")));
        }
        Ok(Self { width, height, labels, n })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x]
    }

    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.n];
        for &l in &self.labels {
            areas[l] += 1;
        }
        areas
    }

    /// Mean pixel-centre coordinates of each superpixel.
    pub fn centroids(&self) -> Vec<(f64, f64)> {
        let mut sums = vec![(0.0, 0.0, 0usize); self.n];
        for (p, &l) in self.labels.iter().enumerate() {
            let s = &mut sums[l];
            s.0 += (p % self.width) as f64 + 0.5;
            s.1 += (p / self.width) as f64 + 0.5;
            s.2 += 1;
        }
        sums.into_iter().map(|(x, y, c)| (x / c as f64, y / c as f64)).collect()
    }

    /// Fraction of each superpixel's pixels that fall inside `bbox`.
    pub fn fraction_in_box(&self, bbox: &BoundingBox) -> Vec<f64> {
        let mut inside = vec![0usize; self.n];
        for (p, &l) in self.labels.iter().enumerate() {
            if bbox.contains_pixel(p % self.width, p / self.width) {
                inside[l] += 1;
            }
        }
        inside.iter().zip(self.areas()).map(|(&i, a)| i as f64 / a as f64).collect()
    }

    /// Lifts a per-superpixel labeling to the pixel grid.
    pub fn lift(&self, labels: &[bool]) -> Result<PixelMask, ImageError> {
        if labels.len() != self.n {
            return Err(ImageError::DimensionMismatch(format!(
                "{} superpixel labels for a map of {}",
                labels.len(),
                self.n
            )));
        }
        Ok(PixelMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| labels[l]).collect(),
        })
    }

    /// Debug visualisation: label modulo 256 as a PGM.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.labels.iter().map(|&l| (l % 256) as u8));
        out
    }

    /// Exact labels as text: a `n width height` line, then one row of ids
    /// per image row.
    pub fn to_sidecar(&self) -> String {
        let mut out = format!("{} {} {}\n", self.n, self.width, self.height);
        for row in self.labels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(usize::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_sidecar(text: &str) -> Result<Self, ImageError> {
        let mut tokens = text.split_whitespace().map(|t| t.parse::<usize>().map_err(|_| ImageError::Sidecar(format!("bad token {t:?}"))));
        let mut next = |what: &str| tokens.next().unwrap_or_else(|| Err(ImageError::Sidecar(format!("missing {what}"))));
        let n = next("count")?;
        let width = next("width")?;
        let height = next("height")?;
        let labels = (0..width * height).map(|_| next("label")).collect::<Result<Vec<_>, _>>()?;
        let map = Self::from_labels(width, height, labels)?;
        if map.n != n {
            return Err(ImageError::Sidecar(format!("header says {n} superpixels, labels use {}", map.n)));
        }
        Ok(map)
    }
}

/// Tuning knobs of the SLIC-style decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    /// Weight of spatial distance relative to colour distance. Colours are
    /// in `[0, 1]`, so this is on the same scale.
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            compactness: 0.2,
            iterations: 10,
        }
    }
}

pub fn compute_superpixels(img: &Image, target_count: usize) -> Result<SuperpixelMap, ImageError> {
    compute_superpixels_with(img, target_count, &SlicParams::default())
}

#[derive(Clone, Copy)]
struct Cluster {
    x: f64,
    y: f64,
    color: [f64; 3],
}

/// Grid-seeded k-means over `(x, y, r, g, b)` with a local search window,
/// followed by connectivity enforcement. The result has between 1 and
/// `4 * target_count` superpixels, each 4-connected.
pub fn compute_superpixels_with(img: &Image, target_count: usize, params: &SlicParams) -> Result<SuperpixelMap, ImageError> {
    let (w, h) = (img.width(), img.height());
    let npix = w * h;
    if target_count == 0 || target_count > npix {
        return Err(ImageError::InvalidTarget {
            target: target_count,
            width: w,
            height: h,
        });
    }
    let (nx, ny) = seed_grid(w, h, target_count);
    let step = ((npix as f64) / (target_count as f64)).sqrt();
    let cell_w = w as f64 / nx as f64;
    let cell_h = h as f64 / ny as f64;

    let mut clusters: Vec<Cluster> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = (i as f64 + 0.5) * cell_w - 0.5;
            let y = (j as f64 + 0.5) * cell_h - 0.5;
            let px = (x.round() as usize).min(w - 1);
            let py = (y.round() as usize).min(h - 1);
            clusters.push(Cluster { x, y, color: img.rgb(px, py) });
        }
    }

    // Start from the grid cells so pixels the windows never reach still
    // carry a sensible label.
    let mut labels: Vec<usize> = (0..npix)
        .map(|p| {
            let i = (((p % w) * nx) / w).min(nx - 1);
            let j = (((p / w) * ny) / h).min(ny - 1);
            j * nx + i
        })
        .collect();
    let spatial = (params.compactness / step).powi(2);
    let radius_x = cell_w.ceil() as isize;
    let radius_y = cell_h.ceil() as isize;
    let mut dist = vec![f64::INFINITY; npix];

    for _ in 0..params.iterations {
        dist.fill(f64::INFINITY);
        for (k, c) in clusters.iter().enumerate() {
            let cx = c.x.round() as isize;
            let cy = c.y.round() as isize;
            let xs = (cx - radius_x).max(0) as usize..=((cx + radius_x).min(w as isize - 1)) as usize;
            for y in (cy - radius_y).max(0) as usize..=((cy + radius_y).min(h as isize - 1)) as usize {
                for x in xs.clone() {
                    let rgb = img.rgb(x, y);
                    let dc: f64 = rgb.iter().zip(c.color).map(|(a, b)| (a - b) * (a - b)).sum();
                    let ds = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                    let d = dc + spatial * ds;
                    let p = y * w + x;
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = k;
                    }
                }
            }
        }
        let mut acc = vec![(0.0, 0.0, [0.0; 3], 0usize); clusters.len()];
        for (p, &k) in labels.iter().enumerate() {
            let (x, y) = (p % w, p / w);
            let a = &mut acc[k];
            a.0 += x as f64;
            a.1 += y as f64;
            for (s, v) in a.2.iter_mut().zip(img.rgb(x, y)) {
                *s += v;
            }
            a.3 += 1;
        }
        for (c, (sx, sy, sc, cnt)) in clusters.iter_mut().zip(acc) {
            if cnt > 0 {
                let n = cnt as f64;
                c.x = sx / n;
                c.y = sy / n;
                c.color = sc.map(|v| v / n);
            }
        }
    }

    let min_size = npix.div_ceil(4 * target_count);
    let labels = enforce_connectivity(w, h, &labels, min_size);
    SuperpixelMap::from_labels(w, h, labels)
}

/// Seed grid with `nx * ny <= target` cells of roughly square shape.
fn seed_grid(w: usize, h: usize, target: usize) -> (usize, usize) {
    let step = ((w * h) as f64 / target as f64).sqrt();
    let mut nx = ((w as f64 / step).round() as usize).clamp(1, w);
    let mut ny = ((h as f64 / step).round() as usize).clamp(1, h);
    while nx * ny > target {
        // drop a column or row from whichever direction has the smaller cells
        if (nx > 1 && w as f64 / nx as f64 <= h as f64 / ny as f64) || ny == 1 {
            nx -= 1;
        } else {
            ny -= 1;
        }
    }
    (nx, ny)
}

/// Splits labels into 4-connected components, then folds every component
/// smaller than `min_size` into the neighbour it shares the longest
/// boundary with. Returned ids are contiguous and ordered by first pixel
/// in scan order.
fn enforce_connectivity(w: usize, h: usize, labels: &[usize], min_size: usize) -> Vec<usize> {
    let npix = w * h;
    let mut comp = vec![usize::MAX; npix];
    let mut sizes: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..npix {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let label = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            for q in neighbours4(p, w, h) {
                if comp[q] == usize::MAX && labels[q] == label {
                    comp[q] = id;
                    stack.push(q);
                }
            }
        }
        sizes.push(size);
    }

    let ncomp = sizes.len();
    let mut adjacency: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); ncomp];
    for p in 0..npix {
        let (x, y) = (p % w, p / w);
        for q in [(x + 1 < w).then(|| p + 1), (y + 1 < h).then(|| p + w)].into_iter().flatten() {
            let (a, b) = (comp[p], comp[q]);
            if a != b {
                *adjacency[a].entry(b).or_default() += 1;
                *adjacency[b].entry(a).or_default() += 1;
            }
        }
    }

    let mut parent: Vec<usize> = (0..ncomp).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for c in 0..ncomp {
        if parent[c] != c || sizes[c] >= min_size {
            continue;
        }
        // neighbour roots weighted by shared boundary length
        let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
        for (&nb, &len) in &adjacency[c] {
            let r = find(&mut parent, nb);
            if r != c {
                *shared.entry(r).or_default() += len;
            }
        }
        let Some((&target, _)) = shared.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else {
            continue;
        };
        parent[c] = target;
        sizes[target] += sizes[c];
        let moved = std::mem::take(&mut adjacency[c]);
        for (nb, len) in moved {
            *adjacency[target].entry(nb).or_default() += len;
        }
    }

    let mut remap = vec![usize::MAX; ncomp];
    let mut next = 0;
    comp.iter()
        .map(|&c| {
            let r = find(&mut parent, c);
            if remap[r] == usize::MAX {
                remap[r] = next;
                next += 1;
            }
            remap[r]
        })
        .collect()
}

fn neighbours4(p: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (p % w, p / w);
    [
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
        (y > 0).then(|| p - w),
        (y + 1 < h).then(|| p + w),
    ]
    .into_iter()
    .flatten()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub bins_per_channel: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { bins_per_channel: 8 }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        self.bins_per_channel * FEATURE_CHANNELS
    }
}

/// Superpixel adjacency graph with per-node descriptors: the domain of the
/// binary MRF.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelGraph {
    pub features: Vec<Vec<f64>>,
    /// Unordered adjacent pairs stored as `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Boundary strength in `[0, 1]` for each entry of `edges`.
    pub boundary_prob: Vec<f64>,
    pub areas: Vec<usize>,
    pub centroids: Vec<(f64, f64)>,
}

impl SuperpixelGraph {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

pub fn extract_features(img: &Image, sp: &SuperpixelMap) -> Result<SuperpixelGraph, ImageError> {
    extract_features_with(img, sp, &FeatureConfig::default())
}

pub fn extract_features_with(img: &Image, sp: &SuperpixelMap, cfg: &FeatureConfig) -> Result<SuperpixelGraph, ImageError> {
    let (w, h) = (img.width(), img.height());
    if sp.width() != w || sp.height() != h {
        return Err(ImageError::DimensionMismatch(format!(
            "{}x{} superpixel map for a {w}x{h} image",
            sp.width(),
            sp.height()
        )));
    }
    if cfg.bins_per_channel == 0 {
        return Err(ImageError::Invalid("zero histogram bins".into()));
    }
    let n = sp.len();
    let bins = cfg.bins_per_channel;
    let mut features = vec![vec![0.0; cfg.dim()]; n];
    for y in 0..h {
        for x in 0..w {
            let hist = &mut features[sp.label(x, y)];
            for (c, v) in img.rgb(x, y).into_iter().enumerate() {
                hist[c * bins + histogram_bin(v, bins)] += 1.0;
            }
        }
    }
    for hist in &mut features {
        normalize_blocks(hist, bins);
    }

    let grad = sobel_magnitude(img);
    let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for p in 0..w * h {
        let (x, y) = (p % w, p / w);
        for q in [(x + 1 < w).then(|| p + 1), (y + 1 < h).then(|| p + w)].into_iter().flatten() {
            let (a, b) = (sp.labels()[p], sp.labels()[q]);
            if a != b {
                let e = sums.entry((a.min(b), a.max(b))).or_default();
                e.0 += 0.5 * (grad[p] + grad[q]);
                e.1 += 1;
            }
        }
    }
    let (edges, boundary_prob) = sums.into_iter().map(|(e, (s, c))| (e, (s / c as f64).clamp(0.0, 1.0))).unzip();

    Ok(SuperpixelGraph {
        features,
        edges,
        boundary_prob,
        areas: sp.areas(),
        centroids: sp.centroids(),
    })
}

pub(crate) fn histogram_bin(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

/// L1-normalises each consecutive block of `block` entries; all-zero
/// blocks are left as zeros.
pub(crate) fn normalize_blocks(v: &mut [f64], block: usize) {
    for chunk in v.chunks_mut(block) {
        let s: f64 = chunk.iter().sum();
        if s > 0.0 {
            chunk.iter_mut().for_each(|x| *x /= s);
        }
    }
}

/// Unnormalised 3x3 Sobel gradient magnitude of the channel-mean
/// intensity, with replicated borders.
pub fn sobel_magnitude(img: &Image) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let intensity: Vec<f64> = (0..w * h).map(|p| img.intensity(p % w, p / w)).collect();
    let at = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        intensity[yc * w + xc]
    };
    (0..w * h)
        .map(|p| {
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)) - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)) - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            (gx * gx + gy * gy).sqrt()
        })
        .collect()
}
